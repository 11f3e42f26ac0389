#include "fedlab/eval.hpp"

#include <stdexcept>
#include <string>

namespace fedlab::eval {

numcore::Batch make_batch(const datagen::Dataset& data, const std::vector<int>& rows) {
    if (rows.empty())
        throw std::invalid_argument("make_batch: empty row list");
    numcore::Batch b;
    b.rows = (int)rows.size();
    b.input_dim = data.input_dim;
    b.inputs.reserve((std::size_t)b.rows * b.input_dim);
    b.labels.reserve(b.rows);
    for (int r : rows) {
        if (r < 0 || r >= data.size())
            throw std::invalid_argument("make_batch: row " + std::to_string(r) +
                                        " out of range");
        auto begin = data.inputs.begin() + (std::size_t)r * data.input_dim;
        b.inputs.insert(b.inputs.end(), begin, begin + data.input_dim);
        b.labels.push_back(data.labels[r]);
    }
    return b;
}

numcore::Batch full_batch(const datagen::Dataset& data) {
    if (data.size() == 0)
        throw std::invalid_argument("full_batch: empty dataset");
    numcore::Batch b;
    b.rows = data.size();
    b.input_dim = data.input_dim;
    b.inputs = data.inputs;
    b.labels = data.labels;
    return b;
}

datagen::Dataset subset(const datagen::Dataset& data, const std::vector<int>& rows) {
    datagen::Dataset out;
    out.input_dim = data.input_dim;
    out.num_classes = data.num_classes;
    for (int r : rows) {
        if (r < 0 || r >= data.size())
            throw std::invalid_argument("subset: row " + std::to_string(r) +
                                        " out of range");
        auto begin = data.inputs.begin() + (std::size_t)r * data.input_dim;
        out.inputs.insert(out.inputs.end(), begin, begin + data.input_dim);
        out.labels.push_back(data.labels[r]);
    }
    return out;
}

EvalResult evaluate(const ParamVector& w, const numcore::ModelArch& arch,
                    const datagen::Dataset& data) {
    numcore::Batch b = full_batch(data);
    auto fwd = numcore::forward_loss(w, arch, b);
    int correct = 0;
    int K = arch.num_classes;
    for (int r = 0; r < b.rows; ++r) {
        const double* zr = fwd.scores.data() + (std::size_t)r * K;
        int best = 0;
        for (int j = 1; j < K; ++j)
            if (zr[j] > zr[best]) best = j;
        if (best == b.labels[r]) ++correct;
    }
    return {fwd.loss, (double)correct / b.rows};
}

} // namespace fedlab::eval
