#pragma once

#include <vector>

#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

namespace fedlab::eval {

// Gather the given rows of a dataset into an owned batch.
numcore::Batch make_batch(const datagen::Dataset& data, const std::vector<int>& rows);
numcore::Batch full_batch(const datagen::Dataset& data);

// Copy a shard out as a standalone dataset (per-client flatness reports).
datagen::Dataset subset(const datagen::Dataset& data, const std::vector<int>& rows);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0; // fraction in [0, 1]
};

// Loss and argmax accuracy of w over the whole dataset. Argmax ties resolve
// to the lowest class index.
EvalResult evaluate(const ParamVector& w, const numcore::ModelArch& arch,
                    const datagen::Dataset& data);

} // namespace fedlab::eval
