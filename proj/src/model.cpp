#include "fedlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedlab/rng.hpp"

namespace fedlab::numcore {

std::vector<int> ModelArch::layer_sizes() const {
    std::vector<int> s;
    s.push_back(input_dim);
    for (int h : hidden_dims) s.push_back(h);
    s.push_back(num_classes);
    return s;
}

int ModelArch::param_count() const {
    auto s = layer_sizes();
    int d = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l)
        d += s[l] * s[l + 1] + s[l + 1];
    return d;
}

void ModelArch::validate() const {
    if (input_dim < 1)
        throw ConfigError("arch.input_dim must be >= 1 (got " +
                          std::to_string(input_dim) + ")");
    if (num_classes < 2)
        throw ConfigError("arch.num_classes must be >= 2 (got " +
                          std::to_string(num_classes) + ")");
    for (int h : hidden_dims)
        if (h < 1)
            throw ConfigError("arch.hidden dims must be >= 1 (got " +
                              std::to_string(h) + ")");
}

namespace {

void check_inputs(const ParamVector& w, const ModelArch& arch, const Batch& batch) {
    arch.validate();
    if ((int)w.size() != arch.param_count())
        throw std::invalid_argument("parameter vector has " +
                                    std::to_string(w.size()) + " entries, arch needs " +
                                    std::to_string(arch.param_count()));
    if (batch.rows < 1)
        throw std::invalid_argument("batch must contain at least one sample");
    if (batch.input_dim != arch.input_dim)
        throw std::invalid_argument("batch input_dim " + std::to_string(batch.input_dim) +
                                    " does not match arch.input_dim " +
                                    std::to_string(arch.input_dim));
    if ((int)batch.inputs.size() != batch.rows * batch.input_dim ||
        (int)batch.labels.size() != batch.rows)
        throw std::invalid_argument("batch storage does not match its declared shape");
    for (int y : batch.labels)
        if (y < 0 || y >= arch.num_classes)
            throw std::invalid_argument("label " + std::to_string(y) +
                                        " outside [0, " +
                                        std::to_string(arch.num_classes) + ")");
}

inline double act(double z, Activation a) {
    return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the activation value where possible; for relu
// the kink at exactly zero takes the subgradient 0.
inline double act_deriv(double z, Activation a) {
    if (a == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    double t = std::tanh(z);
    return 1.0 - t * t;
}

// Shared forward pass. Fills pre-activations z[l] and activations a[l]
// (a[0] aliases the batch inputs conceptually but is stored by value for
// uniform indexing). Returns mean cross-entropy.
struct ForwardTrace {
    std::vector<std::vector<double>> a; // a[l]: rows x s[l]
    std::vector<std::vector<double>> z; // z[l]: rows x s[l+1]
    double loss = 0.0;
};

ForwardTrace run_forward(const ParamVector& w, const ModelArch& arch,
                         const Batch& batch) {
    auto s = arch.layer_sizes();
    int L = (int)s.size() - 1;
    int rows = batch.rows;

    ForwardTrace tr;
    tr.a.resize(L + 1);
    tr.z.resize(L);
    tr.a[0] = batch.inputs;

    int off = 0;
    for (int l = 0; l < L; ++l) {
        int in = s[l], out = s[l + 1];
        const double* W = w.data() + off;
        const double* b = w.data() + off + in * out;
        tr.z[l].assign((std::size_t)rows * out, 0.0);
        for (int r = 0; r < rows; ++r) {
            const double* x = tr.a[l].data() + (std::size_t)r * in;
            double* zr = tr.z[l].data() + (std::size_t)r * out;
            for (int j = 0; j < out; ++j) {
                const double* Wj = W + (std::size_t)j * in;
                double acc = b[j];
                for (int i = 0; i < in; ++i) acc += Wj[i] * x[i];
                zr[j] = acc;
            }
        }
        if (l < L - 1) {
            tr.a[l + 1].resize((std::size_t)rows * out);
            for (std::size_t i = 0; i < tr.z[l].size(); ++i)
                tr.a[l + 1][i] = act(tr.z[l][i], arch.activation);
        }
        off += in * out + out;
    }

    // Mean cross-entropy with the usual max subtraction for stability.
    int K = arch.num_classes;
    double total = 0.0;
    const auto& logits = tr.z[L - 1];
    for (int r = 0; r < rows; ++r) {
        const double* zr = logits.data() + (std::size_t)r * K;
        double m = zr[0];
        for (int j = 1; j < K; ++j) m = std::max(m, zr[j]);
        double sum = 0.0;
        for (int j = 0; j < K; ++j) sum += std::exp(zr[j] - m);
        double lse = m + std::log(sum);
        total += lse - zr[batch.labels[r]];
    }
    tr.loss = total / rows;
    return tr;
}

} // namespace

ForwardResult forward_loss(const ParamVector& w, const ModelArch& arch,
                           const Batch& batch) {
    check_inputs(w, arch, batch);
    ForwardTrace tr = run_forward(w, arch, batch);
    ForwardResult res;
    res.loss = tr.loss;
    res.scores = std::move(tr.z.back());
    return res;
}

ParamVector backward(const ParamVector& w, const ModelArch& arch,
                     const Batch& batch, double* loss_out) {
    check_inputs(w, arch, batch);
    auto s = arch.layer_sizes();
    int L = (int)s.size() - 1;
    int rows = batch.rows;
    int K = arch.num_classes;

    ForwardTrace tr = run_forward(w, arch, batch);
    if (loss_out) *loss_out = tr.loss;

    ParamVector grad(w.size(), 0.0);

    // Output delta: (softmax - onehot) / rows.
    std::vector<double> delta((std::size_t)rows * K);
    const auto& logits = tr.z[L - 1];
    for (int r = 0; r < rows; ++r) {
        const double* zr = logits.data() + (std::size_t)r * K;
        double m = zr[0];
        for (int j = 1; j < K; ++j) m = std::max(m, zr[j]);
        double sum = 0.0;
        for (int j = 0; j < K; ++j) sum += std::exp(zr[j] - m);
        double* dr = delta.data() + (std::size_t)r * K;
        for (int j = 0; j < K; ++j)
            dr[j] = std::exp(zr[j] - m) / sum;
        dr[batch.labels[r]] -= 1.0;
        for (int j = 0; j < K; ++j) dr[j] /= rows;
    }

    // Layer offsets in the flat layout.
    std::vector<int> offs(L);
    int off = 0;
    for (int l = 0; l < L; ++l) {
        offs[l] = off;
        off += s[l] * s[l + 1] + s[l + 1];
    }

    for (int l = L - 1; l >= 0; --l) {
        int in = s[l], out = s[l + 1];
        const double* W = w.data() + offs[l];
        double* gW = grad.data() + offs[l];
        double* gb = grad.data() + offs[l] + in * out;

        std::vector<double> delta_prev;
        if (l > 0) delta_prev.assign((std::size_t)rows * in, 0.0);

        for (int r = 0; r < rows; ++r) {
            const double* ar = tr.a[l].data() + (std::size_t)r * in;
            const double* dr = delta.data() + (std::size_t)r * out;
            for (int j = 0; j < out; ++j) {
                double d = dr[j];
                if (d == 0.0) continue;
                double* gWj = gW + (std::size_t)j * in;
                for (int i = 0; i < in; ++i) gWj[i] += d * ar[i];
                gb[j] += d;
            }
            if (l > 0) {
                double* dp = delta_prev.data() + (std::size_t)r * in;
                const double* zprev = tr.z[l - 1].data() + (std::size_t)r * in;
                for (int j = 0; j < out; ++j) {
                    double d = dr[j];
                    if (d == 0.0) continue;
                    const double* Wj = W + (std::size_t)j * in;
                    for (int i = 0; i < in; ++i) dp[i] += Wj[i] * d;
                }
                for (int i = 0; i < in; ++i)
                    dp[i] *= act_deriv(zprev[i], arch.activation);
            }
        }
        delta = std::move(delta_prev);
    }
    return grad;
}

ParamVector hvp(const ParamVector& w, const ModelArch& arch, const Batch& batch,
                const ParamVector& v, double h) {
    check_inputs(w, arch, batch);
    double nv = vec::norm(v);
    if (nv < 1e-12)
        throw std::invalid_argument("hvp: direction v must be nonzero");
    double step = h > 0.0 ? h : 1e-3 * (1.0 + vec::norm(w));

    ParamVector wp = w, wm = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double d = step * v[i] / nv;
        wp[i] += d;
        wm[i] -= d;
    }
    ParamVector gp = backward(wp, arch, batch);
    ParamVector gm = backward(wm, arch, batch);

    // (grad(w + h vhat) - grad(w - h vhat)) / (2h), rescaled back to ||v||.
    ParamVector out(w.size());
    double c = nv / (2.0 * step);
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = c * (gp[i] - gm[i]);
    return out;
}

ParamVector flatten(const std::vector<LayerWeights>& layers) {
    ParamVector w;
    for (const auto& lw : layers) {
        if ((int)lw.W.size() != lw.in * lw.out || (int)lw.b.size() != lw.out)
            throw std::invalid_argument("layer storage does not match declared in/out");
        w.insert(w.end(), lw.W.begin(), lw.W.end());
        w.insert(w.end(), lw.b.begin(), lw.b.end());
    }
    return w;
}

std::vector<LayerWeights> unflatten(const ParamVector& w, const ModelArch& arch) {
    arch.validate();
    if ((int)w.size() != arch.param_count())
        throw std::invalid_argument("unflatten: size " + std::to_string(w.size()) +
                                    " does not match arch.param_count " +
                                    std::to_string(arch.param_count()));
    auto s = arch.layer_sizes();
    std::vector<LayerWeights> layers;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) {
        LayerWeights lw;
        lw.in = s[l];
        lw.out = s[l + 1];
        lw.W.assign(w.begin() + off, w.begin() + off + (std::size_t)lw.in * lw.out);
        off += (std::size_t)lw.in * lw.out;
        lw.b.assign(w.begin() + off, w.begin() + off + lw.out);
        off += lw.out;
        layers.push_back(std::move(lw));
    }
    return layers;
}

std::vector<std::pair<int, int>> layer_segments(const ModelArch& arch) {
    auto s = arch.layer_sizes();
    std::vector<std::pair<int, int>> segs;
    int off = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) {
        int len = s[l] * s[l + 1] + s[l + 1];
        segs.emplace_back(off, len);
        off += len;
    }
    return segs;
}

ParamVector init_weights(const ModelArch& arch, std::uint64_t seed) {
    arch.validate();
    auto s = arch.layer_sizes();
    auto g = rng::engine(seed);
    ParamVector w;
    w.reserve(arch.param_count());
    for (std::size_t l = 0; l + 1 < s.size(); ++l) {
        int in = s[l], out = s[l + 1];
        double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (int i = 0; i < in * out; ++i) w.push_back(u(g));
        for (int j = 0; j < out; ++j) w.push_back(0.0);
    }
    return w;
}

} // namespace fedlab::numcore
