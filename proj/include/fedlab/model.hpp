#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedlab/errors.hpp"
#include "fedlab/vec.hpp"

namespace fedlab::numcore {

enum class Activation { relu, tanh };

// Fully connected classifier: input_dim -> hidden_dims... -> num_classes,
// linear output layer, softmax cross-entropy loss. All math is double
// precision end to end.
struct ModelArch {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 0;
    Activation activation = Activation::relu;

    std::vector<int> layer_sizes() const;
    int param_count() const;
    void validate() const;
};

// Dense row-major mini-batch. Owns its storage so gathered batches can be
// handed between threads without aliasing the dataset.
struct Batch {
    std::vector<double> inputs; // rows x input_dim
    std::vector<int> labels;    // rows
    int rows = 0;
    int input_dim = 0;
};

struct LayerWeights {
    std::vector<double> W; // out x in, row-major
    std::vector<double> b; // out
    int in = 0;
    int out = 0;
};

struct ForwardResult {
    double loss = 0.0;
    std::vector<double> scores; // rows x num_classes logits
};

// Mean cross-entropy over the batch plus per-sample logits.
ForwardResult forward_loss(const ParamVector& w, const ModelArch& arch,
                           const Batch& batch);

// Exact gradient of forward_loss via backprop. Optionally reports the loss
// of the same pass so training loops do not pay for a second forward.
ParamVector backward(const ParamVector& w, const ModelArch& arch,
                     const Batch& batch, double* loss_out = nullptr);

// Hessian-vector product by central differences of backward passes.
// h <= 0 selects the default step 1e-3 * (1 + ||w||). Zero v is rejected.
ParamVector hvp(const ParamVector& w, const ModelArch& arch, const Batch& batch,
                const ParamVector& v, double h = 0.0);

// Canonical flat layout: per layer, weight matrix row-major then bias.
ParamVector flatten(const std::vector<LayerWeights>& layers);
std::vector<LayerWeights> unflatten(const ParamVector& w, const ModelArch& arch);

// (offset, length) of each layer block in the flat layout, used by the
// landscape direction normalization.
std::vector<std::pair<int, int>> layer_segments(const ModelArch& arch);

// Glorot-uniform weights, zero biases, fully determined by the seed.
ParamVector init_weights(const ModelArch& arch, std::uint64_t seed);

} // namespace fedlab::numcore
