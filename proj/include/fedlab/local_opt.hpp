#pragma once

#include <cstdint>
#include <vector>

#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

namespace fedlab::localopt {

struct LocalHyper {
    double eta = 0.01;         // client learning rate
    double rho_l = 0.0;        // client-side SAM radius
    double mu = 0.0;           // FedProx proximal weight
    double beta = 10.0;        // ADMM penalty parameter
    double weight_decay = 0.0;
    double momentum = 0.0;
    int epochs = 1;
    int batch_size = 0;        // 0 means full batch

    void validate() const;
};

enum class BaseRule { sgd, sam };
enum class Correction { none, prox, admm };

struct Mode {
    BaseRule base = BaseRule::sgd;
    Correction correction = Correction::none;
};

// rho * g / ||g||, or the zero vector when ||g|| < 1e-12.
ParamVector sam_perturbation(const ParamVector& g, double rho);

// One descent step in place: g' = g + weight_decay * w, buf = momentum * buf
// + g', w -= eta * buf. Weight decay is applied here and only here, so SAM's
// ascent direction stays decay-free.
void sgd_step(ParamVector& w, const ParamVector& g, double eta,
              double weight_decay, double momentum, ParamVector& buf);

ParamVector fedprox_correction(const ParamVector& g, const ParamVector& w,
                               const ParamVector& w_global, double mu);

ParamVector admm_local_correction(const ParamVector& g, const ParamVector& w,
                                  const ParamVector& w0,
                                  const ParamVector& sigma_k, double beta);

struct TrainResult {
    ParamVector w;
    int grad_evals = 0;      // backward passes consumed
    int steps = 0;           // descent steps taken
    double mean_step_loss = 0.0;
};

// Local training: epochs x mini-batch sweep starting from w_start (the model
// the server broadcast this round). The momentum buffer starts at zero every
// call. In admm mode sigma_k is the client's persistent dual, updated in
// place once after the last epoch as sigma_k -= (w_end - w_start) / beta; it
// may be null for the other modes.
TrainResult client_train(const ParamVector& w_start, const numcore::ModelArch& arch,
                         const datagen::Dataset& data, const std::vector<int>& shard,
                         const LocalHyper& hp, Mode mode, ParamVector* sigma_k,
                         std::uint64_t shuffle_seed);

} // namespace fedlab::localopt
