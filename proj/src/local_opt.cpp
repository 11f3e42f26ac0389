#include "fedlab/local_opt.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "fedlab/eval.hpp"
#include "fedlab/rng.hpp"

namespace fedlab::localopt {

void LocalHyper::validate() const {
    if (eta <= 0.0) throw ConfigError("local.eta must be > 0");
    if (rho_l < 0.0) throw ConfigError("local.rho_l must be >= 0");
    if (mu < 0.0) throw ConfigError("local.mu must be >= 0");
    if (beta <= 0.0) throw ConfigError("local.beta must be > 0");
    if (weight_decay < 0.0) throw ConfigError("local.weight_decay must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("local.momentum must be in [0, 1)");
    if (epochs < 1) throw ConfigError("local.epochs must be >= 1");
    if (batch_size < 0) throw ConfigError("local.batch_size must be >= 0");
}

ParamVector sam_perturbation(const ParamVector& g, double rho) {
    double n = vec::norm(g);
    if (n < 1e-12) return vec::zeros(g.size());
    return vec::scale(g, rho / n);
}

void sgd_step(ParamVector& w, const ParamVector& g, double eta,
              double weight_decay, double momentum, ParamVector& buf) {
    vec::check_same_size(w, g);
    if (buf.size() != w.size()) buf.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i] + weight_decay * w[i];
        buf[i] = momentum * buf[i] + gi;
        w[i] -= eta * buf[i];
    }
}

ParamVector fedprox_correction(const ParamVector& g, const ParamVector& w,
                               const ParamVector& w_global, double mu) {
    vec::check_same_size(w, w_global);
    ParamVector r = g;
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] += mu * (w[i] - w_global[i]);
    return r;
}

ParamVector admm_local_correction(const ParamVector& g, const ParamVector& w,
                                  const ParamVector& w0,
                                  const ParamVector& sigma_k, double beta) {
    vec::check_same_size(w, w0);
    vec::check_same_size(w, sigma_k);
    ParamVector r = g;
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] += -sigma_k[i] + (w[i] - w0[i]) / beta;
    return r;
}

TrainResult client_train(const ParamVector& w_start, const numcore::ModelArch& arch,
                         const datagen::Dataset& data, const std::vector<int>& shard,
                         const LocalHyper& hp, Mode mode, ParamVector* sigma_k,
                         std::uint64_t shuffle_seed) {
    hp.validate();
    if (shard.empty())
        throw std::invalid_argument("client_train: empty shard");
    if (mode.correction == Correction::admm && sigma_k == nullptr)
        throw std::invalid_argument("client_train: admm mode needs a dual vector");
    if (sigma_k && sigma_k->empty()) sigma_k->assign(w_start.size(), 0.0);
    if (sigma_k && sigma_k->size() != w_start.size())
        throw std::invalid_argument("client_train: sigma_k size mismatch");

    int n = (int)shard.size();
    int bs = hp.batch_size <= 0 ? n : std::min(hp.batch_size, n);

    TrainResult res;
    res.w = w_start;
    ParamVector buf; // momentum buffer, reset each round by construction

    auto g = rng::engine(shuffle_seed);
    std::vector<int> order(shard);
    double loss_sum = 0.0;

    for (int e = 0; e < hp.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), g);
        for (int pos = 0; pos < n; pos += bs) {
            int take = std::min(bs, n - pos);
            std::vector<int> rows(order.begin() + pos, order.begin() + pos + take);
            numcore::Batch batch = eval::make_batch(data, rows);

            double loss = 0.0;
            ParamVector grad;
            if (mode.base == BaseRule::sam) {
                // Ascend along the batch gradient, then take the descent
                // gradient at the perturbed point. Two backward passes.
                ParamVector g1 = numcore::backward(res.w, arch, batch, &loss);
                ParamVector eps = sam_perturbation(g1, hp.rho_l);
                ParamVector w_adv = vec::add(res.w, eps);
                grad = numcore::backward(w_adv, arch, batch);
                res.grad_evals += 2;
            } else {
                grad = numcore::backward(res.w, arch, batch, &loss);
                res.grad_evals += 1;
            }

            if (mode.correction == Correction::prox)
                grad = fedprox_correction(grad, res.w, w_start, hp.mu);
            else if (mode.correction == Correction::admm)
                grad = admm_local_correction(grad, res.w, w_start, *sigma_k,
                                             hp.beta);

            sgd_step(res.w, grad, hp.eta, hp.weight_decay, hp.momentum, buf);
            loss_sum += loss;
            ++res.steps;
        }
    }

    if (mode.correction == Correction::admm) {
        for (std::size_t i = 0; i < res.w.size(); ++i)
            (*sigma_k)[i] -= (res.w[i] - w_start[i]) / hp.beta;
    }

    res.mean_step_loss = res.steps > 0 ? loss_sum / res.steps : 0.0;
    return res;
}

} // namespace fedlab::localopt
