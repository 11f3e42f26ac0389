#include "fedlab/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "fedlab/eval.hpp"
#include "fedlab/flatness.hpp"
#include "fedlab/rng.hpp"

namespace fedlab::federation {

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::fedavg: return "fedavg";
        case StrategyKind::fedprox: return "fedprox";
        case StrategyKind::fedsam: return "fedsam";
        case StrategyKind::feddyn: return "feddyn";
        case StrategyKind::feddyn_sam: return "feddyn_sam";
        case StrategyKind::naive_fedgloss: return "naive_fedgloss";
        case StrategyKind::fedgloss: return "fedgloss";
    }
    return "unknown";
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "fedavg") return StrategyKind::fedavg;
    if (s == "fedprox") return StrategyKind::fedprox;
    if (s == "fedsam") return StrategyKind::fedsam;
    if (s == "feddyn") return StrategyKind::feddyn;
    if (s == "feddyn_sam") return StrategyKind::feddyn_sam;
    if (s == "naive_fedgloss") return StrategyKind::naive_fedgloss;
    if (s == "fedgloss") return StrategyKind::fedgloss;
    throw ConfigError("unknown strategy kind '" + s + "'");
}

double RhoSchedule::at(int t) const {
    if (warmup <= 0 || t >= warmup) return target;
    return rho0 + (target - rho0) * (double)t / (double)warmup;
}

void StrategyConfig::validate() const {
    if (clients_per_round < 1)
        throw ConfigError("strategy.clients_per_round must be >= 1");
    if (eta_s <= 0.0) throw ConfigError("strategy.eta_s must be > 0");
    if (beta <= 0.0) throw ConfigError("strategy.beta must be > 0");
    if (rho.target < 0.0 || rho.rho0 < 0.0)
        throw ConfigError("strategy rho values must be >= 0");
    if (rho.warmup < 0) throw ConfigError("strategy.warmup_rounds must be >= 0");
}

localopt::Mode local_mode(const StrategyConfig& sc) {
    using localopt::BaseRule;
    using localopt::Correction;
    switch (sc.kind) {
        case StrategyKind::fedavg: return {BaseRule::sgd, Correction::none};
        case StrategyKind::fedprox: return {BaseRule::sgd, Correction::prox};
        case StrategyKind::fedsam: return {BaseRule::sam, Correction::none};
        case StrategyKind::feddyn: return {BaseRule::sgd, Correction::admm};
        case StrategyKind::feddyn_sam: return {BaseRule::sam, Correction::admm};
        case StrategyKind::naive_fedgloss:
        case StrategyKind::fedgloss:
            return {sc.client_opt, sc.admm ? Correction::admm : Correction::none};
    }
    return {};
}

void CommLedger::charge_exchange(int clients, int params) {
    std::uint64_t bits = (std::uint64_t)clients * (std::uint64_t)params * 64ULL;
    down_bits += bits;
    up_bits += bits;
}

std::vector<int> sample_clients(int num_clients, int m, std::mt19937_64& g) {
    if (m < 1 || m > num_clients)
        throw ConfigError("clients_per_round must be in [1, " +
                          std::to_string(num_clients) + "] (got " +
                          std::to_string(m) + ")");
    std::vector<int> pool(num_clients);
    for (int i = 0; i < num_clients; ++i) pool[i] = i;
    for (int i = 0; i < m; ++i) {
        std::uniform_int_distribution<int> pick(i, num_clients - 1);
        std::swap(pool[i], pool[pick(g)]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + m);
    std::sort(out.begin(), out.end());
    return out;
}

ParamVector pseudo_gradient(const ParamVector& w_ref,
                            const std::vector<ParamVector>& client_ws,
                            const std::vector<int>& shard_ns) {
    if (client_ws.empty() || client_ws.size() != shard_ns.size())
        throw std::invalid_argument("pseudo_gradient: cohort shape mismatch");
    double total = 0.0;
    for (int n : shard_ns) {
        if (n <= 0) throw std::invalid_argument("pseudo_gradient: shard size <= 0");
        total += n;
    }
    ParamVector delta(w_ref.size(), 0.0);
    for (std::size_t k = 0; k < client_ws.size(); ++k) {
        vec::check_same_size(w_ref, client_ws[k]);
        double wk = shard_ns[k] / total;
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] += wk * (w_ref[i] - client_ws[k][i]);
    }
    return delta;
}

ParamVector fedavg_update(const ParamVector& w, const ParamVector& delta,
                          double eta_s) {
    vec::check_same_size(w, delta);
    ParamVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eta_s * delta[i];
    return out;
}

ParamVector server_perturb(const ParamVector& w, const ParamVector& prev_pg,
                           double rho) {
    double n = vec::norm(prev_pg);
    if (n < 1e-12) return w;
    ParamVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        out[i] = w[i] + rho * prev_pg[i] / n;
    return out;
}

ParamVector global_dual_update(const ParamVector& sigma,
                               const std::vector<ParamVector>& client_ws,
                               const ParamVector& w, double beta) {
    if (client_ws.empty())
        throw std::invalid_argument("global_dual_update: empty cohort");
    ParamVector out = sigma;
    double c = 1.0 / (beta * (double)client_ws.size());
    for (const auto& wk : client_ws) {
        vec::check_same_size(w, wk);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] -= c * (wk[i] - w[i]);
    }
    return out;
}

ParamVector fedgloss_descent(const ParamVector& w, const ParamVector& delta,
                             const ParamVector& sigma_next, double eta_s,
                             double beta) {
    vec::check_same_size(w, delta);
    vec::check_same_size(w, sigma_next);
    ParamVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        out[i] = w[i] - eta_s * delta[i] - beta * sigma_next[i];
    return out;
}

Simulation::Simulation(const datagen::TrainTest& data, const datagen::Partition& part,
                       const numcore::ModelArch& arch, const localopt::LocalHyper& local,
                       const StrategyConfig& strat, std::uint64_t master_seed,
                       int threads)
    : data_(data),
      part_(part),
      arch_(arch),
      local_(local),
      strat_(strat),
      seed_(master_seed),
      threads_(threads < 1 ? 1 : threads),
      sampling_rng_(rng::engine(rng::derive(master_seed, "sampling"))) {
    arch_.validate();
    local_.validate();
    strat_.validate();
    if (part_.client_indices.empty())
        throw ConfigError("partition has no clients");
    for (const auto& shard : part_.client_indices)
        if (shard.empty()) throw ConfigError("partition contains an empty shard");

    int d = arch_.param_count();
    state_.w = numcore::init_weights(arch_, rng::derive(master_seed, "init"));
    state_.sigma = vec::zeros(d);
    state_.prev_pg = vec::zeros(d);
    state_.round = 0;
    sigma_k_.resize(part_.client_indices.size());
}

void Simulation::skip_sampling_rounds(int rounds) {
    int C = (int)part_.client_indices.size();
    for (int t = 0; t < rounds; ++t)
        sample_clients(C, strat_.clients_per_round, sampling_rng_);
}

Simulation::CohortResult Simulation::train_cohort(const ParamVector& w_ref,
                                                  const std::vector<int>& ids,
                                                  localopt::Mode mode, bool commit,
                                                  int exchange) {
    int t = state_.round;
    CohortResult res;
    res.ws.resize(ids.size());
    res.shard_ns.resize(ids.size());

    auto train_one = [&](std::size_t i) {
        int id = ids[i];
        const auto& shard = part_.client_indices[id];
        std::uint64_t sseed =
            rng::derive(seed_, "shuffle", (std::uint64_t)t, (std::uint64_t)id,
                        (std::uint64_t)exchange);
        localopt::TrainResult tr;
        if (mode.correction == localopt::Correction::admm) {
            if (commit) {
                tr = localopt::client_train(w_ref, arch_, data_.train, shard, local_,
                                            mode, &sigma_k_[id], sseed);
            } else {
                // Probe exchange: run against a throwaway copy of the dual so
                // the committed state sees exactly one update per round.
                ParamVector scratch = sigma_k_[id];
                tr = localopt::client_train(w_ref, arch_, data_.train, shard, local_,
                                            mode, &scratch, sseed);
            }
        } else {
            tr = localopt::client_train(w_ref, arch_, data_.train, shard, local_,
                                        mode, nullptr, sseed);
        }
        res.ws[i] = std::move(tr.w);
        res.shard_ns[i] = (int)shard.size();
    };

    std::size_t n = ids.size();
    if (threads_ <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) train_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::size_t workers = std::min<std::size_t>(threads_, n);
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t wi = 0; wi < workers; ++wi) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                    train_one(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    return res;
}

RoundRecord Simulation::run_round() {
    using localopt::Correction;
    int t = state_.round;
    int d = arch_.param_count();
    int C = (int)part_.client_indices.size();
    int m = strat_.clients_per_round;

    localopt::Mode mode = local_mode(strat_);
    std::vector<int> ids = sample_clients(C, m, sampling_rng_);

    bool server_sam = strat_.kind == StrategyKind::fedgloss ||
                      strat_.kind == StrategyKind::naive_fedgloss;
    double rho_now = server_sam ? strat_.rho.at(t) : 0.0;

    // Reference model the cohort trains from this round.
    ParamVector w_ref;
    if (strat_.kind == StrategyKind::fedgloss) {
        // Ascent direction borrowed from the previous round, no extra
        // exchange. Round 0 has no history and trains from w itself.
        w_ref = server_perturb(state_.w, state_.prev_pg, rho_now);
    } else if (strat_.kind == StrategyKind::naive_fedgloss) {
        // Probe exchange: broadcast w, collect updates, and perturb along
        // the current round's own pseudo-gradient. Costs a full extra
        // exchange for the same cohort.
        CohortResult probe = train_cohort(state_.w, ids, mode, /*commit=*/false,
                                          /*exchange=*/0);
        ledger_.charge_exchange(m, d);
        ParamVector probe_pg = pseudo_gradient(state_.w, probe.ws, probe.shard_ns);
        w_ref = server_perturb(state_.w, probe_pg, rho_now);
    } else {
        w_ref = state_.w;
    }
    double pert = vec::norm(vec::sub(w_ref, state_.w));

    CohortResult cohort = train_cohort(w_ref, ids, mode, /*commit=*/true,
                                       /*exchange=*/1);
    ledger_.charge_exchange(m, d);

    ParamVector delta = pseudo_gradient(w_ref, cohort.ws, cohort.shard_ns);

    ParamVector w_next;
    if (mode.correction == Correction::admm) {
        state_.sigma =
            global_dual_update(state_.sigma, cohort.ws, state_.w, strat_.beta);
        w_next = fedgloss_descent(state_.w, delta, state_.sigma, strat_.eta_s,
                                  strat_.beta);
    } else {
        w_next = fedavg_update(state_.w, delta, strat_.eta_s);
    }

    std::optional<double> deps;
    if (server_sam)
        deps = flatness::delta_eps(state_.prev_pg, delta, rho_now);
    state_.prev_pg = delta;

    if (vec::has_nan(w_next))
        throw DivergenceError(t + 1, "global model contains NaN/inf at round " +
                                         std::to_string(t + 1));
    double wn = vec::norm(w_next);
    if (wn > 1e6)
        throw DivergenceError(t + 1, "global model norm " + std::to_string(wn) +
                                         " exceeds 1e6 at round " +
                                         std::to_string(t + 1));

    state_.w = std::move(w_next);
    state_.round = t + 1;

    if (retain_) {
        last_models_ = cohort.ws;
        last_ids_ = ids;
    }

    RoundRecord rec;
    rec.round = state_.round;
    auto tr = eval::evaluate(state_.w, arch_, data_.train);
    auto te = eval::evaluate(state_.w, arch_, data_.test);
    rec.train_loss = tr.loss;
    rec.test_acc = te.accuracy;
    rec.w_norm = wn;
    rec.bits_cum = ledger_.total();
    rec.delta_eps = deps;
    rec.pert_norm = pert;
    rec.rho_now = rho_now;
    return rec;
}

} // namespace fedlab::federation
