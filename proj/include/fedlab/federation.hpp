#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedlab/data.hpp"
#include "fedlab/local_opt.hpp"
#include "fedlab/model.hpp"

namespace fedlab::federation {

enum class StrategyKind {
    fedavg,
    fedprox,
    fedsam,
    feddyn,
    feddyn_sam,
    naive_fedgloss,
    fedgloss,
};

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

// Linear warmup of the server perturbation radius: rho0 at round 0 rising to
// target at round `warmup`, constant target afterwards. warmup == 0 means
// the target applies from the start.
struct RhoSchedule {
    double rho0 = 0.001;
    double target = 0.0;
    int warmup = 0;

    double at(int t) const;
};

struct StrategyConfig {
    StrategyKind kind = StrategyKind::fedavg;
    int clients_per_round = 1;         // cohort size m
    double eta_s = 1.0;                // server rate on the pseudo-gradient
    RhoSchedule rho;                   // server SAM radius (fedgloss family)
    double beta = 10.0;                // ADMM penalty parameter
    bool admm = true;                  // fedgloss family consistency switch
    localopt::BaseRule client_opt = localopt::BaseRule::sam; // fedgloss family

    void validate() const;
};

// Local optimizer implied by the strategy. The fedgloss pair reads
// client_opt and the admm switch; the fixed baselines ignore them.
localopt::Mode local_mode(const StrategyConfig& sc);

struct ServerState {
    ParamVector w;
    ParamVector sigma;    // global ADMM dual
    ParamVector prev_pg;  // pseudo-gradient of the previous round
    int round = 0;
};

// Bit-exact accounting of protocol traffic: every exchange moves d 64-bit
// parameters down to and back up from each of the m sampled clients.
// Diagnostics are measurement, not protocol, and are never charged.
struct CommLedger {
    std::uint64_t down_bits = 0;
    std::uint64_t up_bits = 0;

    void charge_exchange(int clients, int params);
    std::uint64_t total() const { return down_bits + up_bits; }
};

struct RoundRecord {
    int round = 0; // 1-based, after completion
    double train_loss = 0.0;
    double test_acc = 0.0;
    double w_norm = 0.0;
    std::uint64_t bits_cum = 0;
    std::optional<double> lambda1;   // filled by the caller when scheduled
    std::optional<double> delta_eps; // fedgloss family only
    double pert_norm = 0.0;          // ||w_ref - w|| actually applied
    double rho_now = 0.0;            // scheduled radius this round
};

// Uniform sample of m distinct client ids, returned in ascending order so
// downstream reductions are deterministic.
std::vector<int> sample_clients(int num_clients, int m, std::mt19937_64& g);

// Delta = sum_k (N_k / N) (w_ref - w_k) over the sampled cohort, with N the
// cohort's total sample count. Reduction follows the given order.
ParamVector pseudo_gradient(const ParamVector& w_ref,
                            const std::vector<ParamVector>& client_ws,
                            const std::vector<int>& shard_ns);

ParamVector fedavg_update(const ParamVector& w, const ParamVector& delta,
                          double eta_s);

// w + rho * prev_pg / ||prev_pg||; returns w unchanged while prev_pg is
// still zero (round 0).
ParamVector server_perturb(const ParamVector& w, const ParamVector& prev_pg,
                           double rho);

// sigma' = sigma - (1 / (beta m)) sum_k (w_k - w), averaged over the sampled
// cohort against the unperturbed global model.
ParamVector global_dual_update(const ParamVector& sigma,
                               const std::vector<ParamVector>& client_ws,
                               const ParamVector& w, double beta);

// w' = w - eta_s * delta - beta * sigma_next.
ParamVector fedgloss_descent(const ParamVector& w, const ParamVector& delta,
                             const ParamVector& sigma_next, double eta_s,
                             double beta);

// Drives one strategy over the federated task. Owns the server state, the
// per-client ADMM duals, the sampling stream and the ledger. Seeding is
// fully derived from master_seed, so two simulations built with the same
// arguments replay identically, including their client sampling.
class Simulation {
public:
    Simulation(const datagen::TrainTest& data, const datagen::Partition& part,
               const numcore::ModelArch& arch, const localopt::LocalHyper& local,
               const StrategyConfig& strat, std::uint64_t master_seed,
               int threads = 1);

    // Runs round state().round + 1. Throws DivergenceError when the global
    // model leaves the trust region (||w|| > 1e6 or any NaN).
    RoundRecord run_round();

    const ServerState& state() const { return state_; }
    ServerState& mutable_state() { return state_; }
    const CommLedger& ledger() const { return ledger_; }
    CommLedger& mutable_ledger() { return ledger_; }

    // Replay of the sampling stream when resuming from a snapshot: discards
    // the draws the completed rounds would have consumed.
    void skip_sampling_rounds(int rounds);
    const numcore::ModelArch& arch() const { return arch_; }
    const datagen::TrainTest& data() const { return data_; }
    const datagen::Partition& partition() const { return part_; }
    const std::vector<ParamVector>& client_sigma() const { return sigma_k_; }
    std::vector<ParamVector>& mutable_client_sigma() { return sigma_k_; }

    // When enabled, keeps the most recent cohort's models and ids around for
    // flatness diagnostics.
    void retain_client_models(bool on) { retain_ = on; }
    const std::vector<ParamVector>& last_client_models() const { return last_models_; }
    const std::vector<int>& last_client_ids() const { return last_ids_; }

private:
    struct CohortResult {
        std::vector<ParamVector> ws;
        std::vector<int> shard_ns;
    };
    CohortResult train_cohort(const ParamVector& w_ref, const std::vector<int>& ids,
                              localopt::Mode mode, bool commit, int exchange);

    datagen::TrainTest data_;
    datagen::Partition part_;
    numcore::ModelArch arch_;
    localopt::LocalHyper local_;
    StrategyConfig strat_;
    std::uint64_t seed_;
    int threads_;

    ServerState state_;
    std::vector<ParamVector> sigma_k_;
    CommLedger ledger_;
    std::mt19937_64 sampling_rng_;

    bool retain_ = false;
    std::vector<ParamVector> last_models_;
    std::vector<int> last_ids_;
};

} // namespace fedlab::federation
