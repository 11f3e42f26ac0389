#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/data.hpp"
#include "fedlab/federation.hpp"
#include "fedlab/flatness.hpp"

namespace fedlab::experiment {

// Dataset source. Synthetic generation may either pin its own seed (the same
// data across every run seed) or leave it empty, in which case each run
// derives one from its master seed.
struct DataSpec {
    std::string kind = "synthetic"; // "synthetic" or "csv"
    int num_classes = 4;
    int per_class = 250;
    int input_dim = 10;
    double class_sep = 3.0;
    double noise_sd = 1.0;
    std::optional<std::uint64_t> seed;
    std::string train_csv;
    std::string test_csv;
};

struct PartitionSpec {
    int clients = 1;
    double alpha = 0.0;
    std::optional<std::uint64_t> seed;
};

struct ArchSpec {
    std::vector<int> hidden{32};
    std::string activation = "relu";
};

struct StrategySpec {
    federation::StrategyConfig cfg;
    std::string label;          // unique, names the output files
    localopt::LocalHyper local; // experiment default merged with overrides
};

struct DiagnosticsSpec {
    int lambda1_every = 0; // rounds between lambda1 probes, 0 disables
    bool delta_eps = true;
    std::vector<int> landscape_rounds;
    bool retain_client_models = false; // keep last cohort in the snapshot
    int power_max_iter = 20;
    double power_tol = 1e-4;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<std::uint64_t> seeds{1};
    int threads = 1;
    int rounds = 1;
    int clients_per_round = 1;
    int eval_every = 1;
    std::string out_dir; // empty runs fully in memory
    DataSpec data;
    PartitionSpec partition;
    ArchSpec arch;
    localopt::LocalHyper local;
    std::vector<StrategySpec> strategies;
    DiagnosticsSpec diagnostics;
};

// Every violation at once, each message naming the offending field.
std::vector<std::string> validate(const ExperimentConfig& cfg);

// JSON config file round trip. load_config throws ConfigError listing all
// violations; save_config(load_config(p)) == load_config(p) field for field.
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);

datagen::TrainTest materialize_data(const DataSpec& spec, std::uint64_t run_seed);
datagen::Partition materialize_partition(const PartitionSpec& spec,
                                         const datagen::Dataset& train,
                                         std::uint64_t run_seed);
numcore::ModelArch make_arch(const ArchSpec& spec, const datagen::Dataset& train);

struct RunResult {
    std::string label;
    federation::StrategyKind kind = federation::StrategyKind::fedavg;
    std::uint64_t seed = 0;
    bool diverged = false;
    int diverged_at = -1;
    double final_acc = 0.0; // mean test accuracy of the last 10% of rows
    std::optional<double> lambda1_final;
    std::uint64_t bits_total = 0;
    std::vector<federation::RoundRecord> rows; // evaluation cadence rows
    std::string metrics_path;
};

struct ExperimentOutcome {
    std::vector<RunResult> runs;
    int exit_code = 0; // 0 clean, 3 when any strategy diverged
};

ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

double final_accuracy(const std::vector<federation::RoundRecord>& rows);

struct CompareRow {
    std::string strategy;
    int runs = 0;
    int reached = 0; // runs whose smoothed accuracy hit the target
    double final_acc_mean = 0.0;
    double final_acc_sd = 0.0;
    std::optional<double> lambda1_mean;
    double bits_mean = 0.0;
    std::optional<double> rounds_to_target_mean;
    std::optional<double> multiplier_mean; // bits to target vs the baseline
};

// Cross-run summary. The target is the final accuracy of the runs labelled
// "fedavg" (first label otherwise); smoothing is a trailing mean over up to
// 10 evaluation rows.
std::vector<CompareRow> compare_runs(const std::vector<std::string>& csv_paths);
std::string format_compare_table(const std::vector<CompareRow>& rows);
void write_compare_csv(const std::string& path, const std::vector<CompareRow>& rows);

// Versioned snapshot of a finished (or interrupted) run: everything needed
// to rebuild the task, restore the server and duals, and resume or analyze.
struct Snapshot {
    int format_version = 1;
    std::string label;
    federation::StrategyConfig strategy;
    std::uint64_t seed = 0;
    numcore::ModelArch arch;
    DataSpec data;           // seeds resolved to concrete values
    PartitionSpec partition;
    localopt::LocalHyper local;
    federation::ServerState server;
    std::vector<ParamVector> client_sigma;
    std::vector<int> client_ids;            // cohort of the last round, if kept
    std::vector<ParamVector> client_models;
    federation::CommLedger ledger;
};

void save_snapshot(const Snapshot& snap, const std::string& path);
Snapshot load_snapshot(const std::string& path);

// Rebuilds a Simulation mid-stream from a snapshot, including the position
// of the client sampling stream.
federation::Simulation restore_simulation(const Snapshot& snap,
                                          const datagen::TrainTest& data,
                                          const datagen::Partition& part,
                                          int threads = 1);

} // namespace fedlab::experiment
