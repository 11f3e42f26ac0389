#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedlab/experiment.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;

namespace {

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out_dir, int threads, int rounds) {
    experiment::ExperimentConfig cfg = experiment::load_config(config_path);
    if (seed) cfg.seeds = {*seed};
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (threads > 0) cfg.threads = threads;
    if (rounds > 0) cfg.rounds = rounds;

    experiment::ExperimentOutcome out = experiment::run_experiment(cfg);

    std::printf("%-18s  %6s  %10s  %12s  %s\n", "strategy", "seed", "final_acc",
                "Mbits", "status");
    for (const auto& rr : out.runs) {
        std::string status = rr.diverged
                                 ? "diverged@" + std::to_string(rr.diverged_at)
                                 : "ok";
        std::printf("%-18s  %6llu  %10.4f  %12.2f  %s\n", rr.label.c_str(),
                    (unsigned long long)rr.seed,
                    std::isnan(rr.final_acc) ? 0.0 : rr.final_acc,
                    (double)rr.bits_total / 1e6, status.c_str());
    }
    if (!cfg.out_dir.empty())
        std::printf("metrics written to %s\n", cfg.out_dir.c_str());
    return out.exit_code;
}

int cmd_compare(const std::vector<std::string>& csvs, const std::string& out_csv) {
    auto rows = experiment::compare_runs(csvs);
    std::fputs(experiment::format_compare_table(rows).c_str(), stdout);
    if (!out_csv.empty()) {
        experiment::write_compare_csv(out_csv, rows);
        std::printf("comparison written to %s\n", out_csv.c_str());
    }
    return 0;
}

int cmd_landscape(const std::string& snap_path, const std::string& out_csv,
                  int resolution, double range, bool use_test,
                  std::optional<std::uint64_t> seed) {
    experiment::Snapshot snap = experiment::load_snapshot(snap_path);
    datagen::TrainTest data = experiment::materialize_data(snap.data, snap.seed);
    const datagen::Dataset& split = use_test ? data.test : data.train;

    flatness::LandscapeSpec spec;
    spec.resolution = resolution;
    spec.range = range;
    std::uint64_t dseed = seed ? *seed : rng::derive(snap.seed, "landscape");
    auto grid = flatness::landscape_2d(snap.server.w, snap.arch, split, spec, dseed);
    flatness::write_landscape_csv(out_csv, grid);
    std::printf("landscape (%dx%d, range %.3f) written to %s\n", resolution,
                resolution, range, out_csv.c_str());
    return 0;
}

int cmd_eigs(const std::string& snap_path, const std::string& out_csv,
             int max_iter, double tol, std::optional<std::uint64_t> seed) {
    experiment::Snapshot snap = experiment::load_snapshot(snap_path);
    if (snap.client_models.empty())
        throw ConfigError(
            "snapshot has no retained client models; rerun with "
            "diagnostics.retain_client_models");
    datagen::TrainTest data = experiment::materialize_data(snap.data, snap.seed);
    datagen::Partition part =
        experiment::materialize_partition(snap.partition, data.train, snap.seed);

    flatness::PowerIterOpts opts;
    opts.max_iter = max_iter;
    opts.tol = tol;
    opts.seed = seed ? *seed : snap.seed;
    auto rows = flatness::local_global_eigs(snap.client_models, snap.client_ids,
                                            data.train, part, snap.arch, opts);
    flatness::write_eigs_csv(out_csv, rows);
    std::printf("%-8s  %14s  %14s\n", "client", "lambda1_local", "lambda1_global");
    for (const auto& r : rows)
        std::printf("%-8d  %14.4f  %14.4f\n", r.client, r.local_eig.lambda1,
                    r.global_eig.lambda1);
    std::printf("written to %s\n", out_csv.c_str());
    return 0;
}

int cmd_partition_stats(const std::string& config_path,
                        std::optional<std::uint64_t> seed) {
    experiment::ExperimentConfig cfg = experiment::load_config(config_path);
    std::uint64_t s = seed ? *seed : cfg.seeds.front();
    datagen::TrainTest data = experiment::materialize_data(cfg.data, s);
    datagen::Partition part =
        experiment::materialize_partition(cfg.partition, data.train, s);

    auto sizes = datagen::shard_sizes(part);
    std::printf("clients: %zu  alpha: %g  train: %d  test: %d\n", sizes.size(),
                part.alpha, data.train.size(), data.test.size());
    std::printf("mean label entropy: %.4f nats\n",
                datagen::mean_label_entropy(data.train, part));
    std::printf("%-8s  %6s  label histogram\n", "client", "size");
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        auto hist = datagen::client_label_histogram(data.train, part, (int)c);
        std::string h = "[";
        for (std::size_t k = 0; k < hist.size(); ++k)
            h += (k ? " " : "") + std::to_string(hist[k]);
        h += "]";
        std::printf("%-8zu  %6d  %s\n", c, sizes[c], h.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated learning simulation lab"};
    app.require_subcommand(1);

    std::string config_path, out_path, snap_path;
    std::vector<std::string> csvs;
    std::uint64_t seed_val = 0;
    bool seed_set = false;
    int threads = 0, rounds = 0, resolution = 25, max_iter = 100;
    double range = 1.0, tol = 1e-4;
    bool use_test = false;

    auto* run = app.add_subcommand("run", "run every strategy in a config");
    run->add_option("-c,--config", config_path, "experiment config (json)")
        ->required();
    run->add_option("--seed", seed_val, "replace the config seed list")
        ->each([&](const std::string&) { seed_set = true; });
    run->add_option("-o,--out", out_path, "override out_dir");
    run->add_option("-t,--threads", threads, "override worker thread count");
    run->add_option("--rounds", rounds, "override the round count");

    auto* cmp = app.add_subcommand("compare", "summarize metrics csv files");
    cmp->add_option("csv", csvs, "metrics files from run")->required();
    cmp->add_option("-o,--out", out_path, "write the table as csv");

    auto* land = app.add_subcommand("landscape", "loss surface around a snapshot");
    land->add_option("-s,--snapshot", snap_path, "snapshot json from run")
        ->required();
    land->add_option("-o,--out", out_path, "output csv")->required();
    land->add_option("--resolution", resolution, "grid points per axis");
    land->add_option("--range", range, "axis half width");
    land->add_flag("--test", use_test, "evaluate on the test split");
    land->add_option("--seed", seed_val, "direction seed")
        ->each([&](const std::string&) { seed_set = true; });

    auto* eigs = app.add_subcommand("eigs", "client curvature table");
    eigs->add_option("-s,--snapshot", snap_path, "snapshot json from run")
        ->required();
    eigs->add_option("-o,--out", out_path, "output csv")->required();
    eigs->add_option("--max-iter", max_iter, "power iteration cap");
    eigs->add_option("--tol", tol, "power iteration tolerance");
    eigs->add_option("--seed", seed_val, "probe seed")
        ->each([&](const std::string&) { seed_set = true; });

    auto* pstats = app.add_subcommand("partition-stats", "client shard makeup");
    pstats->add_option("-c,--config", config_path, "experiment config (json)")
        ->required();
    pstats->add_option("--seed", seed_val, "run seed (default: first in config)")
        ->each([&](const std::string&) { seed_set = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::optional<std::uint64_t> seed;
    if (seed_set) seed = seed_val;

    try {
        if (run->parsed())
            return cmd_run(config_path, seed, out_path, threads, rounds);
        if (cmp->parsed()) return cmd_compare(csvs, out_path);
        if (land->parsed())
            return cmd_landscape(snap_path, out_path, resolution, range, use_test,
                                 seed);
        if (eigs->parsed())
            return cmd_eigs(snap_path, out_path, max_iter, tol, seed);
        if (pstats->parsed()) return cmd_partition_stats(config_path, seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
