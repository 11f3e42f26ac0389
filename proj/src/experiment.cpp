#include "fedlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedlab/eval.hpp"
#include "fedlab/rng.hpp"
#include "json.hpp"

namespace fedlab::experiment {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---- parsing helpers -------------------------------------------------------
// Each helper records a violation instead of throwing, so a single load pass
// can report every problem in the file at once.

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& path, std::vector<std::string>& viol) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            viol.push_back(path + ": unknown key '" + it.key() + "'");
}

bool fetch_object(const json& j, const std::string& key, const std::string& path,
                  std::vector<std::string>& viol, json& out) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_object()) {
        viol.push_back(path + "." + key + " must be an object");
        return false;
    }
    out = j.at(key);
    return true;
}

bool fetch_int(const json& j, const std::string& key, const std::string& path,
               std::vector<std::string>& viol, int& out) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_number_integer()) {
        viol.push_back(path + "." + key + " must be an integer");
        return false;
    }
    out = j.at(key).get<int>();
    return true;
}

bool fetch_u64(const json& j, const std::string& key, const std::string& path,
               std::vector<std::string>& viol, std::uint64_t& out) {
    if (!j.contains(key)) return false;
    const auto& v = j.at(key);
    if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
        return true;
    }
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        out = (std::uint64_t)v.get<std::int64_t>();
        return true;
    }
    viol.push_back(path + "." + key + " must be a non-negative integer");
    return false;
}

bool fetch_double(const json& j, const std::string& key, const std::string& path,
                  std::vector<std::string>& viol, double& out) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_number()) {
        viol.push_back(path + "." + key + " must be a number");
        return false;
    }
    out = j.at(key).get<double>();
    return true;
}

bool fetch_bool(const json& j, const std::string& key, const std::string& path,
                std::vector<std::string>& viol, bool& out) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_boolean()) {
        viol.push_back(path + "." + key + " must be a boolean");
        return false;
    }
    out = j.at(key).get<bool>();
    return true;
}

bool fetch_string(const json& j, const std::string& key, const std::string& path,
                  std::vector<std::string>& viol, std::string& out) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_string()) {
        viol.push_back(path + "." + key + " must be a string");
        return false;
    }
    out = j.at(key).get<std::string>();
    return true;
}

void parse_local(const json& j, const std::string& path,
                 std::vector<std::string>& viol, localopt::LocalHyper& hp) {
    check_keys(j,
               {"eta", "rho_l", "mu", "beta", "weight_decay", "momentum", "epochs",
                "batch_size"},
               path, viol);
    fetch_double(j, "eta", path, viol, hp.eta);
    fetch_double(j, "rho_l", path, viol, hp.rho_l);
    fetch_double(j, "mu", path, viol, hp.mu);
    fetch_double(j, "beta", path, viol, hp.beta);
    fetch_double(j, "weight_decay", path, viol, hp.weight_decay);
    fetch_double(j, "momentum", path, viol, hp.momentum);
    fetch_int(j, "epochs", path, viol, hp.epochs);
    fetch_int(j, "batch_size", path, viol, hp.batch_size);
}

StrategySpec parse_strategy(const json& j, std::size_t idx,
                            const localopt::LocalHyper& default_local,
                            std::vector<std::string>& viol) {
    std::string path = "strategies[" + std::to_string(idx) + "]";
    StrategySpec sp;
    sp.local = default_local;
    if (!j.is_object()) {
        viol.push_back(path + " must be an object");
        return sp;
    }
    check_keys(j,
               {"kind", "label", "eta_s", "rho_s", "rho0", "warmup_rounds", "beta",
                "admm", "client_opt", "local"},
               path, viol);

    std::string kind;
    if (!fetch_string(j, "kind", path, viol, kind)) {
        viol.push_back(path + ".kind is required");
    } else {
        try {
            sp.cfg.kind = federation::strategy_from_string(kind);
        } catch (const ConfigError&) {
            viol.push_back(path + ".kind: unknown strategy '" + kind + "'");
        }
    }
    sp.label = federation::to_string(sp.cfg.kind);
    fetch_string(j, "label", path, viol, sp.label);
    fetch_double(j, "eta_s", path, viol, sp.cfg.eta_s);
    fetch_double(j, "rho_s", path, viol, sp.cfg.rho.target);
    fetch_double(j, "rho0", path, viol, sp.cfg.rho.rho0);
    fetch_int(j, "warmup_rounds", path, viol, sp.cfg.rho.warmup);
    fetch_double(j, "beta", path, viol, sp.cfg.beta);
    fetch_bool(j, "admm", path, viol, sp.cfg.admm);

    std::string co;
    if (fetch_string(j, "client_opt", path, viol, co)) {
        if (co == "sgd")
            sp.cfg.client_opt = localopt::BaseRule::sgd;
        else if (co == "sam")
            sp.cfg.client_opt = localopt::BaseRule::sam;
        else
            viol.push_back(path + ".client_opt must be 'sgd' or 'sam'");
    }

    json jl;
    if (fetch_object(j, "local", path, viol, jl))
        parse_local(jl, path + ".local", viol, sp.local);
    return sp;
}

std::string act_to_string(numcore::Activation a) {
    return a == numcore::Activation::relu ? "relu" : "tanh";
}

ExperimentConfig parse_config(const json& j, std::vector<std::string>& viol) {
    ExperimentConfig cfg;
    if (!j.is_object()) {
        viol.push_back("config root must be an object");
        return cfg;
    }
    check_keys(j,
               {"name", "seeds", "threads", "rounds", "clients_per_round",
                "eval_every", "out_dir", "data", "partition", "arch", "local",
                "strategies", "diagnostics"},
               "config", viol);

    fetch_string(j, "name", "config", viol, cfg.name);
    fetch_int(j, "threads", "config", viol, cfg.threads);
    fetch_int(j, "rounds", "config", viol, cfg.rounds);
    fetch_int(j, "clients_per_round", "config", viol, cfg.clients_per_round);
    fetch_int(j, "eval_every", "config", viol, cfg.eval_every);
    fetch_string(j, "out_dir", "config", viol, cfg.out_dir);

    if (j.contains("seeds")) {
        if (!j.at("seeds").is_array()) {
            viol.push_back("config.seeds must be an array of non-negative integers");
        } else {
            cfg.seeds.clear();
            for (const auto& s : j.at("seeds")) {
                if (s.is_number_unsigned())
                    cfg.seeds.push_back(s.get<std::uint64_t>());
                else if (s.is_number_integer() && s.get<std::int64_t>() >= 0)
                    cfg.seeds.push_back((std::uint64_t)s.get<std::int64_t>());
                else
                    viol.push_back("config.seeds entries must be non-negative integers");
            }
        }
    }

    json sec;
    if (fetch_object(j, "data", "config", viol, sec)) {
        check_keys(sec,
                   {"kind", "num_classes", "per_class", "input_dim", "class_sep",
                    "noise_sd", "seed", "train", "test"},
                   "data", viol);
        fetch_string(sec, "kind", "data", viol, cfg.data.kind);
        fetch_int(sec, "num_classes", "data", viol, cfg.data.num_classes);
        fetch_int(sec, "per_class", "data", viol, cfg.data.per_class);
        fetch_int(sec, "input_dim", "data", viol, cfg.data.input_dim);
        fetch_double(sec, "class_sep", "data", viol, cfg.data.class_sep);
        fetch_double(sec, "noise_sd", "data", viol, cfg.data.noise_sd);
        std::uint64_t s;
        if (fetch_u64(sec, "seed", "data", viol, s)) cfg.data.seed = s;
        fetch_string(sec, "train", "data", viol, cfg.data.train_csv);
        fetch_string(sec, "test", "data", viol, cfg.data.test_csv);
    }

    if (fetch_object(j, "partition", "config", viol, sec)) {
        check_keys(sec, {"clients", "alpha", "seed"}, "partition", viol);
        fetch_int(sec, "clients", "partition", viol, cfg.partition.clients);
        fetch_double(sec, "alpha", "partition", viol, cfg.partition.alpha);
        std::uint64_t s;
        if (fetch_u64(sec, "seed", "partition", viol, s)) cfg.partition.seed = s;
    }

    if (fetch_object(j, "arch", "config", viol, sec)) {
        check_keys(sec, {"hidden", "activation"}, "arch", viol);
        if (sec.contains("hidden")) {
            if (!sec.at("hidden").is_array()) {
                viol.push_back("arch.hidden must be an array of integers");
            } else {
                cfg.arch.hidden.clear();
                for (const auto& h : sec.at("hidden")) {
                    if (h.is_number_integer())
                        cfg.arch.hidden.push_back(h.get<int>());
                    else
                        viol.push_back("arch.hidden entries must be integers");
                }
            }
        }
        fetch_string(sec, "activation", "arch", viol, cfg.arch.activation);
    }

    if (fetch_object(j, "local", "config", viol, sec))
        parse_local(sec, "local", viol, cfg.local);

    if (j.contains("strategies")) {
        if (!j.at("strategies").is_array()) {
            viol.push_back("config.strategies must be an array");
        } else {
            cfg.strategies.clear();
            std::size_t i = 0;
            for (const auto& js : j.at("strategies"))
                cfg.strategies.push_back(parse_strategy(js, i++, cfg.local, viol));
        }
    }

    if (fetch_object(j, "diagnostics", "config", viol, sec)) {
        check_keys(sec,
                   {"lambda1_every", "delta_eps", "landscape_rounds",
                    "retain_client_models", "power_max_iter", "power_tol"},
                   "diagnostics", viol);
        fetch_int(sec, "lambda1_every", "diagnostics", viol,
                  cfg.diagnostics.lambda1_every);
        fetch_bool(sec, "delta_eps", "diagnostics", viol, cfg.diagnostics.delta_eps);
        fetch_bool(sec, "retain_client_models", "diagnostics", viol,
                   cfg.diagnostics.retain_client_models);
        fetch_int(sec, "power_max_iter", "diagnostics", viol,
                  cfg.diagnostics.power_max_iter);
        fetch_double(sec, "power_tol", "diagnostics", viol, cfg.diagnostics.power_tol);
        if (sec.contains("landscape_rounds")) {
            if (!sec.at("landscape_rounds").is_array()) {
                viol.push_back("diagnostics.landscape_rounds must be an array");
            } else {
                cfg.diagnostics.landscape_rounds.clear();
                for (const auto& r : sec.at("landscape_rounds")) {
                    if (r.is_number_integer())
                        cfg.diagnostics.landscape_rounds.push_back(r.get<int>());
                    else
                        viol.push_back(
                            "diagnostics.landscape_rounds entries must be integers");
                }
            }
        }
    }
    return cfg;
}

json local_to_json(const localopt::LocalHyper& hp) {
    json j;
    j["eta"] = hp.eta;
    j["rho_l"] = hp.rho_l;
    j["mu"] = hp.mu;
    j["beta"] = hp.beta;
    j["weight_decay"] = hp.weight_decay;
    j["momentum"] = hp.momentum;
    j["epochs"] = hp.epochs;
    j["batch_size"] = hp.batch_size;
    return j;
}

json strategy_to_json(const StrategySpec& sp) {
    json j;
    j["kind"] = federation::to_string(sp.cfg.kind);
    j["label"] = sp.label;
    j["eta_s"] = sp.cfg.eta_s;
    j["rho_s"] = sp.cfg.rho.target;
    j["rho0"] = sp.cfg.rho.rho0;
    j["warmup_rounds"] = sp.cfg.rho.warmup;
    j["beta"] = sp.cfg.beta;
    j["admm"] = sp.cfg.admm;
    j["client_opt"] = sp.cfg.client_opt == localopt::BaseRule::sam ? "sam" : "sgd";
    j["local"] = local_to_json(sp.local);
    return j;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["seeds"] = cfg.seeds;
    j["threads"] = cfg.threads;
    j["rounds"] = cfg.rounds;
    j["clients_per_round"] = cfg.clients_per_round;
    j["eval_every"] = cfg.eval_every;
    j["out_dir"] = cfg.out_dir;

    json jd;
    jd["kind"] = cfg.data.kind;
    if (cfg.data.kind == "csv") {
        jd["train"] = cfg.data.train_csv;
        jd["test"] = cfg.data.test_csv;
    } else {
        jd["num_classes"] = cfg.data.num_classes;
        jd["per_class"] = cfg.data.per_class;
        jd["input_dim"] = cfg.data.input_dim;
        jd["class_sep"] = cfg.data.class_sep;
        jd["noise_sd"] = cfg.data.noise_sd;
        if (cfg.data.seed) jd["seed"] = *cfg.data.seed;
    }
    j["data"] = jd;

    json jp;
    jp["clients"] = cfg.partition.clients;
    jp["alpha"] = cfg.partition.alpha;
    if (cfg.partition.seed) jp["seed"] = *cfg.partition.seed;
    j["partition"] = jp;

    json ja;
    ja["hidden"] = cfg.arch.hidden;
    ja["activation"] = cfg.arch.activation;
    j["arch"] = ja;

    j["local"] = local_to_json(cfg.local);

    json js = json::array();
    for (const auto& sp : cfg.strategies) js.push_back(strategy_to_json(sp));
    j["strategies"] = js;

    json jg;
    jg["lambda1_every"] = cfg.diagnostics.lambda1_every;
    jg["delta_eps"] = cfg.diagnostics.delta_eps;
    jg["landscape_rounds"] = cfg.diagnostics.landscape_rounds;
    jg["retain_client_models"] = cfg.diagnostics.retain_client_models;
    jg["power_max_iter"] = cfg.diagnostics.power_max_iter;
    jg["power_tol"] = cfg.diagnostics.power_tol;
    j["diagnostics"] = jg;
    return j;
}

void append_local_violations(const localopt::LocalHyper& hp, const std::string& path,
                             std::vector<std::string>& viol) {
    if (hp.eta <= 0.0) viol.push_back(path + ".eta must be > 0");
    if (hp.rho_l < 0.0) viol.push_back(path + ".rho_l must be >= 0");
    if (hp.mu < 0.0) viol.push_back(path + ".mu must be >= 0");
    if (hp.beta <= 0.0) viol.push_back(path + ".beta must be > 0");
    if (hp.weight_decay < 0.0) viol.push_back(path + ".weight_decay must be >= 0");
    if (hp.momentum < 0.0 || hp.momentum >= 1.0)
        viol.push_back(path + ".momentum must be in [0, 1)");
    if (hp.epochs < 1) viol.push_back(path + ".epochs must be >= 1");
    if (hp.batch_size < 0) viol.push_back(path + ".batch_size must be >= 0");
}

bool valid_label(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum((unsigned char)c) && c != '_' && c != '-') return false;
    return true;
}

} // namespace

std::vector<std::string> validate(const ExperimentConfig& cfg) {
    std::vector<std::string> viol;
    if (cfg.name.empty()) viol.push_back("config.name must not be empty");
    if (cfg.seeds.empty()) viol.push_back("config.seeds must list at least one seed");
    if (cfg.threads < 1) viol.push_back("config.threads must be >= 1");
    if (cfg.rounds < 1) viol.push_back("config.rounds must be >= 1");
    if (cfg.eval_every < 1) viol.push_back("config.eval_every must be >= 1");
    if (cfg.clients_per_round < 1 || cfg.clients_per_round > cfg.partition.clients)
        viol.push_back("config.clients_per_round must be in [1, partition.clients]");

    if (cfg.data.kind == "synthetic") {
        if (cfg.data.num_classes < 2) viol.push_back("data.num_classes must be >= 2");
        if (cfg.data.per_class < 1) viol.push_back("data.per_class must be >= 1");
        if (cfg.data.input_dim < 2) viol.push_back("data.input_dim must be >= 2");
        if (cfg.data.class_sep < 0.0) viol.push_back("data.class_sep must be >= 0");
        if (cfg.data.noise_sd < 0.0) viol.push_back("data.noise_sd must be >= 0");
    } else if (cfg.data.kind == "csv") {
        if (cfg.data.train_csv.empty()) viol.push_back("data.train path is required");
        if (cfg.data.test_csv.empty()) viol.push_back("data.test path is required");
    } else {
        viol.push_back("data.kind must be 'synthetic' or 'csv' (got '" +
                       cfg.data.kind + "')");
    }

    if (cfg.partition.clients < 1) viol.push_back("partition.clients must be >= 1");
    if (cfg.partition.alpha < 0.0) viol.push_back("partition.alpha must be >= 0");

    if (cfg.arch.hidden.empty())
        viol.push_back("arch.hidden must list at least one layer width");
    for (int h : cfg.arch.hidden)
        if (h < 1) viol.push_back("arch.hidden widths must be >= 1");
    if (cfg.arch.activation != "relu" && cfg.arch.activation != "tanh")
        viol.push_back("arch.activation must be 'relu' or 'tanh' (got '" +
                       cfg.arch.activation + "')");

    append_local_violations(cfg.local, "local", viol);

    if (cfg.strategies.empty())
        viol.push_back("config.strategies must list at least one strategy");
    std::set<std::string> labels;
    for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
        const auto& sp = cfg.strategies[i];
        std::string path = "strategies[" + std::to_string(i) + "]";
        if (!valid_label(sp.label))
            viol.push_back(path + ".label must be non-empty [A-Za-z0-9_-]");
        else if (!labels.insert(sp.label).second)
            viol.push_back(path + ".label '" + sp.label + "' is not unique");
        if (sp.cfg.eta_s <= 0.0) viol.push_back(path + ".eta_s must be > 0");
        if (sp.cfg.beta <= 0.0) viol.push_back(path + ".beta must be > 0");
        if (sp.cfg.rho.target < 0.0) viol.push_back(path + ".rho_s must be >= 0");
        if (sp.cfg.rho.rho0 < 0.0) viol.push_back(path + ".rho0 must be >= 0");
        if (sp.cfg.rho.warmup < 0)
            viol.push_back(path + ".warmup_rounds must be >= 0");
        append_local_violations(sp.local, path + ".local", viol);
    }

    if (cfg.diagnostics.lambda1_every < 0)
        viol.push_back("diagnostics.lambda1_every must be >= 0");
    if (cfg.diagnostics.power_max_iter < 1)
        viol.push_back("diagnostics.power_max_iter must be >= 1");
    if (cfg.diagnostics.power_tol <= 0.0)
        viol.push_back("diagnostics.power_tol must be > 0");
    for (int r : cfg.diagnostics.landscape_rounds)
        if (r < 1) viol.push_back("diagnostics.landscape_rounds entries must be >= 1");
    return viol;
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    std::vector<std::string> viol;
    ExperimentConfig cfg = parse_config(j, viol);
    auto sem = validate(cfg);
    viol.insert(viol.end(), sem.begin(), sem.end());
    if (!viol.empty()) {
        std::string msg = "invalid config:";
        for (const auto& v : viol) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2) + "\n";
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << config_to_json_text(cfg);
}

datagen::TrainTest materialize_data(const DataSpec& spec, std::uint64_t run_seed) {
    if (spec.kind == "csv") {
        datagen::TrainTest tt;
        tt.train = datagen::import_csv(spec.train_csv);
        tt.test = datagen::import_csv(spec.test_csv);
        if (tt.train.input_dim != tt.test.input_dim)
            throw ConfigError("data: train and test input_dim differ");
        int k = std::max(tt.train.num_classes, tt.test.num_classes);
        tt.train.num_classes = tt.test.num_classes = k;
        return tt;
    }
    datagen::SyntheticSpec s;
    s.num_classes = spec.num_classes;
    s.per_class = spec.per_class;
    s.input_dim = spec.input_dim;
    s.class_sep = spec.class_sep;
    s.noise_sd = spec.noise_sd;
    s.seed = spec.seed ? *spec.seed : rng::derive(run_seed, "data");
    return datagen::make_synthetic(s);
}

datagen::Partition materialize_partition(const PartitionSpec& spec,
                                         const datagen::Dataset& train,
                                         std::uint64_t run_seed) {
    std::uint64_t s = spec.seed ? *spec.seed : rng::derive(run_seed, "partition");
    return datagen::partition_dirichlet(train, spec.clients, spec.alpha, s);
}

numcore::ModelArch make_arch(const ArchSpec& spec, const datagen::Dataset& train) {
    numcore::ModelArch arch;
    arch.input_dim = train.input_dim;
    arch.hidden_dims = spec.hidden;
    arch.num_classes = train.num_classes;
    arch.activation = spec.activation == "tanh" ? numcore::Activation::tanh
                                                : numcore::Activation::relu;
    return arch;
}

double final_accuracy(const std::vector<federation::RoundRecord>& rows) {
    if (rows.empty()) return std::nan("");
    std::size_t n10 = std::max<std::size_t>(1, (rows.size() + 9) / 10);
    double s = 0.0;
    for (std::size_t i = rows.size() - n10; i < rows.size(); ++i)
        s += rows[i].test_acc;
    return s / n10;
}

namespace {

void write_metrics_header(std::ostream& f) {
    f << "round,strategy,train_loss,test_acc,lambda1,delta_eps,w_norm,bits_cum\n";
}

void write_metrics_row(std::ostream& f, const std::string& label,
                       const federation::RoundRecord& r) {
    f << r.round << "," << label << "," << r.train_loss << "," << r.test_acc << ",";
    if (r.lambda1) f << *r.lambda1;
    f << ",";
    if (r.delta_eps) f << *r.delta_eps;
    f << ",";
    f << r.w_norm << "," << r.bits_cum << "\n";
}

// Minimal view of one run for the comparison logic, either taken from
// in-memory results or re-parsed from a metrics CSV.
struct ParsedRow {
    int round = 0;
    double acc = 0.0;
    double bits = 0.0;
    std::optional<double> lambda1;
};

struct ParsedRun {
    std::string label;
    std::vector<ParsedRow> rows;
};

// Trailing mean at the last row, the same window first_reach uses. With the
// target defined this way a lone baseline run reaches it exactly at round T.
double run_final_acc(const ParsedRun& run) {
    if (run.rows.empty()) return std::nan("");
    std::size_t w = std::min<std::size_t>(10, run.rows.size());
    double s = 0.0;
    for (std::size_t i = run.rows.size() - w; i < run.rows.size(); ++i)
        s += run.rows[i].acc;
    return s / w;
}

// First row whose trailing-10 mean accuracy reaches the target.
const ParsedRow* first_reach(const ParsedRun& run, double target) {
    const auto& rows = run.rows;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::size_t w = std::min<std::size_t>(10, i + 1);
        double s = 0.0;
        for (std::size_t k = i + 1 - w; k <= i; ++k) s += rows[k].acc;
        if (s / w >= target - 1e-12) return &rows[i];
    }
    return nullptr;
}

std::vector<CompareRow> compare_core(const std::vector<ParsedRun>& runs) {
    if (runs.empty()) throw ConfigError("compare: no runs given");
    std::vector<std::string> order;
    std::map<std::string, std::vector<const ParsedRun*>> groups;
    for (const auto& r : runs) {
        if (!groups.count(r.label)) order.push_back(r.label);
        groups[r.label].push_back(&r);
    }

    std::string base = groups.count("fedavg") ? "fedavg" : order.front();
    double target = 0.0;
    {
        double s = 0.0;
        int n = 0;
        for (const auto* r : groups[base]) {
            double a = run_final_acc(*r);
            if (!std::isnan(a)) {
                s += a;
                ++n;
            }
        }
        if (n == 0) throw ConfigError("compare: baseline '" + base + "' has no rows");
        target = s / n;
    }

    double base_bits = 0.0;
    int base_reached = 0;
    for (const auto* r : groups[base]) {
        if (const ParsedRow* row = first_reach(*r, target)) {
            base_bits += row->bits;
            ++base_reached;
        }
    }
    if (base_reached > 0) base_bits /= base_reached;

    std::vector<CompareRow> out;
    for (const auto& label : order) {
        CompareRow cr;
        cr.strategy = label;
        double acc_s = 0.0, acc_s2 = 0.0, bits_s = 0.0, rtt_s = 0.0, tb_s = 0.0,
               l1_s = 0.0;
        int n = 0, l1_n = 0;
        for (const auto* r : groups[label]) {
            double a = run_final_acc(*r);
            if (std::isnan(a)) continue;
            ++n;
            acc_s += a;
            acc_s2 += a * a;
            bits_s += r->rows.back().bits;
            if (r->rows.back().lambda1) {
                l1_s += *r->rows.back().lambda1;
                ++l1_n;
            }
            if (const ParsedRow* row = first_reach(*r, target)) {
                ++cr.reached;
                rtt_s += row->round;
                tb_s += row->bits;
            }
        }
        cr.runs = n;
        if (n > 0) {
            cr.final_acc_mean = acc_s / n;
            cr.final_acc_sd =
                n > 1 ? std::sqrt(std::max(0.0, (acc_s2 - acc_s * acc_s / n) / (n - 1)))
                      : 0.0;
            cr.bits_mean = bits_s / n;
        }
        if (l1_n > 0) cr.lambda1_mean = l1_s / l1_n;
        if (cr.reached > 0) {
            cr.rounds_to_target_mean = rtt_s / cr.reached;
            if (base_reached > 0 && base_bits > 0.0)
                cr.multiplier_mean = (tb_s / cr.reached) / base_bits;
        }
        out.push_back(cr);
    }
    return out;
}

ParsedRun parsed_from_result(const RunResult& rr) {
    ParsedRun pr;
    pr.label = rr.label;
    for (const auto& row : rr.rows)
        pr.rows.push_back({row.round, row.test_acc, (double)row.bits_cum, row.lambda1});
    return pr;
}

std::vector<ParsedRun> parse_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open metrics file " + path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError(path + ": empty metrics file");

    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < cols.size(); ++i)
            if (cols[i] == name) return (int)i;
        throw ConfigError(path + ": missing column '" + name + "'");
    };
    int c_round = col("round"), c_strat = col("strategy"), c_acc = col("test_acc"),
        c_l1 = col("lambda1"), c_bits = col("bits_cum");

    std::map<std::string, ParsedRun> by_label;
    std::vector<std::string> order;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (line.back() == ',') cells.push_back("");
        if (cells.size() != cols.size())
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": wrong column count");
        try {
            ParsedRow row;
            row.round = std::stoi(cells[c_round]);
            row.acc = std::stod(cells[c_acc]);
            row.bits = std::stod(cells[c_bits]);
            if (!cells[c_l1].empty()) row.lambda1 = std::stod(cells[c_l1]);
            const std::string& label = cells[c_strat];
            if (!by_label.count(label)) {
                order.push_back(label);
                by_label[label].label = label;
            }
            by_label[label].rows.push_back(row);
        } catch (const std::exception&) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": cannot parse row");
        }
    }
    std::vector<ParsedRun> out;
    for (const auto& label : order) out.push_back(by_label[label]);
    return out;
}

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

} // namespace

std::vector<CompareRow> compare_runs(const std::vector<std::string>& csv_paths) {
    std::vector<ParsedRun> runs;
    for (const auto& p : csv_paths) {
        auto part = parse_metrics_csv(p);
        runs.insert(runs.end(), part.begin(), part.end());
    }
    return compare_core(runs);
}

std::string format_compare_table(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os << "strategy            runs  final_acc          lambda1    Mbits      "
          "rounds_to_target  cost\n";
    for (const auto& r : rows) {
        char line[256];
        std::string acc = fmt(r.final_acc_mean) + " +/- " + fmt(r.final_acc_sd);
        std::string l1 = r.lambda1_mean ? fmt(*r.lambda1_mean, "%.3f") : "-";
        std::string rtt =
            r.rounds_to_target_mean ? fmt(*r.rounds_to_target_mean, "%.1f") : "-";
        std::string mult =
            r.multiplier_mean ? fmt(*r.multiplier_mean, "%.2f") + "x" : "-";
        std::snprintf(line, sizeof(line),
                      "%-18s  %4d  %-17s  %-9s  %-9s  %-16s  %s\n",
                      r.strategy.c_str(), r.runs, acc.c_str(), l1.c_str(),
                      fmt(r.bits_mean / 1e6, "%.2f").c_str(), rtt.c_str(),
                      mult.c_str());
        os << line;
    }
    return os.str();
}

void write_compare_csv(const std::string& path, const std::vector<CompareRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.precision(17);
    f << "strategy,runs,final_acc_mean,final_acc_sd,lambda1_mean,bits_mean,"
         "reached,rounds_to_target_mean,multiplier_mean\n";
    for (const auto& r : rows) {
        f << r.strategy << "," << r.runs << "," << r.final_acc_mean << ","
          << r.final_acc_sd << ",";
        if (r.lambda1_mean) f << *r.lambda1_mean;
        f << "," << r.bits_mean << "," << r.reached << ",";
        if (r.rounds_to_target_mean) f << *r.rounds_to_target_mean;
        f << ",";
        if (r.multiplier_mean) f << *r.multiplier_mean;
        f << "\n";
    }
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    auto viol = validate(cfg);
    if (!viol.empty()) {
        std::string msg = "invalid config:";
        for (const auto& v : viol) msg += "\n  - " + v;
        throw ConfigError(msg);
    }

    bool write_files = !cfg.out_dir.empty();
    if (write_files) fs::create_directories(cfg.out_dir);

    ExperimentOutcome outcome;
    for (std::uint64_t seed : cfg.seeds) {
        datagen::TrainTest data = materialize_data(cfg.data, seed);
        datagen::Partition part =
            materialize_partition(cfg.partition, data.train, seed);
        numcore::ModelArch arch = make_arch(cfg.arch, data.train);

        for (const auto& sp : cfg.strategies) {
            federation::StrategyConfig sc = sp.cfg;
            sc.clients_per_round = cfg.clients_per_round;

            federation::Simulation sim(data, part, arch, sp.local, sc, seed,
                                       cfg.threads);
            if (cfg.diagnostics.retain_client_models) sim.retain_client_models(true);

            RunResult rr;
            rr.label = sp.label;
            rr.kind = sp.cfg.kind;
            rr.seed = seed;

            std::ofstream csv;
            if (write_files) {
                rr.metrics_path = cfg.out_dir + "/" + sp.label + "_seed" +
                                  std::to_string(seed) + ".csv";
                csv.open(rr.metrics_path);
                if (!csv)
                    throw std::runtime_error("cannot open " + rr.metrics_path +
                                             " for writing");
                csv.precision(17);
                write_metrics_header(csv);
            }

            for (int t = 1; t <= cfg.rounds; ++t) {
                federation::RoundRecord rec;
                try {
                    rec = sim.run_round();
                } catch (const DivergenceError& e) {
                    rr.diverged = true;
                    rr.diverged_at = e.round();
                    outcome.exit_code = 3;
                    break;
                }

                bool eval_row = (t % cfg.eval_every == 0) || t == cfg.rounds;
                if (eval_row) {
                    bool want_l1 = cfg.diagnostics.lambda1_every > 0 &&
                                   (t % cfg.diagnostics.lambda1_every == 0 ||
                                    t == cfg.rounds);
                    if (want_l1) {
                        flatness::PowerIterOpts po;
                        po.max_iter = cfg.diagnostics.power_max_iter;
                        po.tol = cfg.diagnostics.power_tol;
                        po.seed = rng::derive(seed, "eig", (std::uint64_t)t);
                        rec.lambda1 = flatness::power_iteration_lambda1(
                                          sim.state().w, arch, data.train, po)
                                          .lambda1;
                    }
                    if (!cfg.diagnostics.delta_eps) rec.delta_eps.reset();
                    rr.rows.push_back(rec);
                    if (write_files) write_metrics_row(csv, sp.label, rec);
                }

                bool want_landscape =
                    std::find(cfg.diagnostics.landscape_rounds.begin(),
                              cfg.diagnostics.landscape_rounds.end(),
                              t) != cfg.diagnostics.landscape_rounds.end();
                if (want_landscape && write_files) {
                    flatness::LandscapeSpec ls;
                    auto grid = flatness::landscape_2d(
                        sim.state().w, arch, data.train, ls,
                        rng::derive(seed, "landscape"));
                    flatness::write_landscape_csv(
                        cfg.out_dir + "/" + sp.label + "_seed" +
                            std::to_string(seed) + "_round" + std::to_string(t) +
                            "_landscape.csv",
                        grid);
                }
            }

            rr.final_acc = final_accuracy(rr.rows);
            rr.bits_total = sim.ledger().total();
            if (!rr.rows.empty()) rr.lambda1_final = rr.rows.back().lambda1;

            if (write_files) {
                Snapshot snap;
                snap.label = sp.label;
                snap.strategy = sc;
                snap.seed = seed;
                snap.arch = arch;
                snap.data = cfg.data;
                if (!snap.data.seed && snap.data.kind == "synthetic")
                    snap.data.seed = rng::derive(seed, "data");
                snap.partition = cfg.partition;
                if (!snap.partition.seed)
                    snap.partition.seed = rng::derive(seed, "partition");
                snap.local = sp.local;
                snap.server = sim.state();
                snap.client_sigma = sim.client_sigma();
                snap.client_ids = sim.last_client_ids();
                snap.client_models = sim.last_client_models();
                snap.ledger = sim.ledger();
                save_snapshot(snap, cfg.out_dir + "/" + sp.label + "_seed" +
                                        std::to_string(seed) + "_snapshot.json");
            }
            outcome.runs.push_back(std::move(rr));
        }
    }

    if (write_files) {
        std::ofstream sf(cfg.out_dir + "/summary.csv");
        if (!sf) throw std::runtime_error("cannot write summary.csv");
        sf.precision(17);
        sf << "label,seed,final_acc,diverged,diverged_at,bits_total,lambda1_final\n";
        for (const auto& rr : outcome.runs) {
            sf << rr.label << "," << rr.seed << ",";
            if (!std::isnan(rr.final_acc)) sf << rr.final_acc;
            sf << "," << (rr.diverged ? 1 : 0) << ",";
            if (rr.diverged) sf << rr.diverged_at;
            sf << "," << rr.bits_total << ",";
            if (rr.lambda1_final) sf << *rr.lambda1_final;
            sf << "\n";
        }

        if (cfg.strategies.size() > 1) {
            std::vector<ParsedRun> runs;
            for (const auto& rr : outcome.runs)
                if (!rr.rows.empty()) runs.push_back(parsed_from_result(rr));
            if (!runs.empty())
                write_compare_csv(cfg.out_dir + "/comparison.csv",
                                  compare_core(runs));
        }
    }
    return outcome;
}

// ---- snapshots -------------------------------------------------------------

namespace {

json data_spec_to_json(const DataSpec& d) {
    json j;
    j["kind"] = d.kind;
    if (d.kind == "csv") {
        j["train"] = d.train_csv;
        j["test"] = d.test_csv;
    } else {
        j["num_classes"] = d.num_classes;
        j["per_class"] = d.per_class;
        j["input_dim"] = d.input_dim;
        j["class_sep"] = d.class_sep;
        j["noise_sd"] = d.noise_sd;
        if (d.seed) j["seed"] = *d.seed;
    }
    return j;
}

DataSpec data_spec_from_json(const json& j, std::vector<std::string>& viol) {
    DataSpec d;
    fetch_string(j, "kind", "snapshot.data", viol, d.kind);
    fetch_int(j, "num_classes", "snapshot.data", viol, d.num_classes);
    fetch_int(j, "per_class", "snapshot.data", viol, d.per_class);
    fetch_int(j, "input_dim", "snapshot.data", viol, d.input_dim);
    fetch_double(j, "class_sep", "snapshot.data", viol, d.class_sep);
    fetch_double(j, "noise_sd", "snapshot.data", viol, d.noise_sd);
    std::uint64_t s;
    if (fetch_u64(j, "seed", "snapshot.data", viol, s)) d.seed = s;
    fetch_string(j, "train", "snapshot.data", viol, d.train_csv);
    fetch_string(j, "test", "snapshot.data", viol, d.test_csv);
    return d;
}

} // namespace

void save_snapshot(const Snapshot& snap, const std::string& path) {
    json j;
    j["format_version"] = snap.format_version;
    j["label"] = snap.label;
    j["seed"] = snap.seed;

    json js;
    js["kind"] = federation::to_string(snap.strategy.kind);
    js["clients_per_round"] = snap.strategy.clients_per_round;
    js["eta_s"] = snap.strategy.eta_s;
    js["rho_s"] = snap.strategy.rho.target;
    js["rho0"] = snap.strategy.rho.rho0;
    js["warmup_rounds"] = snap.strategy.rho.warmup;
    js["beta"] = snap.strategy.beta;
    js["admm"] = snap.strategy.admm;
    js["client_opt"] =
        snap.strategy.client_opt == localopt::BaseRule::sam ? "sam" : "sgd";
    j["strategy"] = js;

    json ja;
    ja["input_dim"] = snap.arch.input_dim;
    ja["hidden"] = snap.arch.hidden_dims;
    ja["num_classes"] = snap.arch.num_classes;
    ja["activation"] = act_to_string(snap.arch.activation);
    j["arch"] = ja;

    j["data"] = data_spec_to_json(snap.data);

    json jp;
    jp["clients"] = snap.partition.clients;
    jp["alpha"] = snap.partition.alpha;
    if (snap.partition.seed) jp["seed"] = *snap.partition.seed;
    j["partition"] = jp;

    j["local"] = local_to_json(snap.local);

    json jserver;
    jserver["round"] = snap.server.round;
    jserver["w"] = snap.server.w;
    jserver["sigma"] = snap.server.sigma;
    jserver["prev_pg"] = snap.server.prev_pg;
    j["server"] = jserver;

    j["client_sigma"] = snap.client_sigma;
    j["client_ids"] = snap.client_ids;
    j["client_models"] = snap.client_models;

    json jl;
    jl["down_bits"] = snap.ledger.down_bits;
    jl["up_bits"] = snap.ledger.up_bits;
    j["ledger"] = jl;

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << j.dump() << "\n";
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open snapshot " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": snapshot parse error: " + e.what());
    }

    std::vector<std::string> viol;
    Snapshot snap;
    fetch_int(j, "format_version", "snapshot", viol, snap.format_version);
    if (snap.format_version != 1)
        throw ConfigError(path + ": unsupported snapshot format_version " +
                          std::to_string(snap.format_version));
    fetch_string(j, "label", "snapshot", viol, snap.label);
    fetch_u64(j, "seed", "snapshot", viol, snap.seed);

    try {
        const json& js = j.at("strategy");
        snap.strategy.kind =
            federation::strategy_from_string(js.at("kind").get<std::string>());
        snap.strategy.clients_per_round = js.at("clients_per_round").get<int>();
        snap.strategy.eta_s = js.at("eta_s").get<double>();
        snap.strategy.rho.target = js.at("rho_s").get<double>();
        snap.strategy.rho.rho0 = js.at("rho0").get<double>();
        snap.strategy.rho.warmup = js.at("warmup_rounds").get<int>();
        snap.strategy.beta = js.at("beta").get<double>();
        snap.strategy.admm = js.at("admm").get<bool>();
        snap.strategy.client_opt = js.at("client_opt").get<std::string>() == "sam"
                                       ? localopt::BaseRule::sam
                                       : localopt::BaseRule::sgd;

        const json& ja = j.at("arch");
        snap.arch.input_dim = ja.at("input_dim").get<int>();
        snap.arch.hidden_dims = ja.at("hidden").get<std::vector<int>>();
        snap.arch.num_classes = ja.at("num_classes").get<int>();
        snap.arch.activation = ja.at("activation").get<std::string>() == "tanh"
                                   ? numcore::Activation::tanh
                                   : numcore::Activation::relu;

        snap.data = data_spec_from_json(j.at("data"), viol);

        const json& jp = j.at("partition");
        snap.partition.clients = jp.at("clients").get<int>();
        snap.partition.alpha = jp.at("alpha").get<double>();
        if (jp.contains("seed"))
            snap.partition.seed = jp.at("seed").get<std::uint64_t>();

        parse_local(j.at("local"), "snapshot.local", viol, snap.local);

        const json& jserver = j.at("server");
        snap.server.round = jserver.at("round").get<int>();
        snap.server.w = jserver.at("w").get<ParamVector>();
        snap.server.sigma = jserver.at("sigma").get<ParamVector>();
        snap.server.prev_pg = jserver.at("prev_pg").get<ParamVector>();

        snap.client_sigma = j.at("client_sigma").get<std::vector<ParamVector>>();
        snap.client_ids = j.at("client_ids").get<std::vector<int>>();
        snap.client_models = j.at("client_models").get<std::vector<ParamVector>>();

        const json& jl = j.at("ledger");
        snap.ledger.down_bits = jl.at("down_bits").get<std::uint64_t>();
        snap.ledger.up_bits = jl.at("up_bits").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(path + ": malformed snapshot: " + e.what());
    }
    if (!viol.empty()) {
        std::string msg = path + ": malformed snapshot:";
        for (const auto& v : viol) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
    return snap;
}

federation::Simulation restore_simulation(const Snapshot& snap,
                                          const datagen::TrainTest& data,
                                          const datagen::Partition& part,
                                          int threads) {
    if (snap.client_sigma.size() != part.client_indices.size())
        throw ConfigError("snapshot client_sigma count does not match partition");
    federation::Simulation sim(data, part, snap.arch, snap.local, snap.strategy,
                               snap.seed, threads);
    sim.mutable_state() = snap.server;
    sim.mutable_client_sigma() = snap.client_sigma;
    sim.mutable_ledger() = snap.ledger;
    sim.skip_sampling_rounds(snap.server.round);
    return sim;
}

} // namespace fedlab::experiment
