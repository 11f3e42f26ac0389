#include "fedlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fedlab/rng.hpp"

namespace fedlab::datagen {

namespace {

void append_sample(Dataset& ds, const std::vector<double>& x, int label) {
    ds.inputs.insert(ds.inputs.end(), x.begin(), x.end());
    ds.labels.push_back(label);
}

} // namespace

TrainTest make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2)
        throw ConfigError("data.num_classes must be >= 2 (got " +
                          std::to_string(spec.num_classes) + ")");
    if (spec.per_class < 1)
        throw ConfigError("data.per_class must be >= 1 (got " +
                          std::to_string(spec.per_class) + ")");
    if (spec.input_dim < 2)
        throw ConfigError("data.input_dim must be >= 2 (got " +
                          std::to_string(spec.input_dim) + ")");
    if (spec.class_sep < 0.0 || spec.noise_sd < 0.0)
        throw ConfigError("data.class_sep and data.noise_sd must be >= 0");

    auto g = rng::engine(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Class centers: class_sep times a random unit direction each.
    std::vector<std::vector<double>> centers(spec.num_classes);
    for (auto& c : centers) {
        c.resize(spec.input_dim);
        double n = 0.0;
        do {
            n = 0.0;
            for (double& x : c) {
                x = gauss(g);
                n += x * x;
            }
            n = std::sqrt(n);
        } while (n < 1e-12);
        for (double& x : c) x = spec.class_sep * x / n;
    }

    TrainTest out;
    out.train.input_dim = out.test.input_dim = spec.input_dim;
    out.train.num_classes = out.test.num_classes = spec.num_classes;

    // 80/20 split per class; the samples are iid so taking the tail as the
    // test block keeps the split stratified and deterministic.
    int test_n = spec.per_class / 5;
    int train_n = spec.per_class - test_n;
    std::vector<double> x(spec.input_dim);
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.per_class; ++i) {
            for (int d = 0; d < spec.input_dim; ++d)
                x[d] = centers[c][d] + spec.noise_sd * gauss(g);
            append_sample(i < train_n ? out.train : out.test, x, c);
        }
    }
    return out;
}

Partition partition_dirichlet(const Dataset& data, int num_clients, double alpha,
                              std::uint64_t seed) {
    if (num_clients < 1)
        throw ConfigError("partition.clients must be >= 1 (got " +
                          std::to_string(num_clients) + ")");
    if (alpha < 0.0)
        throw ConfigError("partition.alpha must be >= 0 (got " +
                          std::to_string(alpha) + ")");
    int N = data.size();
    int shard = N / num_clients;
    if (shard < 1)
        throw ConfigError("partition.clients exceeds the number of samples (" +
                          std::to_string(num_clients) + " clients, " +
                          std::to_string(N) + " samples)");

    int K = data.num_classes;
    auto g = rng::engine(seed);

    // Per-class index pools, shuffled once; assignment pops from the back.
    std::vector<std::vector<int>> pools(K);
    for (int i = 0; i < N; ++i) pools[data.labels[i]].push_back(i);
    for (auto& p : pools) std::shuffle(p.begin(), p.end(), g);

    Partition part;
    part.alpha = alpha;
    part.client_indices.assign(num_clients, {});

    if (alpha == 0.0) {
        // Degenerate single-class shards, classes assigned round robin.
        for (int k = 0; k < num_clients; ++k) {
            int cls = k % K;
            auto& pool = pools[cls];
            if ((int)pool.size() < shard)
                throw ConfigError("partition.alpha = 0 needs " + std::to_string(shard) +
                                  " samples of class " + std::to_string(cls) +
                                  " for client " + std::to_string(k) +
                                  " but only " + std::to_string(pool.size()) +
                                  " remain");
            auto& idx = part.client_indices[k];
            idx.assign(pool.end() - shard, pool.end());
            pool.erase(pool.end() - shard, pool.end());
            std::sort(idx.begin(), idx.end());
        }
        return part;
    }

    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> p(K);
    for (int k = 0; k < num_clients; ++k) {
        // Dir(alpha) via normalized gamma draws. For very small alpha every
        // draw can underflow to zero; that limit is a point mass, so place
        // it on one class uniformly.
        double total = 0.0;
        for (int c = 0; c < K; ++c) {
            p[c] = gamma(g);
            total += p[c];
        }
        if (total < 1e-300) {
            std::fill(p.begin(), p.end(), 0.0);
            p[(int)(unif(g) * K) % K] = 1.0;
        }

        auto& idx = part.client_indices[k];
        for (int s = 0; s < shard; ++s) {
            double mass = 0.0;
            for (int c = 0; c < K; ++c)
                if (!pools[c].empty()) mass += p[c];
            int chosen = -1;
            if (mass <= 0.0) {
                // The client's preferred classes ran dry; fall back to the
                // first class that still has samples.
                for (int c = 0; c < K && chosen < 0; ++c)
                    if (!pools[c].empty()) chosen = c;
            } else {
                double u = unif(g) * mass;
                double acc = 0.0;
                for (int c = 0; c < K; ++c) {
                    if (pools[c].empty()) continue;
                    acc += p[c];
                    if (u <= acc) {
                        chosen = c;
                        break;
                    }
                }
                if (chosen < 0) {
                    for (int c = K - 1; c >= 0 && chosen < 0; --c)
                        if (!pools[c].empty()) chosen = c;
                }
            }
            idx.push_back(pools[chosen].back());
            pools[chosen].pop_back();
        }
        std::sort(idx.begin(), idx.end());
    }
    return part;
}

std::vector<int> shard_sizes(const Partition& part) {
    std::vector<int> sizes;
    sizes.reserve(part.client_indices.size());
    for (const auto& idx : part.client_indices) sizes.push_back((int)idx.size());
    return sizes;
}

std::vector<int> client_label_histogram(const Dataset& data, const Partition& part,
                                        int client) {
    if (client < 0 || client >= (int)part.client_indices.size())
        throw std::invalid_argument("client index out of range");
    std::vector<int> hist(data.num_classes, 0);
    for (int i : part.client_indices[client]) ++hist[data.labels[i]];
    return hist;
}

double mean_label_entropy(const Dataset& data, const Partition& part) {
    double total = 0.0;
    for (int k = 0; k < (int)part.client_indices.size(); ++k) {
        auto hist = client_label_histogram(data, part, k);
        double n = 0.0;
        for (int c : hist) n += c;
        if (n == 0.0) continue;
        double h = 0.0;
        for (int c : hist) {
            if (c == 0) continue;
            double q = c / n;
            h -= q * std::log(q);
        }
        total += h;
    }
    return total / part.client_indices.size();
}

void export_csv(const Dataset& data, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.precision(17);
    for (int d = 0; d < data.input_dim; ++d) f << "f" << d << ",";
    f << "label\n";
    for (int i = 0; i < data.size(); ++i) {
        for (int d = 0; d < data.input_dim; ++d)
            f << data.inputs[(std::size_t)i * data.input_dim + d] << ",";
        f << data.labels[i] << "\n";
    }
    if (!f) throw std::runtime_error("write failed on " + path);
}

Dataset import_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ConfigError(path + ": missing header row");

    int cols = 1 + (int)std::count(line.begin(), line.end(), ',');
    if (cols < 2)
        throw ConfigError(path + ": header needs feature columns and a label");

    Dataset ds;
    ds.input_dim = cols - 1;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c < cols; ++c) {
            if (!std::getline(ss, cell, ','))
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                         ": expected " + std::to_string(cols) +
                                         " columns");
            try {
                if (c < cols - 1)
                    ds.inputs.push_back(std::stod(cell));
                else
                    ds.labels.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                         ": cannot parse '" + cell + "'");
            }
        }
    }
    for (int y : ds.labels) {
        if (y < 0)
            throw ConfigError(path + ": negative label " + std::to_string(y));
        ds.num_classes = std::max(ds.num_classes, y + 1);
    }
    return ds;
}

} // namespace fedlab::datagen
