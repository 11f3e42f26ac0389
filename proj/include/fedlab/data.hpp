#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlab/errors.hpp"

namespace fedlab::datagen {

// One labeled split stored densely, row-major.
struct Dataset {
    std::vector<double> inputs; // size() x input_dim
    std::vector<int> labels;
    int input_dim = 0;
    int num_classes = 0;

    int size() const { return (int)labels.size(); }
};

struct TrainTest {
    Dataset train;
    Dataset test;
};

struct SyntheticSpec {
    int num_classes = 4;
    int per_class = 250;
    int input_dim = 10;
    double class_sep = 3.0;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;
};

// Gaussian class clusters: centers are class_sep times random unit
// directions, samples add isotropic noise_sd noise. Split 80/20 per class.
TrainTest make_synthetic(const SyntheticSpec& spec);

struct Partition {
    std::vector<std::vector<int>> client_indices;
    double alpha = 0.0;
};

// Latent Dirichlet assignment over equal-size shards of floor(N / C)
// samples. Per client, class proportions are drawn from Dir(alpha);
// exhausted classes are dropped and the remaining proportions renormalized.
// alpha == 0 degenerates to deterministic one-class shards, class k % K for
// client k. Leftover samples after flooring are not assigned.
Partition partition_dirichlet(const Dataset& data, int num_clients, double alpha,
                              std::uint64_t seed);

std::vector<int> shard_sizes(const Partition& part);

// Per-client label counts and the mean Shannon entropy (nats) across
// clients, used by partition-stats and the heterogeneity checks.
std::vector<int> client_label_histogram(const Dataset& data, const Partition& part,
                                        int client);
double mean_label_entropy(const Dataset& data, const Partition& part);

// Plain CSV with header f0,...,f{d-1},label. Import infers num_classes from
// the largest label seen.
void export_csv(const Dataset& data, const std::string& path);
Dataset import_csv(const std::string& path);

} // namespace fedlab::datagen
