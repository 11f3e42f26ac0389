#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

namespace fedlab::flatness {

// Curvature and geometry probes are written against plain functionals so
// that closed-form quadratics can exercise the exact code paths the model
// wrappers use.
using HvpFn = std::function<ParamVector(const ParamVector&)>;
using LossFn = std::function<double(const ParamVector&)>;

struct PowerIterOpts {
    int max_iter = 20;
    double tol = 1e-4;      // relative change of lambda between iterations
    std::uint64_t seed = 0; // start vector draw
    int batch_rows = 0;     // model wrapper: 0 = full dataset, else fresh
                            // random batches of this size per iteration
};

struct EigenEstimate {
    double lambda1 = 0.0;
    int iterations = 0;
    double residual = 0.0;  // ||H v - lambda v|| at the reported pair
    bool degenerate = false;
};

// Power iteration with Rayleigh-quotient readout. Converges to the
// eigenvalue of largest magnitude, reported with its sign. A vanishing
// Hessian-vector product is flagged degenerate with lambda1 = 0.
EigenEstimate power_iteration(const HvpFn& hvp_fn, int dim,
                              const PowerIterOpts& opts);

// Model curvature of the mean loss over `data` at w.
EigenEstimate power_iteration_lambda1(const ParamVector& w,
                                      const numcore::ModelArch& arch,
                                      const datagen::Dataset& data,
                                      const PowerIterOpts& opts);

struct InterpPoint {
    double gamma = 0.0;
    double loss = 0.0;
    double acc = 0.0;
};

// Loss and accuracy along w(gamma) = gamma * w_a + (1 - gamma) * w_b for
// num_points evenly spaced gamma in [-1, 2]. gamma = 0 lands on w_b and
// gamma = 1 on w_a.
std::vector<InterpPoint> interpolate_1d(const ParamVector& w_a,
                                        const ParamVector& w_b,
                                        const numcore::ModelArch& arch,
                                        const datagen::Dataset& data,
                                        int num_points);

struct LandscapeSpec {
    int resolution = 25;
    double range = 1.0; // grid spans [-range, range] on both axes
};

struct LandscapeGrid {
    std::vector<double> xs, ys;
    std::vector<double> loss; // row-major, loss[iy * resolution + ix]
    ParamVector d1, d2;
};

// Two random directions drawn from the seed alone, then each layer block
// rescaled to that block's weight norm. The raw draw depends only on the
// seed, so compared models share the same underlying directions.
std::pair<ParamVector, ParamVector> landscape_directions(
    const ParamVector& w, const std::vector<std::pair<int, int>>& segments,
    std::uint64_t seed);

LandscapeGrid landscape_2d(const LossFn& loss_fn, const ParamVector& w,
                           const ParamVector& d1, const ParamVector& d2,
                           const LandscapeSpec& spec);

LandscapeGrid landscape_2d(const ParamVector& w, const numcore::ModelArch& arch,
                           const datagen::Dataset& data, const LandscapeSpec& spec,
                           std::uint64_t seed);

// rho-scaled distance between the normalized previous and current
// pseudo-gradients. Undefined (nullopt) while either vector is zero.
std::optional<double> delta_eps(const ParamVector& prev_pg,
                                const ParamVector& curr_pg, double rho);

double param_norm(const ParamVector& w);

struct EigRow {
    int client = -1;
    EigenEstimate local_eig;
    EigenEstimate global_eig;
};

// Sharpness table: per client, lambda1 of its model on its own shard and on
// the global training set.
std::vector<EigRow> local_global_eigs(const std::vector<HvpFn>& local_fns,
                                      const std::vector<HvpFn>& global_fns,
                                      const std::vector<int>& ids, int dim,
                                      const PowerIterOpts& opts);

std::vector<EigRow> local_global_eigs(const std::vector<ParamVector>& models,
                                      const std::vector<int>& ids,
                                      const datagen::Dataset& train,
                                      const datagen::Partition& part,
                                      const numcore::ModelArch& arch,
                                      const PowerIterOpts& opts);

void write_interp_csv(const std::string& path,
                      const std::vector<InterpPoint>& points);
void write_landscape_csv(const std::string& path, const LandscapeGrid& grid);
void write_eigs_csv(const std::string& path, const std::vector<EigRow>& rows);

} // namespace fedlab::flatness
