#include "fedlab/flatness.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <random>

#include "fedlab/eval.hpp"
#include "fedlab/rng.hpp"

namespace fedlab::flatness {

EigenEstimate power_iteration(const HvpFn& hvp_fn, int dim,
                              const PowerIterOpts& opts) {
    if (dim < 1) throw std::invalid_argument("power_iteration: dim must be >= 1");
    if (opts.max_iter < 1)
        throw std::invalid_argument("power_iteration: max_iter must be >= 1");

    auto g = rng::engine(opts.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ParamVector v(dim);
    for (double& x : v) x = gauss(g);
    double nv = vec::norm(v);
    if (nv < 1e-12) {
        std::fill(v.begin(), v.end(), 1.0 / std::sqrt((double)dim));
    } else {
        for (double& x : v) x /= nv;
    }

    EigenEstimate est;
    double lambda_prev = 0.0;
    for (int it = 1; it <= opts.max_iter; ++it) {
        ParamVector hv = hvp_fn(v);
        vec::check_same_size(hv, v);
        est.iterations = it;

        double nhv = vec::norm(hv);
        if (nhv < 1e-10) {
            // Curvature vanished along the iterate: flat (or numerically
            // flat) objective. Report zero and mark it.
            est.lambda1 = 0.0;
            est.residual = nhv;
            est.degenerate = true;
            return est;
        }

        double lambda = vec::dot(v, hv); // Rayleigh quotient, v is unit
        double res = 0.0;
        for (int i = 0; i < dim; ++i) {
            double r = hv[i] - lambda * v[i];
            res += r * r;
        }
        est.lambda1 = lambda;
        est.residual = std::sqrt(res);

        bool converged =
            it > 1 && std::fabs(lambda - lambda_prev) <=
                          opts.tol * std::max(1.0, std::fabs(lambda));
        lambda_prev = lambda;
        for (int i = 0; i < dim; ++i) v[i] = hv[i] / nhv;
        if (converged) break;
    }
    return est;
}

EigenEstimate power_iteration_lambda1(const ParamVector& w,
                                      const numcore::ModelArch& arch,
                                      const datagen::Dataset& data,
                                      const PowerIterOpts& opts) {
    if (opts.batch_rows <= 0 || opts.batch_rows >= data.size()) {
        numcore::Batch full = eval::full_batch(data);
        HvpFn fn = [&w, &arch, full](const ParamVector& v) {
            return numcore::hvp(w, arch, full, v);
        };
        return power_iteration(fn, (int)w.size(), opts);
    }

    // Stochastic variant: a fresh uniformly drawn batch per iteration.
    auto g = std::make_shared<std::mt19937_64>(
        rng::engine(rng::derive(opts.seed, "pi_batch")));
    int n = data.size();
    int rows = opts.batch_rows;
    HvpFn fn = [&w, &arch, &data, g, n, rows](const ParamVector& v) {
        std::vector<int> idx(rows);
        std::uniform_int_distribution<int> pick(0, n - 1);
        for (int& i : idx) i = pick(*g);
        numcore::Batch b = eval::make_batch(data, idx);
        return numcore::hvp(w, arch, b, v);
    };
    return power_iteration(fn, (int)w.size(), opts);
}

std::vector<InterpPoint> interpolate_1d(const ParamVector& w_a,
                                        const ParamVector& w_b,
                                        const numcore::ModelArch& arch,
                                        const datagen::Dataset& data,
                                        int num_points) {
    vec::check_same_size(w_a, w_b);
    if (num_points < 2)
        throw std::invalid_argument("interpolate_1d: num_points must be >= 2");

    std::vector<InterpPoint> out;
    out.reserve(num_points);
    ParamVector w(w_a.size());
    for (int i = 0; i < num_points; ++i) {
        double gamma = -1.0 + 3.0 * (double)i / (double)(num_points - 1);
        for (std::size_t j = 0; j < w.size(); ++j)
            w[j] = gamma * w_a[j] + (1.0 - gamma) * w_b[j];
        auto ev = eval::evaluate(w, arch, data);
        out.push_back({gamma, ev.loss, ev.accuracy});
    }
    return out;
}

std::pair<ParamVector, ParamVector> landscape_directions(
    const ParamVector& w, const std::vector<std::pair<int, int>>& segments,
    std::uint64_t seed) {
    auto g = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ParamVector d1(w.size()), d2(w.size());
    for (double& x : d1) x = gauss(g);
    for (double& x : d2) x = gauss(g);

    // Per-block rescale: each block of the direction gets the norm of the
    // corresponding weight block, which removes scale ambiguity between
    // models when the grids are compared.
    auto normalize = [&](ParamVector& d) {
        for (auto [off, len] : segments) {
            if (off < 0 || len <= 0 || off + len > (int)w.size())
                throw std::invalid_argument("landscape_directions: bad segment");
            double wn = 0.0, dn = 0.0;
            for (int i = off; i < off + len; ++i) {
                wn += w[i] * w[i];
                dn += d[i] * d[i];
            }
            wn = std::sqrt(wn);
            dn = std::sqrt(dn);
            double s = dn < 1e-12 ? 0.0 : wn / dn;
            for (int i = off; i < off + len; ++i) d[i] *= s;
        }
    };
    normalize(d1);
    normalize(d2);
    return {d1, d2};
}

LandscapeGrid landscape_2d(const LossFn& loss_fn, const ParamVector& w,
                           const ParamVector& d1, const ParamVector& d2,
                           const LandscapeSpec& spec) {
    vec::check_same_size(w, d1);
    vec::check_same_size(w, d2);
    if (spec.resolution < 2)
        throw std::invalid_argument("landscape resolution must be >= 2");
    if (spec.range <= 0.0)
        throw std::invalid_argument("landscape range must be > 0");

    LandscapeGrid grid;
    grid.d1 = d1;
    grid.d2 = d2;
    int R = spec.resolution;
    grid.xs.resize(R);
    grid.ys.resize(R);
    for (int i = 0; i < R; ++i) {
        double c = -spec.range + 2.0 * spec.range * (double)i / (double)(R - 1);
        grid.xs[i] = c;
        grid.ys[i] = c;
    }
    grid.loss.resize((std::size_t)R * R);
    ParamVector p(w.size());
    for (int iy = 0; iy < R; ++iy) {
        for (int ix = 0; ix < R; ++ix) {
            double x = grid.xs[ix], y = grid.ys[iy];
            for (std::size_t j = 0; j < w.size(); ++j)
                p[j] = w[j] + x * d1[j] + y * d2[j];
            grid.loss[(std::size_t)iy * R + ix] = loss_fn(p);
        }
    }
    return grid;
}

LandscapeGrid landscape_2d(const ParamVector& w, const numcore::ModelArch& arch,
                           const datagen::Dataset& data, const LandscapeSpec& spec,
                           std::uint64_t seed) {
    auto [d1, d2] = landscape_directions(w, numcore::layer_segments(arch), seed);
    numcore::Batch full = eval::full_batch(data);
    LossFn loss_fn = [&arch, &full](const ParamVector& p) {
        return numcore::forward_loss(p, arch, full).loss;
    };
    return landscape_2d(loss_fn, w, d1, d2, spec);
}

std::optional<double> delta_eps(const ParamVector& prev_pg,
                                const ParamVector& curr_pg, double rho) {
    vec::check_same_size(prev_pg, curr_pg);
    double np = vec::norm(prev_pg);
    double nc = vec::norm(curr_pg);
    if (np < 1e-12 || nc < 1e-12) return std::nullopt;
    double s = 0.0;
    for (std::size_t i = 0; i < prev_pg.size(); ++i) {
        double d = prev_pg[i] / np - curr_pg[i] / nc;
        s += d * d;
    }
    return rho * std::sqrt(s);
}

double param_norm(const ParamVector& w) { return vec::norm(w); }

std::vector<EigRow> local_global_eigs(const std::vector<HvpFn>& local_fns,
                                      const std::vector<HvpFn>& global_fns,
                                      const std::vector<int>& ids, int dim,
                                      const PowerIterOpts& opts) {
    if (local_fns.size() != global_fns.size() || local_fns.size() != ids.size())
        throw std::invalid_argument("local_global_eigs: table shape mismatch");
    std::vector<EigRow> rows;
    rows.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        EigRow row;
        row.client = ids[i];
        PowerIterOpts lo = opts;
        lo.seed = rng::derive(opts.seed, "eig_local", ids[i]);
        PowerIterOpts go = opts;
        go.seed = rng::derive(opts.seed, "eig_global", ids[i]);
        row.local_eig = power_iteration(local_fns[i], dim, lo);
        row.global_eig = power_iteration(global_fns[i], dim, go);
        rows.push_back(row);
    }
    return rows;
}

std::vector<EigRow> local_global_eigs(const std::vector<ParamVector>& models,
                                      const std::vector<int>& ids,
                                      const datagen::Dataset& train,
                                      const datagen::Partition& part,
                                      const numcore::ModelArch& arch,
                                      const PowerIterOpts& opts) {
    if (models.size() != ids.size())
        throw std::invalid_argument("local_global_eigs: one model per id required");
    numcore::Batch global_b = eval::full_batch(train);

    std::vector<HvpFn> local_fns, global_fns;
    std::vector<numcore::Batch> shard_batches;
    shard_batches.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || id >= (int)part.client_indices.size())
            throw std::invalid_argument("local_global_eigs: client id out of range");
        shard_batches.push_back(eval::make_batch(train, part.client_indices[id]));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const ParamVector& w = models[i];
        const numcore::Batch& shard_b = shard_batches[i];
        local_fns.push_back([&w, &arch, &shard_b](const ParamVector& v) {
            return numcore::hvp(w, arch, shard_b, v);
        });
        global_fns.push_back([&w, &arch, &global_b](const ParamVector& v) {
            return numcore::hvp(w, arch, global_b, v);
        });
    }
    return local_global_eigs(local_fns, global_fns, ids, (int)arch.param_count(),
                             opts);
}

namespace {
std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.precision(17);
    return f;
}
} // namespace

void write_interp_csv(const std::string& path,
                      const std::vector<InterpPoint>& points) {
    auto f = open_out(path);
    f << "gamma,loss,acc\n";
    for (const auto& p : points)
        f << p.gamma << "," << p.loss << "," << p.acc << "\n";
}

void write_landscape_csv(const std::string& path, const LandscapeGrid& grid) {
    auto f = open_out(path);
    f << "x,y,loss\n";
    int R = (int)grid.xs.size();
    for (int iy = 0; iy < R; ++iy)
        for (int ix = 0; ix < R; ++ix)
            f << grid.xs[ix] << "," << grid.ys[iy] << ","
              << grid.loss[(std::size_t)iy * R + ix] << "\n";
}

void write_eigs_csv(const std::string& path, const std::vector<EigRow>& rows) {
    auto f = open_out(path);
    f << "client,lambda1_local,lambda1_global\n";
    for (const auto& r : rows)
        f << r.client << "," << r.local_eig.lambda1 << "," << r.global_eig.lambda1
          << "\n";
}

} // namespace fedlab::flatness
