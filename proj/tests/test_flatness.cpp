#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "fedlab/eval.hpp"
#include "fedlab/flatness.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;
using flatness::PowerIterOpts;

namespace {

// H v for a diagonal quadratic, the closed-form oracle for the eigensolver.
flatness::HvpFn diag_hvp(std::vector<double> diag) {
    return [diag = std::move(diag)](const ParamVector& v) {
        ParamVector out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = diag[i] * v[i];
        return out;
    };
}

struct ModelFixture {
    numcore::ModelArch arch;
    datagen::TrainTest data;
    ParamVector w;
};

ModelFixture model_fixture(std::uint64_t seed = 2) {
    ModelFixture f;
    datagen::SyntheticSpec s;
    s.num_classes = 3;
    s.per_class = 40;
    s.input_dim = 5;
    s.class_sep = 2.0;
    s.noise_sd = 0.8;
    s.seed = seed;
    f.data = datagen::make_synthetic(s);
    f.arch.input_dim = 5;
    f.arch.hidden_dims = {6};
    f.arch.num_classes = 3;
    f.arch.activation = numcore::Activation::tanh;
    f.w = numcore::init_weights(f.arch, seed + 1);
    return f;
}

} // namespace

TEST_CASE("power iteration nails a diagonal spectrum") {
    std::vector<double> d(10);
    for (int i = 0; i < 10; ++i) d[i] = i + 1.0;
    PowerIterOpts opts;
    opts.seed = 3;
    opts.max_iter = 20;
    opts.tol = 1e-6;
    auto est = flatness::power_iteration(diag_hvp(d), 10, opts);
    CHECK(!est.degenerate);
    CHECK(est.iterations <= 20);
    CHECK(est.lambda1 == doctest::Approx(10.0).epsilon(0.01));

    opts.max_iter = 200;
    opts.tol = 1e-12;
    est = flatness::power_iteration(diag_hvp(d), 10, opts);
    CHECK(est.lambda1 == doctest::Approx(10.0).epsilon(1e-8));
    // the residual decays like the square root of the eigenvalue error
    CHECK(est.residual < 1e-4);
}

TEST_CASE("a 1.1 spectral gap converges within one percent") {
    // lambda1 = 1.1, lambda2 = 1.0, plus bulk.
    std::vector<double> d = {1.1, 1.0, 0.9, 0.5, 0.1, -0.4};
    PowerIterOpts opts;
    opts.max_iter = 400;
    opts.tol = 1e-10;
    for (std::uint64_t s = 0; s < 5; ++s) {
        opts.seed = s;
        auto est = flatness::power_iteration(diag_hvp(d), 6, opts);
        CHECK(est.lambda1 == doctest::Approx(1.1).epsilon(0.01));
    }
}

TEST_CASE("the dominant eigenvalue keeps its sign") {
    std::vector<double> d = {-5.0, 1.0, 2.0};
    PowerIterOpts opts;
    opts.max_iter = 300;
    opts.tol = 1e-12;
    opts.seed = 4;
    auto est = flatness::power_iteration(diag_hvp(d), 3, opts);
    CHECK(est.lambda1 == doctest::Approx(-5.0).epsilon(0.01));
}

TEST_CASE("a flat objective is flagged degenerate") {
    auto est = flatness::power_iteration(diag_hvp({0.0, 0.0, 0.0}), 3, {});
    CHECK(est.degenerate);
    CHECK(est.lambda1 == 0.0);
    CHECK(est.iterations == 1);
}

TEST_CASE("power iteration argument checks") {
    CHECK_THROWS_AS((void)flatness::power_iteration(diag_hvp({1.0}), 0, {}),
                    std::invalid_argument);
    PowerIterOpts opts;
    opts.max_iter = 0;
    CHECK_THROWS_AS((void)flatness::power_iteration(diag_hvp({1.0}), 1, opts),
                    std::invalid_argument);
}

TEST_CASE("model lambda1 probes are reproducible") {
    ModelFixture f = model_fixture();
    PowerIterOpts opts;
    opts.seed = 11;
    opts.max_iter = 30;
    auto a = flatness::power_iteration_lambda1(f.w, f.arch, f.data.train, opts);
    auto b = flatness::power_iteration_lambda1(f.w, f.arch, f.data.train, opts);
    CHECK(a.lambda1 == b.lambda1);
    CHECK(a.iterations == b.iterations);

    opts.batch_rows = 16; // stochastic batches are seeded too
    auto c = flatness::power_iteration_lambda1(f.w, f.arch, f.data.train, opts);
    auto e = flatness::power_iteration_lambda1(f.w, f.arch, f.data.train, opts);
    CHECK(c.lambda1 == e.lambda1);
}

TEST_CASE("interpolation hits both endpoints and the grid is even") {
    ModelFixture f = model_fixture(5);
    ParamVector w_a = numcore::init_weights(f.arch, 50);
    ParamVector w_b = numcore::init_weights(f.arch, 51);
    auto pts = flatness::interpolate_1d(w_a, w_b, f.arch, f.data.test, 7);
    REQUIRE(pts.size() == 7);
    CHECK(pts.front().gamma == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(pts.back().gamma == doctest::Approx(2.0).epsilon(1e-15));
    for (int i = 1; i < 7; ++i)
        CHECK(pts[i].gamma - pts[i - 1].gamma == doctest::Approx(0.5).epsilon(1e-12));

    auto at_b = eval::evaluate(w_b, f.arch, f.data.test);
    auto at_a = eval::evaluate(w_a, f.arch, f.data.test);
    CHECK(pts[2].gamma == doctest::Approx(0.0));
    CHECK(pts[2].loss == doctest::Approx(at_b.loss).epsilon(1e-12));
    CHECK(pts[2].acc == doctest::Approx(at_b.accuracy).epsilon(1e-12));
    CHECK(pts[4].gamma == doctest::Approx(1.0));
    CHECK(pts[4].loss == doctest::Approx(at_a.loss).epsilon(1e-12));

    CHECK_THROWS_AS(
        (void)flatness::interpolate_1d(w_a, w_b, f.arch, f.data.test, 1),
        std::invalid_argument);
}

TEST_CASE("interpolating a model with itself is flat") {
    ModelFixture f = model_fixture(6);
    auto pts = flatness::interpolate_1d(f.w, f.w, f.arch, f.data.test, 5);
    for (const auto& p : pts) CHECK(p.loss == doctest::Approx(pts[0].loss));
}

TEST_CASE("landscape grid matches an analytic quadratic exactly") {
    // f(p) = sum a_i (p_i - c_i)^2 evaluated on the exact grid points.
    const int dim = 6;
    std::vector<double> a = {1.0, 2.0, 0.5, 3.0, 1.5, 0.25};
    std::vector<double> c = {0.1, -0.2, 0.3, 0.0, 0.5, -0.4};
    flatness::LossFn loss_fn = [&](const ParamVector& p) {
        double s = 0.0;
        for (int i = 0; i < dim; ++i) s += a[i] * (p[i] - c[i]) * (p[i] - c[i]);
        return s;
    };
    ParamVector w = {0.2, 0.1, -0.1, 0.4, 0.0, 0.3};
    std::vector<std::pair<int, int>> segs = {{0, 3}, {3, 3}};
    auto [d1, d2] = flatness::landscape_directions(w, segs, 9);

    flatness::LandscapeSpec spec;
    spec.resolution = 5;
    spec.range = 0.8;
    auto grid = flatness::landscape_2d(loss_fn, w, d1, d2, spec);
    REQUIRE(grid.xs.size() == 5);
    CHECK(grid.xs.front() == doctest::Approx(-0.8).epsilon(1e-15));
    CHECK(grid.xs.back() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(grid.xs[2] == doctest::Approx(0.0).epsilon(1e-15));

    for (int iy = 0; iy < 5; ++iy) {
        for (int ix = 0; ix < 5; ++ix) {
            ParamVector p(dim);
            for (int j = 0; j < dim; ++j)
                p[j] = w[j] + grid.xs[ix] * d1[j] + grid.ys[iy] * d2[j];
            CHECK(grid.loss[iy * 5 + ix] ==
                  doctest::Approx(loss_fn(p)).epsilon(1e-12));
        }
    }
}

TEST_CASE("landscape directions carry the weight block norms") {
    ModelFixture f = model_fixture(7);
    auto segs = numcore::layer_segments(f.arch);
    auto [d1, d2] = flatness::landscape_directions(f.w, segs, 13);

    for (auto [off, len] : segs) {
        double wn = 0.0, dn = 0.0;
        for (int i = off; i < off + len; ++i) {
            wn += f.w[i] * f.w[i];
            dn += d1[i] * d1[i];
        }
        CHECK(std::sqrt(dn) == doctest::Approx(std::sqrt(wn)).epsilon(1e-12));
    }

    // The raw draws depend only on the seed: under a different model the
    // rescaled blocks stay parallel to the first set.
    ParamVector w2 = numcore::init_weights(f.arch, 99);
    auto [e1, e2] = flatness::landscape_directions(w2, segs, 13);
    for (auto [off, len] : segs) {
        double dot = 0.0, n1 = 0.0, n2 = 0.0;
        for (int i = off; i < off + len; ++i) {
            dot += d1[i] * e1[i];
            n1 += d1[i] * d1[i];
            n2 += e1[i] * e1[i];
        }
        CHECK(dot / std::sqrt(n1 * n2) == doctest::Approx(1.0).epsilon(1e-12));
    }

    auto [f1, f2] = flatness::landscape_directions(f.w, segs, 14);
    CHECK(f1 != d1);
}

TEST_CASE("delta eps closed forms") {
    ParamVector a{1.0, 0.0}, b{0.0, 1.0}, z{0.0, 0.0};
    auto v = flatness::delta_eps(a, b, 0.1);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(0.1 * std::sqrt(2.0)).epsilon(1e-12));

    auto same = flatness::delta_eps(a, vec::scale(a, 7.0), 0.1);
    REQUIRE(same.has_value());
    CHECK(*same == doctest::Approx(0.0));

    auto opposite = flatness::delta_eps(a, vec::scale(a, -2.0), 0.25);
    REQUIRE(opposite.has_value());
    CHECK(*opposite == doctest::Approx(0.5).epsilon(1e-12));

    CHECK(!flatness::delta_eps(z, b, 0.1).has_value());
    CHECK(!flatness::delta_eps(a, z, 0.1).has_value());
}

TEST_CASE("local and global eigenvalue tables line up") {
    std::vector<flatness::HvpFn> locals = {diag_hvp({4.0, 1.0, 0.5}),
                                           diag_hvp({-6.0, 2.0, 1.0})};
    std::vector<flatness::HvpFn> globals = {diag_hvp({2.0, 1.0, 0.5}),
                                            diag_hvp({2.0, 1.0, 0.5})};
    PowerIterOpts opts;
    opts.max_iter = 300;
    opts.tol = 1e-12;
    opts.seed = 21;
    auto rows = flatness::local_global_eigs(locals, globals, {3, 9}, 3, opts);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].client == 3);
    CHECK(rows[1].client == 9);
    CHECK(rows[0].local_eig.lambda1 == doctest::Approx(4.0).epsilon(0.01));
    CHECK(rows[1].local_eig.lambda1 == doctest::Approx(-6.0).epsilon(0.01));
    CHECK(rows[0].global_eig.lambda1 == doctest::Approx(2.0).epsilon(0.01));
    CHECK(rows[1].global_eig.lambda1 == doctest::Approx(2.0).epsilon(0.01));

    CHECK_THROWS_AS((void)flatness::local_global_eigs(locals, globals, {1}, 3, opts),
                    std::invalid_argument);
}

TEST_CASE("csv writers emit their headers") {
    ModelFixture f = model_fixture(8);
    auto pts = flatness::interpolate_1d(f.w, f.w, f.arch, f.data.test, 3);
    flatness::write_interp_csv("interp_test.csv", pts);
    std::ifstream fi("interp_test.csv");
    std::string line;
    std::getline(fi, line);
    CHECK(line == "gamma,loss,acc");
    int rows = 0;
    while (std::getline(fi, line)) rows += !line.empty();
    CHECK(rows == 3);
    std::remove("interp_test.csv");

    flatness::LandscapeSpec spec;
    spec.resolution = 3;
    auto grid = flatness::landscape_2d(f.w, f.arch, f.data.test, spec, 4);
    flatness::write_landscape_csv("land_test.csv", grid);
    std::ifstream fl("land_test.csv");
    std::getline(fl, line);
    CHECK(line == "x,y,loss");
    rows = 0;
    while (std::getline(fl, line)) rows += !line.empty();
    CHECK(rows == 9);
    std::remove("land_test.csv");
}
