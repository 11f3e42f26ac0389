#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "fedlab/eval.hpp"
#include "fedlab/model.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;
using numcore::Activation;
using numcore::Batch;
using numcore::ModelArch;

namespace {

ModelArch small_arch(Activation act = Activation::tanh) {
    ModelArch a;
    a.input_dim = 5;
    a.hidden_dims = {7, 6};
    a.num_classes = 3;
    a.activation = act;
    return a;
}

Batch random_batch(const ModelArch& arch, int rows, std::uint64_t seed) {
    auto g = rng::engine(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<int> ld(0, arch.num_classes - 1);
    Batch b;
    b.rows = rows;
    b.input_dim = arch.input_dim;
    b.inputs.resize((std::size_t)rows * arch.input_dim);
    b.labels.resize(rows);
    for (auto& x : b.inputs) x = nd(g);
    for (auto& y : b.labels) y = ld(g);
    return b;
}

ParamVector random_weights(const ModelArch& arch, std::uint64_t seed) {
    auto g = rng::engine(seed);
    std::normal_distribution<double> nd(0.0, 0.5);
    ParamVector w(arch.param_count());
    for (auto& x : w) x = nd(g);
    return w;
}

// Reference forward written sample by sample with scalar loops, sharing no
// code with the library path.
double reference_loss(const ParamVector& w, const ModelArch& arch,
                      const Batch& batch) {
    std::vector<int> sizes = arch.layer_sizes();
    double total = 0.0;
    for (int r = 0; r < batch.rows; ++r) {
        std::vector<double> act(batch.inputs.begin() + (std::size_t)r * arch.input_dim,
                                batch.inputs.begin() +
                                    (std::size_t)(r + 1) * arch.input_dim);
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            int in = sizes[l], out = sizes[l + 1];
            std::vector<double> next(out, 0.0);
            for (int o = 0; o < out; ++o) {
                double z = w[off + (std::size_t)out * in + o]; // bias
                for (int i = 0; i < in; ++i) z += w[off + (std::size_t)o * in + i] * act[i];
                bool last = l + 2 == sizes.size();
                if (last)
                    next[o] = z;
                else if (arch.activation == Activation::relu)
                    next[o] = z > 0.0 ? z : 0.0;
                else
                    next[o] = std::tanh(z);
            }
            act = next;
            off += (std::size_t)out * in + out;
        }
        // log-sum-exp written directly
        double zmax = act[0];
        for (double z : act) zmax = std::max(zmax, z);
        double sum = 0.0;
        for (double z : act) sum += std::exp(z - zmax);
        total += std::log(sum) + zmax - act[batch.labels[r]];
    }
    return total / batch.rows;
}

} // namespace

TEST_CASE("parameter count matches the layer shapes") {
    ModelArch a = small_arch();
    // 5*7+7 + 7*6+6 + 6*3+3 = 42 + 48 + 21
    CHECK(a.param_count() == 111);

    ModelArch desk;
    desk.input_dim = 10;
    desk.hidden_dims = {32};
    desk.num_classes = 4;
    CHECK(desk.param_count() == 484);

    auto segs = numcore::layer_segments(a);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0] == std::pair<int, int>{0, 42});
    CHECK(segs[1] == std::pair<int, int>{42, 48});
    CHECK(segs[2] == std::pair<int, int>{90, 21});
}

TEST_CASE("forward loss matches a scalar-path reference") {
    for (auto act : {Activation::tanh, Activation::relu}) {
        ModelArch a = small_arch(act);
        for (std::uint64_t s = 0; s < 5; ++s) {
            ParamVector w = random_weights(a, 100 + s);
            Batch b = random_batch(a, 9, 200 + s);
            double got = numcore::forward_loss(w, a, b).loss;
            double want = reference_loss(w, a, b);
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax cross entropy survives large logits") {
    ModelArch a;
    a.input_dim = 2;
    a.hidden_dims = {2};
    a.num_classes = 2;
    a.activation = Activation::relu;
    ParamVector w(a.param_count(), 0.0);
    // Push one logit far up: W2[0][0] large, hidden fed by big input.
    w[0] = 50.0;           // W1[0][0]
    w[6] = 50.0;           // W2 row 0, input 0
    Batch b;
    b.rows = 1;
    b.input_dim = 2;
    b.inputs = {30.0, 0.0};
    b.labels = {0};
    auto res = numcore::forward_loss(w, a, b);
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("backward gradient agrees with central differences") {
    for (auto act : {Activation::tanh, Activation::relu}) {
        ModelArch a = small_arch(act);
        ParamVector w = random_weights(a, 7);
        Batch b = random_batch(a, 11, 8);
        ParamVector g = numcore::backward(w, a, b);
        REQUIRE((int)g.size() == a.param_count());

        auto pick = rng::engine(9);
        std::uniform_int_distribution<int> coord(0, a.param_count() - 1);
        const double h = 1e-5;
        for (int probe = 0; probe < 100; ++probe) {
            int i = coord(pick);
            ParamVector wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            double fd = (numcore::forward_loss(wp, a, b).loss -
                         numcore::forward_loss(wm, a, b).loss) /
                        (2.0 * h);
            double denom = std::max(1e-6, std::abs(fd) + std::abs(g[i]));
            CHECK(std::abs(fd - g[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("backward reports the same loss as forward") {
    ModelArch a = small_arch();
    ParamVector w = random_weights(a, 3);
    Batch b = random_batch(a, 6, 4);
    double loss = -1.0;
    numcore::backward(w, a, b, &loss);
    CHECK(loss == doctest::Approx(numcore::forward_loss(w, a, b).loss).epsilon(1e-15));
}

TEST_CASE("hvp matches the loss-based second difference along v") {
    ModelArch a = small_arch(Activation::tanh);
    ParamVector w = random_weights(a, 21);
    Batch b = random_batch(a, 8, 22);
    auto g = rng::engine(23);
    std::normal_distribution<double> nd(0.0, 1.0);
    ParamVector v(a.param_count());
    for (auto& x : v) x = nd(g);

    ParamVector hv = numcore::hvp(w, a, b, v);
    double vHv = vec::dot(v, hv);

    const double h = 1e-4;
    ParamVector wp = w, wm = w;
    vec::axpy(wp, h, v);
    vec::axpy(wm, -h, v);
    double f0 = numcore::forward_loss(w, a, b).loss;
    double second = (numcore::forward_loss(wp, a, b).loss - 2.0 * f0 +
                     numcore::forward_loss(wm, a, b).loss) /
                    (h * h);
    CHECK(vHv == doctest::Approx(second).epsilon(2e-3));
}

TEST_CASE("hvp is linear in v and symmetric") {
    ModelArch a = small_arch(Activation::tanh);
    ParamVector w = random_weights(a, 31);
    Batch b = random_batch(a, 8, 32);
    auto g = rng::engine(33);
    std::normal_distribution<double> nd(0.0, 1.0);
    int d = a.param_count();
    ParamVector u(d), v(d);
    for (auto& x : u) x = nd(g);
    for (auto& x : v) x = nd(g);

    ParamVector hu = numcore::hvp(w, a, b, u);
    ParamVector hv = numcore::hvp(w, a, b, v);
    double left = vec::dot(u, hv);
    double right = vec::dot(v, hu);
    CHECK(std::abs(left - right) / std::max(1.0, std::abs(left)) < 1e-5);

    ParamVector v3 = vec::scale(v, 3.0);
    ParamVector hv3 = numcore::hvp(w, a, b, v3);
    for (int i = 0; i < d; ++i)
        CHECK(hv3[i] == doctest::Approx(3.0 * hv[i]).epsilon(1e-6));
}

TEST_CASE("hvp rejects the zero direction") {
    ModelArch a = small_arch();
    ParamVector w = random_weights(a, 1);
    Batch b = random_batch(a, 3, 2);
    ParamVector zero(a.param_count(), 0.0);
    CHECK_THROWS_AS((void)numcore::hvp(w, a, b, zero), std::invalid_argument);
}

TEST_CASE("flatten and unflatten round trip") {
    ModelArch a = small_arch();
    ParamVector w = random_weights(a, 77);
    auto layers = numcore::unflatten(w, a);
    REQUIRE(layers.size() == 3);
    CHECK(layers[0].in == 5);
    CHECK(layers[0].out == 7);
    CHECK(layers[2].out == 3);
    ParamVector back = numcore::flatten(layers);
    REQUIRE(back.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(back[i] == w[i]);
}

TEST_CASE("init weights are reproducible and respect the glorot bound") {
    ModelArch a = small_arch();
    ParamVector w1 = numcore::init_weights(a, 5);
    ParamVector w2 = numcore::init_weights(a, 5);
    ParamVector w3 = numcore::init_weights(a, 6);
    CHECK(w1 == w2);
    CHECK(w1 != w3);

    auto layers = numcore::unflatten(w1, a);
    for (const auto& l : layers) {
        double bound = std::sqrt(6.0 / (l.in + l.out));
        for (double x : l.W) CHECK(std::abs(x) <= bound);
        for (double x : l.b) CHECK(x == 0.0);
    }
}

TEST_CASE("shape validation throws") {
    ModelArch a = small_arch();
    Batch b = random_batch(a, 4, 50);
    ParamVector w = random_weights(a, 51);

    ParamVector bad = w;
    bad.pop_back();
    CHECK_THROWS_AS((void)numcore::forward_loss(bad, a, b), std::invalid_argument);

    Batch blab = b;
    blab.labels[0] = a.num_classes;
    CHECK_THROWS_AS((void)numcore::forward_loss(w, a, blab), std::invalid_argument);

    Batch empty;
    empty.input_dim = a.input_dim;
    CHECK_THROWS_AS((void)numcore::backward(w, a, empty), std::invalid_argument);

    ModelArch badarch = a;
    badarch.num_classes = 1;
    CHECK_THROWS_AS(badarch.validate(), ConfigError);

    CHECK_THROWS_AS((void)numcore::unflatten(bad, a), std::invalid_argument);
}

TEST_CASE("evaluate reports exact accuracy on a rigged model") {
    // Identity-ish net: one hidden unit per class passes the matching input
    // coordinate straight through, so argmax(logits) == argmax(inputs).
    ModelArch a;
    a.input_dim = 3;
    a.hidden_dims = {3};
    a.num_classes = 3;
    a.activation = Activation::relu;
    ParamVector w(a.param_count(), 0.0);
    for (int i = 0; i < 3; ++i) w[(std::size_t)i * 3 + i] = 1.0; // W1 = I
    std::size_t off = 12;                                        // after W1 + b1
    for (int i = 0; i < 3; ++i) w[off + (std::size_t)i * 3 + i] = 1.0; // W2 = I

    datagen::Dataset d;
    d.input_dim = 3;
    d.num_classes = 3;
    d.inputs = {5, 1, 0, 0, 4, 1, 1, 0, 7, 9, 2, 0};
    d.labels = {0, 1, 2, 1}; // last one is wrong on purpose
    auto m = eval::evaluate(w, a, d);
    CHECK(m.accuracy == doctest::Approx(0.75));

    d.labels = {0, 1, 2, 0};
    m = eval::evaluate(w, a, d);
    CHECK(m.accuracy == doctest::Approx(1.0));
}
