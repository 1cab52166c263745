#include <doctest.h>

#include <cmath>

#include "matchnet/errors.hpp"
#include "matchnet/optim.hpp"
#include "matchnet/tensor.hpp"
#include "oracles.hpp"

using namespace matchnet;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), oracle::away_from_zero(rng, n));
}

void expect_values(const Tensor& t, std::vector<double> expected, double tol = 1e-12) {
    REQUIRE(t.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(t.values()[i] == doctest::Approx(expected[i]).epsilon(tol));
    }
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// receives a distinct upstream gradient.
Tensor probe(const Tensor& t) {
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = 0.3 + 0.7 * std::sin(1.7 * static_cast<double>(i) + 0.4);
    }
    return sum(mul(t, Tensor(t.shape(), w)));
}

} // namespace

TEST_CASE("matmul examples") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    expect_values(matmul(a, Tensor({2, 2}, {1, 0, 0, 1})), {1, 2, 3, 4});
    expect_values(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})), {11});
    expect_values(matmul(a, Tensor::zeros({2, 3})), {0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("conv1d examples") {
    expect_values(conv1d_temporal(Tensor({1, 3}, {1, 2, 3}), Tensor({1, 1, 3}, {1, 0, -1}), Tensor({1}, {0})),
                  {-2});
    Rng rng(3);
    const Tensor x = random_tensor(rng, {2, 6});
    expect_values(conv1d_temporal(x, Tensor::zeros({3, 2, 2}), Tensor::zeros({3})), std::vector<double>(15, 0.0));
    const Tensor row({1, 4}, {4, -1, 2, 7});
    expect_values(conv1d_temporal(row, Tensor({1, 1, 1}, {1}), Tensor({1}, {0})), {4, -1, 2, 7});
    CHECK_THROWS_AS(conv1d_temporal(row, Tensor::zeros({1, 1, 5}), Tensor::zeros({1})), DimensionError);
}

TEST_CASE("conv1d matches triple-loop reference") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t B = 1 + uniform_index(rng, 3);
        const std::size_t C = 1 + uniform_index(rng, 4);
        const std::size_t O = 1 + uniform_index(rng, 4);
        const std::size_t L = 1 + uniform_index(rng, 4);
        const std::size_t T = L + uniform_index(rng, 6);
        const Tensor x = random_tensor(rng, {B, C, T});
        const Tensor w = random_tensor(rng, {O, C, L});
        const Tensor b = random_tensor(rng, {O});
        const Tensor y = conv1d_temporal(x, w, b);
        const auto ref = oracle::conv_reference({x.values().begin(), x.values().end()}, B, C, T,
                                                {w.values().begin(), w.values().end()}, O, L,
                                                {b.values().begin(), b.values().end()});
        REQUIRE(y.shape() == Shape{B, O, T - L + 1});
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(std::abs(y.values()[i] - ref[i]) <= 1e-6);
        }
    }
}

TEST_CASE("activation examples") {
    expect_values(sigmoid(Tensor::scalar(0.0)), {0.5});
    expect_values(relu(Tensor({2}, {-3, 3})), {0, 3});
    Rng rng(1);
    const Tensor x({3}, {1, 2, 3});
    expect_values(dropout(x, 0.0, rng, true), {1, 2, 3});
    expect_values(dropout(x, 0.7, rng, false), {1, 2, 3});
    expect_values(concat({Tensor({1, 2}, {1, 2}), Tensor({1, 1}, {3})}, 1), {1, 2, 3});
    expect_values(concat({Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {3, 4})}, 0), {1, 2, 3, 4});
}

TEST_CASE("dropout keeps the expectation") {
    Rng rng(5);
    const Tensor x = Tensor::full({20000}, 1.0);
    const Tensor y = dropout(x, 0.3, rng, true);
    double total = 0.0;
    std::size_t zeros = 0;
    for (double v : y.values()) {
        total += v;
        zeros += v == 0.0;
    }
    CHECK(total / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
    CHECK(static_cast<double>(zeros) / 20000.0 == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("backward examples") {
    Tensor x({3}, {1, 2, 3}, true);
    sum(x).backward();
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});

    Tensor w = Tensor::scalar(0.0, true);
    sigmoid(w).backward();
    CHECK(w.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));

    Tensor a = Tensor::scalar(2.0, true);
    const Tensor y = add(mul(a, a), a);
    y.backward();
    y.backward();
    CHECK(a.grad()[0] == doctest::Approx(10.0));  // gradients accumulate
}

TEST_CASE("gradients match central differences for every layer type") {
    Rng rng(42);
    using Inputs = std::vector<Tensor>;
    struct Case {
        const char* name;
        Inputs inputs;
        std::function<Tensor(Inputs&)> f;
    };
    Rng drop_seed_source(9);
    const std::uint64_t drop_seed = drop_seed_source();
    std::vector<Case> cases = {
        {"matmul", {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
         [](Inputs& in) { return probe(matmul(in[0], in[1])); }},
        {"add", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
         [](Inputs& in) { return probe(add(in[0], in[1])); }},
        {"sub", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
         [](Inputs& in) { return probe(sub(in[0], in[1])); }},
        {"mul", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
         [](Inputs& in) { return probe(mul(in[0], in[1])); }},
        {"scale", {random_tensor(rng, {5})}, [](Inputs& in) { return probe(scale(in[0], -1.7)); }},
        {"add_row", {random_tensor(rng, {3, 4}), random_tensor(rng, {4})},
         [](Inputs& in) { return probe(add_row(in[0], in[1])); }},
        {"mean", {random_tensor(rng, {2, 3})}, [](Inputs& in) { return mean(mul(in[0], in[0])); }},
        {"log", {Tensor({4}, {0.3, 1.2, 2.5, 0.8})}, [](Inputs& in) { return probe(log(in[0])); }},
        {"relu", {random_tensor(rng, {6})}, [](Inputs& in) { return probe(relu(in[0])); }},
        {"sigmoid", {random_tensor(rng, {6})}, [](Inputs& in) { return probe(sigmoid(in[0])); }},
        {"reshape", {random_tensor(rng, {2, 6})},
         [](Inputs& in) { return probe(matmul(reshape(in[0], {3, 4}), Tensor::full({4, 1}, 0.5))); }},
        {"concat axis 1", {random_tensor(rng, {2, 2, 3}), random_tensor(rng, {2, 1, 3})},
         [](Inputs& in) { return probe(concat({in[0], in[1]}, 1)); }},
        {"concat axis 0", {random_tensor(rng, {1, 3}), random_tensor(rng, {2, 3})},
         [](Inputs& in) { return probe(concat({in[0], in[1]}, 0)); }},
        {"dropout", {random_tensor(rng, {10})},
         [drop_seed](Inputs& in) {
             Rng r(drop_seed);
             return probe(dropout(in[0], 0.4, r, true));
         }},
        {"conv1d", {random_tensor(rng, {2, 3, 7}), random_tensor(rng, {4, 3, 3}), random_tensor(rng, {4})},
         [](Inputs& in) { return probe(conv1d_temporal(in[0], in[1], in[2])); }},
        {"conv1d unbatched", {random_tensor(rng, {2, 5}), random_tensor(rng, {3, 2, 5}), random_tensor(rng, {3})},
         [](Inputs& in) { return probe(conv1d_temporal(in[0], in[1], in[2])); }},
        {"binary cross-entropy", {Tensor({2, 2}, {0.2, 0.7, 0.9, 0.4})},
         [](Inputs& in) {
             const std::vector<double> targets{0, 1, 1, 0};
             const std::vector<double> weights{1.0, 0.5, 0.0, 2.0};
             return binary_cross_entropy(in[0], targets, weights);
         }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        const auto result = oracle::check_gradients(c.inputs, c.f);
        CHECK(result.checked > 0);
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("optimizer examples") {
    SUBCASE("sgd single step") {
        std::vector<Parameter> p{{"w", Tensor({1}, {1.0}, true), true}};
        p[0].tensor.zero_grad();
        sum(p[0].tensor).backward();
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::Sgd;
        cfg.learning_rate = 0.1;
        Optimizer(cfg).step(p);
        CHECK(p[0].tensor.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("zero learning rate leaves parameters unchanged") {
        for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
            std::vector<Parameter> p{{"w", Tensor({2}, {1.0, -2.0}, true), true}};
            p[0].tensor.zero_grad();
            probe(p[0].tensor).backward();
            OptimizerConfig cfg;
            cfg.kind = kind;
            cfg.learning_rate = 0.0;
            cfg.l1 = 0.1;
            cfg.l2 = 0.1;
            Optimizer(cfg).step(p);
            CHECK(p[0].tensor.values()[0] == 1.0);
            CHECK(p[0].tensor.values()[1] == -2.0);
        }
    }
    SUBCASE("adam first step moves by the learning rate") {
        for (double g : {3.0, -0.02}) {
            std::vector<Parameter> p{{"w", Tensor({1}, {0.5}, true), true}};
            p[0].tensor.zero_grad();
            scale(sum(p[0].tensor), g).backward();
            OptimizerConfig cfg;
            cfg.learning_rate = 0.01;
            Optimizer(cfg).step(p);
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            const double expected = 0.5 - 0.01 * g / (std::abs(g) + 1e-8);
            CHECK(p[0].tensor.values()[0] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
    SUBCASE("elastic net shrinks weights but not biases") {
        std::vector<Parameter> p{{"w", Tensor({1}, {2.0}, true), true}, {"b", Tensor({1}, {2.0}, true), false}};
        zero_grad(p);
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::Sgd;
        cfg.learning_rate = 0.1;
        cfg.l1 = 0.5;
        cfg.l2 = 0.25;
        Optimizer(cfg).step(p);
        // d/dw [l1 |w| + l2 w^2] = 0.5 + 0.5 * 2 = 1.5
        CHECK(p[0].tensor.values()[0] == doctest::Approx(2.0 - 0.15).epsilon(1e-14));
        CHECK(p[1].tensor.values()[0] == 2.0);
    }
}
