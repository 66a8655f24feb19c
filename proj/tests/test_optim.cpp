#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "iajepa/optim.hpp"
#include "iajepa/rng.hpp"

using namespace iajepa;

TEST_CASE("zero gradient applies only the decoupled decay") {
    Tensor<double> p({1, 1}, {1.0});
    Tensor<double> g = Tensor<double>::zeros({1, 1});
    OptState<double> st(p.shape);
    AdamwHyper h;  // lr 1.5e-4, wd 0.05
    adamw_step(p, g, st, h);
    CHECK(p.data[0] == doctest::Approx(0.9999925).epsilon(1e-12));
    CHECK(st.t == 1);
}

TEST_CASE("bias-corrected first step moves by about lr") {
    Tensor<double> p({1, 1}, {0.0});
    Tensor<double> g({1, 1}, {2.0});
    OptState<double> st(p.shape);
    AdamwHyper h;
    h.weight_decay = 0.0;
    adamw_step(p, g, st, h);
    // mhat = g, vhat = g^2, so the step is lr * g/(|g|+eps) = lr up to eps.
    CHECK(p.data[0] == doctest::Approx(-1.5e-4).epsilon(1e-6));
}

TEST_CASE("two constant-gradient steps match a scalar reference") {
    const double lr = 1e-2, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
    double want = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        want -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * want);
    }

    Tensor<double> p({1, 1}, {0.3});
    Tensor<double> grad({1, 1}, {g});
    OptState<double> st(p.shape);
    AdamwHyper h{lr, wd, b1, b2, eps};
    adamw_step(p, grad, st, h);
    adamw_step(p, grad, st, h);
    CHECK(std::abs(p.data[0] - want) <= 1e-12);
    CHECK(st.t == 2);
}

TEST_CASE("non-finite gradients reject the step and leave state untouched") {
    Tensor<double> p({1, 2}, {1.0, 2.0});
    Tensor<double> g({1, 2}, {0.5, std::numeric_limits<double>::quiet_NaN()});
    OptState<double> st(p.shape);
    AdamwHyper h;
    CHECK_THROWS_AS(adamw_step(p, g, st, h), OptimError);
    CHECK(p.data[0] == 1.0);
    CHECK(p.data[1] == 2.0);
    CHECK(st.t == 0);
    CHECK(st.m.data[0] == 0.0);
}

TEST_CASE("shape mismatch is rejected") {
    Tensor<double> p({1, 2}, {1.0, 2.0});
    Tensor<double> g({2, 1}, {1.0, 2.0});
    OptState<double> st(p.shape);
    AdamwHyper h;
    CHECK_THROWS_AS(adamw_step(p, g, st, h), OptimError);
}

TEST_CASE("descends a quadratic bowl") {
    // f(p) = (p-3)^2 from p=0; AdamW without decay should approach 3.
    Tensor<double> p({1, 1}, {0.0});
    OptState<double> st(p.shape);
    AdamwHyper h;
    h.lr = 0.05;
    h.weight_decay = 0.0;
    for (int i = 0; i < 400; ++i) {
        Tensor<double> g({1, 1}, {2.0 * (p.data[0] - 3.0)});
        adamw_step(p, g, st, h);
    }
    CHECK(std::abs(p.data[0] - 3.0) < 0.05);
}
