#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "tinyseg/optim.hpp"
#include "tinyseg/rng.hpp"

using namespace tinyseg;

namespace {

using DTensor = TensorT<double>;
using Params = std::map<std::string, DTensor>;

}  // namespace

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    Params params{{"w", DTensor({3}, {1.0, -2.0, 0.5})}};
    const auto before = params.at("w").data;
    AdamStateT<double> state;
    adam_step(params, Params{{"w", DTensor::zeros({3})}}, state, 0.01);
    CHECK(params.at("w").data == before);
    CHECK(state.t == 1);
}

TEST_CASE("first adam step moves each element by ~lr against the gradient") {
    // t=1: m_hat = g, v_hat = g^2, step = lr*g/(|g|+eps) = lr*sign(g)
    Params params{{"w", DTensor({4}, {0.0, 0.0, 0.0, 0.0})}};
    AdamStateT<double> state;
    const DTensor grad({4}, {3.7, -0.2, 155.0, -1e-3});
    adam_step(params, Params{{"w", grad}}, state, 0.001);
    for (std::size_t i = 0; i < 4; ++i) {
        const double delta = params.at("w").data[i];
        CHECK(std::abs(delta) == doctest::Approx(0.001).epsilon(1e-4));
        CHECK(delta * grad.data[i] < 0.0);
    }
}

TEST_CASE("update direction opposes the gradient for a fresh state") {
    Rng rng(5);
    Params params{{"w", DTensor::zeros({16})}};
    DTensor grad = DTensor::zeros({16});
    for (auto& v : grad.data) v = 2.0 * rng.uniform() - 1.0;
    AdamStateT<double> state;
    adam_step(params, Params{{"w", grad}}, state, 0.01);
    for (std::size_t i = 0; i < 16; ++i) {
        if (grad.data[i] == 0.0) continue;
        CHECK(params.at("w").data[i] * grad.data[i] < 0.0);
    }
}

TEST_CASE("adam descends the scalar quadratic") {
    auto run = [](int steps) {
        Params params{{"x", DTensor({1}, {5.0})}};
        AdamStateT<double> state;
        for (int t = 0; t < steps; ++t) {
            const double x = params.at("x").data[0];
            adam_step(params, Params{{"x", DTensor({1}, {2.0 * x})}}, state, 0.1);
        }
        return params.at("x").data[0];
    };
    CHECK(std::abs(run(100)) < 1.0);
    CHECK(std::abs(run(500)) < 1e-2);
}

TEST_CASE("adam is bit-deterministic") {
    auto run = [] {
        Params params{{"a", DTensor({2}, {1.0, 2.0})}, {"b", DTensor({1}, {-3.0})}};
        AdamStateT<double> state;
        for (int t = 0; t < 7; ++t)
            adam_step(params,
                      Params{{"a", DTensor({2}, {0.3 * t, -0.1})}, {"b", DTensor({1}, {1.1})}},
                      state, 0.01);
        return std::make_pair(params.at("a").data, params.at("b").data);
    };
    CHECK(run() == run());
}

TEST_CASE("adam validates gradients") {
    Params params{{"w", DTensor({2}, {0.0, 0.0})}};
    AdamStateT<double> state;
    CHECK_THROWS_AS(
        adam_step(params, Params{{"w", DTensor({2}, {1.0, std::nan("")})}}, state, 0.01),
        NonFiniteGradient);
    CHECK_THROWS_AS(adam_step(params, Params{{"w", DTensor({3}, {1, 2, 3})}}, state, 0.01),
                    ShapeMismatch);
    CHECK_THROWS_AS(adam_step(params, Params{{"nope", DTensor({2}, {1, 2})}}, state, 0.01),
                    ShapeMismatch);
}

TEST_CASE("lr schedule reproduces the paper's plateaus") {
    const LrSchedule sched{0.001, 0.75, 100};
    CHECK(lr_at_epoch(sched, 0) == 0.001);
    CHECK(lr_at_epoch(sched, 10) == 0.001);
    CHECK(lr_at_epoch(sched, 49) == 0.001);
    CHECK(lr_at_epoch(sched, 50) == 0.00075);
    CHECK(lr_at_epoch(sched, 74) == 0.00075);
    // 0.001*0.75^2 correctly rounded is one ulp above the decimal literal;
    // assert the decimal value to within that ulp and bitwise-stable plateaus
    const double third = lr_at_epoch(sched, 75);
    CHECK(std::abs(third - 0.0005625) <= std::numeric_limits<double>::epsilon() * 0.001);
    CHECK(lr_at_epoch(sched, 80) == third);
    CHECK(lr_at_epoch(sched, 99) == third);
    CHECK_THROWS_AS(lr_at_epoch(sched, -1), EpochOutOfRange);
    CHECK_THROWS_AS(lr_at_epoch(sched, 100), EpochOutOfRange);
}

TEST_CASE("lr schedule is a non-increasing step function with two drops") {
    const LrSchedule sched{0.002, 0.75, 37};
    int drops = 0;
    for (int e = 1; e < 37; ++e) {
        const double prev = lr_at_epoch(sched, e - 1);
        const double cur = lr_at_epoch(sched, e);
        CHECK(cur <= prev);
        if (cur < prev) ++drops;
    }
    CHECK(drops == 2);
    CHECK(lr_at_epoch(sched, 36) == doctest::Approx(0.002 * 0.75 * 0.75));
}
