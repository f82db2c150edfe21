#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tinyseg/rng.hpp"
#include "tinyseg/tensor.hpp"

using namespace tinyseg;

namespace {

TensorT<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = TensorT<double>::zeros(std::move(shape));
    for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
    return t;
}

}  // namespace

TEST_CASE("elementwise add matches the definition") {
    auto a = TensorT<double>({2}, {1, 2});
    auto b = TensorT<double>({2}, {3, 4});
    auto c = add(a, b);
    CHECK(c.data == std::vector<double>{4, 6});
}

TEST_CASE("multiplying by scalar zero annihilates and kills the gradient") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({3}, {1.5, -2.0, 7.0}), true);
    auto y = mul(x, TensorT<double>::scalar_tensor(0.0));
    for (double v : y.data) CHECK(v == 0.0);
    tape.backward(sum(y));
    auto g = tape.grad(x);
    for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("product rule: d/dx (x*y) = y") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({1}, {2.0}), true);
    auto y = tape.leaf(TensorT<double>({1}, {5.0}), true);
    auto loss = sum(mul(x, y));
    tape.backward(loss);
    CHECK(tape.grad(x).data[0] == doctest::Approx(5.0));
    CHECK(tape.grad(y).data[0] == doctest::Approx(2.0));

    // the same value via the finite-difference oracle
    auto err = grad_check<double>(
        [](TapeT<double>& t, const TensorT<double>& xs) {
            auto ys = t.leaf(TensorT<double>({1}, {5.0}), false);
            return sum(mul(xs, ys));
        },
        TensorT<double>({1}, {2.0}), 1e-3);
    CHECK(err < 1e-8);
}

TEST_CASE("reductions") {
    auto s = sum(TensorT<double>({3}, {1, 2, 3}));
    CHECK(s.item() == doctest::Approx(6.0));
    auto m = mean(TensorT<double>::full({2, 3}, 2.5));
    CHECK(m.item() == doctest::Approx(2.5));

    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>::full({4}, 1.0), true);
    tape.backward(mean(x));
    for (double v : tape.grad(x).data) CHECK(v == doctest::Approx(0.25));

    TensorT<double> empty;
    CHECK_THROWS_AS(sum(empty), EmptyTensor);
    CHECK_THROWS_AS(mean(empty), EmptyTensor);
}

TEST_CASE("backward of sum broadcasts ones; accumulation sums branch gradients") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({3}, {1, 2, 3}), true);
    tape.backward(sum(x));
    CHECK(tape.grad(x).data == std::vector<double>{1, 1, 1});

    TapeT<double> tape2;
    auto x2 = tape2.leaf(TensorT<double>({3}, {1, 2, 3}), true);
    tape2.backward(add(sum(x2), sum(x2)));
    CHECK(tape2.grad(x2).data == std::vector<double>{2, 2, 2});

    TapeT<double> tape3;
    auto x3 = tape3.leaf(TensorT<double>({3}, {1, 2, 3}), true);
    tape3.backward(add(add(sum(x3), sum(x3)), sum(x3)));
    CHECK(tape3.grad(x3).data == std::vector<double>{3, 3, 3});
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({2}, {1, 2}), true);
    auto y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), NotScalar);
    TensorT<double> detached({1}, {3.0});
    CHECK_THROWS_AS(tape.backward(detached), DetachedTensor);
}

TEST_CASE("requires_grad=false tensors never receive a gradient") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({2}, {1, 2}), true);
    auto c = tape.leaf(TensorT<double>({2}, {5, 5}), false);
    tape.backward(sum(mul(x, c)));
    CHECK(tape.has_grad(x));
    CHECK_FALSE(tape.has_grad(c));
}

TEST_CASE("unreachable tensors have no gradient") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({2}, {1, 2}), true);
    auto orphan = tape.leaf(TensorT<double>({2}, {9, 9}), true);
    tape.backward(sum(x));
    CHECK(tape.has_grad(x));
    CHECK_FALSE(tape.has_grad(orphan));
}

TEST_CASE("shape mismatch is rejected; only scalar broadcast is allowed") {
    auto a = TensorT<double>({2}, {1, 2});
    auto b = TensorT<double>({3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, b), ShapeMismatch);
    CHECK_THROWS_AS(mul(a, b), ShapeMismatch);
    // scalar on either side works
    CHECK(add(a, TensorT<double>::scalar_tensor(1.0)).data == std::vector<double>{2, 3});
    CHECK(sub(TensorT<double>::scalar_tensor(10.0), a).data == std::vector<double>{9, 8});
}

TEST_CASE("domain validation: log, div, pow") {
    CHECK_THROWS_AS(log_op(TensorT<double>({1}, {0.0})), DomainError);
    CHECK_THROWS_AS(log_op(TensorT<double>({2}, {1.0, -3.0})), DomainError);
    CHECK_THROWS_AS(div(TensorT<double>({1}, {1.0}), TensorT<double>({1}, {0.0})), DomainError);
    CHECK_THROWS_AS(pow_scalar(TensorT<double>({1}, {-1.0}), 0.5), DomainError);
    CHECK_THROWS_AS(pow_scalar(TensorT<double>({1}, {0.0}), -1.0), DomainError);
}

TEST_CASE("forward ops stay finite on finite inputs") {
    Rng rng(11);
    auto x = random_tensor({4, 5}, rng, -50.0, 50.0);
    CHECK(add(x, x).all_finite());
    CHECK(mul(x, x).all_finite());
    CHECK(clamp(x, -1.0, 1.0).all_finite());
    CHECK(mean(x).all_finite());
}

TEST_CASE("tape replay determinism: identical inputs give bit-identical results") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        TapeT<double> tape;
        auto x = tape.leaf(random_tensor({3, 4}, rng), true);
        auto y = mean(mul(add_scalar(mul(x, x), 1.0), clamp(x, -0.5, 0.5)));
        tape.backward(y);
        return std::make_pair(y.item(), tape.grad(x).data);
    };
    auto [v1, g1] = run(42);
    auto [v2, g2] = run(42);
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("grad_check on exact-linear and quadratic functions") {
    auto err_sum = grad_check<double>(
        [](TapeT<double>&, const TensorT<double>& x) { return sum(x); },
        TensorT<double>({5}, {1, 2, 3, 4, 5}), 1e-3);
    CHECK(err_sum < 1e-10);

    // f = sum(x^2) at x = [3]: analytic derivative 6
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({1}, {3.0}), true);
    tape.backward(sum(mul(x, x)));
    CHECK(tape.grad(x).data[0] == doctest::Approx(6.0));
    auto err_sq = grad_check<double>(
        [](TapeT<double>&, const TensorT<double>& xs) { return sum(mul(xs, xs)); },
        TensorT<double>({1}, {3.0}), 1e-3);
    CHECK(err_sq < 1e-9);
}

TEST_CASE("every elementwise op passes the finite-difference oracle over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        auto x = random_tensor({2, 3}, rng, 0.2, 2.0);  // positive domain for log/pow
        auto c = random_tensor({2, 3}, rng, -1.0, 1.0);

        struct Case {
            const char* name;
            std::function<TensorT<double>(TapeT<double>&, const TensorT<double>&)> f;
        };
        const Case cases[] = {
            {"add", [&](TapeT<double>& t, const TensorT<double>& xs) {
                 return mean(add(xs, t.leaf(c, false)));
             }},
            {"sub", [&](TapeT<double>& t, const TensorT<double>& xs) {
                 return mean(sub(t.leaf(c, false), xs));
             }},
            {"mul", [&](TapeT<double>& t, const TensorT<double>& xs) {
                 return mean(mul(xs, t.leaf(c, false)));
             }},
            {"div", [&](TapeT<double>&, const TensorT<double>& xs) {
                 return mean(div(TensorT<double>::scalar_tensor(1.0), xs));
             }},
            {"neg", [](TapeT<double>&, const TensorT<double>& xs) { return mean(neg(xs)); }},
            {"scale", [](TapeT<double>&, const TensorT<double>& xs) {
                 return mean(scale(xs, -2.5));
             }},
            {"pow", [](TapeT<double>&, const TensorT<double>& xs) {
                 return mean(pow_scalar(xs, 0.9));
             }},
            {"log", [](TapeT<double>&, const TensorT<double>& xs) { return mean(log_op(xs)); }},
            {"clamp", [](TapeT<double>&, const TensorT<double>& xs) {
                 // bounds chosen away from sample values so FD never crosses a kink
                 return mean(clamp(xs, 0.1, 3.0));
             }},
            {"sum_mean", [](TapeT<double>&, const TensorT<double>& xs) {
                 return add(sum(xs), mean(xs));
             }},
        };
        for (const auto& kase : cases) {
            INFO(kase.name << " seed " << seed);
            CHECK(grad_check<double>(kase.f, x, 1e-4) < 1e-5);
        }
    }
}

TEST_CASE("gradient map reports every reached node") {
    TapeT<double> tape;
    auto x = tape.leaf(TensorT<double>({2}, {1, 2}), true);
    auto y = mul(x, x);
    auto loss = sum(y);
    tape.backward(loss);
    auto map = tape.gradients();
    CHECK(map.count(x.node) == 1);
    CHECK(map.count(y.node) == 1);
    CHECK(map.count(loss.node) == 1);
    CHECK(map.at(x.node).data == std::vector<double>{2, 4});
}
