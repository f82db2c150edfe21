#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "tinyseg/layers.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/tensor.hpp"

using namespace tinyseg;

namespace {

using DTensor = TensorT<double>;

DTensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = DTensor::zeros(std::move(shape));
    for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// Values bounded away from 0 so finite differences never cross the relu kink.
DTensor relu_safe_tensor(Shape shape, Rng& rng) {
    auto t = random_tensor(std::move(shape), rng);
    for (auto& v : t.data)
        if (std::abs(v) < 0.02) v = v < 0 ? v - 0.02 : v + 0.02;
    return t;
}

// Distinct, well-separated values so maxpool argmax is stable under FD steps.
DTensor pool_safe_tensor(Shape shape, Rng& rng) {
    auto t = DTensor::zeros(std::move(shape));
    std::vector<double> levels(t.data.size());
    for (std::size_t i = 0; i < levels.size(); ++i)
        levels[i] = 0.05 * static_cast<double>(i) + 0.02 * rng.uniform();
    for (std::size_t i = levels.size() - 1; i > 0; --i)
        std::swap(levels[i], levels[rng.uniform_int(i + 1)]);
    t.data = std::move(levels);
    return t;
}

// Independent oracle: direct gather convolution with explicit bounds
// checks, structured like a textbook quadruple loop rather than the
// production shift-and-accumulate kernel.
DTensor naive_conv2d(const DTensor& in, const DTensor& w, const DTensor& b, int stride, int pad) {
    const int N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = w.shape[0], kH = w.shape[2], kW = w.shape[3];
    const int Hout = (H + 2 * pad - kH) / stride + 1;
    const int Wout = (W + 2 * pad - kW) / stride + 1;
    auto out = DTensor::zeros({N, Cout, Hout, Wout});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < Hout; ++oy)
                for (int ox = 0; ox < Wout; ++ox) {
                    double acc = b.data[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < kH; ++ky)
                            for (int kx = 0; kx < kW; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                                acc += in.data[((static_cast<std::size_t>(n) * Cin + ci) * H + iy) * W + ix] *
                                       w.data[((static_cast<std::size_t>(co) * Cin + ci) * kH + ky) * kW + kx];
                            }
                    out.data[((static_cast<std::size_t>(n) * Cout + co) * Hout + oy) * Wout + ox] = acc;
                }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
    Rng rng(1);
    auto x = random_tensor({2, 1, 4, 5}, rng);
    auto w = DTensor({1, 1, 1, 1}, {1.0});
    auto b = DTensor::zeros({1});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape == x.shape);
    CHECK(y.data == x.data);
}

TEST_CASE("conv2d 3x3 ones kernel over 3x3 ones input gives 9") {
    auto x = DTensor::full({1, 1, 3, 3}, 1.0);
    auto w = DTensor::full({1, 1, 3, 3}, 1.0);
    auto b = DTensor::zeros({1});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape == Shape{1, 1, 1, 1});
    CHECK(y.data[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches the naive direct-convolution oracle") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        auto x = random_tensor({2, 3, 8, 8}, rng);
        auto w = random_tensor({4, 3, 3, 3}, rng);
        auto b = random_tensor({4}, rng);
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        auto got = conv2d(x, w, b, stride, pad);
        auto want = naive_conv2d(x, w, b, stride, pad);
        REQUIRE(got.shape == want.shape);
        CHECK(max_abs_diff(got.data, want.data) < 1e-5);
    }
}

TEST_CASE("conv2d validates shapes and geometry") {
    auto x = DTensor::zeros({1, 2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, DTensor::zeros({1, 3, 3, 3}), DTensor::zeros({1}), 1, 1),
                    ShapeMismatch);
    CHECK_THROWS_AS(conv2d(x, DTensor::zeros({1, 2, 3, 3}), DTensor::zeros({2}), 1, 1),
                    ShapeMismatch);
    CHECK_THROWS_AS(conv2d(x, DTensor::zeros({1, 2, 5, 5}), DTensor::zeros({1}), 1, 0),
                    InvalidGeometry);
}

TEST_CASE("conv2d gradients pass finite differences for input, weight and bias") {
    Rng rng(3);
    auto x = random_tensor({2, 2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto wrt_input = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(conv2d(probe, t.leaf(w, false), t.leaf(b, false), 1, 1));
    };
    auto wrt_weight = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(conv2d(t.leaf(x, false), probe, t.leaf(b, false), 1, 1));
    };
    auto wrt_bias = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(conv2d(t.leaf(x, false), t.leaf(w, false), probe, 1, 1));
    };
    CHECK(grad_check<double>(wrt_input, x, 1e-4) < 1e-5);
    CHECK(grad_check<double>(wrt_weight, w, 1e-4) < 1e-5);
    CHECK(grad_check<double>(wrt_bias, b, 1e-4) < 1e-5);
}

// ---------------------------------------------------------------------------
// conv_transpose2d
// ---------------------------------------------------------------------------

TEST_CASE("conv_transpose2d spreads a single tap across the kernel footprint") {
    auto x = DTensor({1, 1, 1, 1}, {3.5});
    auto w = DTensor::full({1, 1, 2, 2}, 1.0);
    auto y = conv_transpose2d(x, w, 2);
    CHECK(y.shape == Shape{1, 1, 2, 2});
    for (double v : y.data) CHECK(v == doctest::Approx(3.5));
}

TEST_CASE("conv_transpose2d doubles spatial dims for stride-2 kernel-2") {
    Rng rng(5);
    for (int c : {1, 3}) {
        auto x = random_tensor({2, c, 4, 4}, rng);
        auto w = random_tensor({c, 2 * c, 2, 2}, rng);
        auto y = conv_transpose2d(x, w, 2);
        CHECK(y.shape == Shape{2, 2 * c, 8, 8});
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(seed);
        // geometry with exact stride division so the adjoint shapes align
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        const int k = 2 + static_cast<int>(rng.uniform_int(2));
        int H = k + 2 * static_cast<int>(rng.uniform_int(4)) * stride - 2 * pad;
        while (H < k) H += stride;
        const int Hout = (H + 2 * pad - k) / stride + 1;
        REQUIRE((H + 2 * pad - k) % stride == 0);

        auto x = random_tensor({2, 3, H, H}, rng);
        auto w = random_tensor({4, 3, k, k}, rng);  // conv layout [Co,Ci,k,k]
        auto zero_bias = DTensor::zeros({4});
        auto ax = conv2d(x, w, zero_bias, stride, pad);
        REQUIRE(ax.shape == Shape{2, 4, Hout, Hout});
        auto y = random_tensor(ax.shape, rng);
        // same weight tensor read as [in,out,k,k] gives the transpose map
        auto aty = conv_transpose2d(y, w, stride, pad);
        REQUIRE(aty.shape == x.shape);
        const double lhs = dot(ax.data, y.data);
        const double rhs = dot(x.data, aty.data);
        const double scale_ref = std::max(1.0, std::abs(lhs));
        CHECK(std::abs(lhs - rhs) / scale_ref < 1e-10);
    }
}

TEST_CASE("conv_transpose2d gradients pass finite differences") {
    Rng rng(7);
    auto x = random_tensor({1, 2, 3, 3}, rng);
    auto w = random_tensor({2, 3, 2, 2}, rng);
    auto wrt_input = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(conv_transpose2d(probe, t.leaf(w, false), 2));
    };
    auto wrt_weight = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(conv_transpose2d(t.leaf(x, false), probe, 2));
    };
    CHECK(grad_check<double>(wrt_input, x, 1e-4) < 1e-5);
    CHECK(grad_check<double>(wrt_weight, w, 1e-4) < 1e-5);
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

TEST_CASE("maxpool2d takes the window max") {
    auto x = DTensor({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = maxpool2d(x);
    CHECK(y.shape == Shape{1, 1, 1, 1});
    CHECK(y.data[0] == 4.0);
}

TEST_CASE("maxpool2d matches brute-force windowed max on random input") {
    Rng rng(11);
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto y = maxpool2d(x);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int oy = 0; oy < 3; ++oy)
                for (int ox = 0; ox < 3; ++ox) {
                    double m = -1e300;
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx)
                            m = std::max(m, x.data[((static_cast<std::size_t>(n) * 3 + c) * 6 +
                                                    oy * 2 + ky) * 6 + ox * 2 + kx]);
                    CHECK(y.data[((static_cast<std::size_t>(n) * 3 + c) * 3 + oy) * 3 + ox] ==
                          doctest::Approx(m));
                }
}

TEST_CASE("maxpool2d tie-break routes gradient to the first window element") {
    TapeT<double> tape;
    auto x = tape.leaf(DTensor::full({1, 1, 2, 2}, 1.0), true);
    auto y = maxpool2d(x);
    CHECK(y.data[0] == 1.0);
    tape.backward(sum(y));
    CHECK(tape.grad(x).data == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("maxpool2d conserves gradient mass and passes finite differences") {
    Rng rng(13);
    auto x = pool_safe_tensor({1, 2, 4, 4}, rng);
    TapeT<double> tape;
    auto xl = tape.leaf(x, true);
    tape.backward(sum(maxpool2d(xl)));
    double mass = 0;
    for (double v : tape.grad(xl).data) mass += v;
    CHECK(mass == doctest::Approx(8.0));  // 2 channels x 2x2 outputs, unit upstream

    auto f = [](TapeT<double>&, const DTensor& probe) { return mean(maxpool2d(probe)); };
    CHECK(grad_check<double>(f, x, 1e-4) < 1e-8);
}

TEST_CASE("maxpool2d rejects odd spatial dims") {
    CHECK_THROWS_AS(maxpool2d(DTensor::zeros({1, 1, 3, 4})), OddSpatialDim);
    CHECK_THROWS_AS(maxpool2d(DTensor::zeros({1, 1, 4, 5})), OddSpatialDim);
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

namespace {

BatchNorm2dStateT<double> fresh_bn(int channels) {
    BatchNorm2dStateT<double> s;
    s.gamma = DTensor::full({channels}, 1.0);
    s.beta = DTensor::zeros({channels});
    s.running_mean = DTensor::zeros({channels});
    s.running_var = DTensor::full({channels}, 1.0);
    return s;
}

}  // namespace

TEST_CASE("batchnorm2d zero-variance input maps to ~0 in train mode") {
    auto s = fresh_bn(2);
    auto x = DTensor::full({2, 2, 3, 3}, 4.2);
    auto y = batchnorm2d(x, s, Mode::train);
    for (double v : y.data) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("batchnorm2d train output has per-channel mean 0 and biased var 1") {
    Rng rng(17);
    auto s = fresh_bn(3);
    auto x = random_tensor({2, 3, 4, 4}, rng, -2.0, 5.0);
    auto y = batchnorm2d(x, s, Mode::train);
    const int m = 2 * 4 * 4;
    for (int c = 0; c < 3; ++c) {
        double mu = 0, var = 0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 16; ++i)
                mu += y.data[(static_cast<std::size_t>(n) * 3 + c) * 16 + i];
        mu /= m;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 16; ++i) {
                const double d = y.data[(static_cast<std::size_t>(n) * 3 + c) * 16 + i] - mu;
                var += d * d;
            }
        var /= m;
        CHECK(std::abs(mu) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator shifts it slightly
    }
}

TEST_CASE("batchnorm2d updates running stats with momentum and unbiased variance") {
    auto s = fresh_bn(1);
    s.momentum = 0.1;
    // batch: N=1, C=1, 2x2 -> values 1,2,3,4: mean 2.5, biased var 1.25, unbiased 5/3
    auto x = DTensor({1, 1, 2, 2}, {1, 2, 3, 4});
    batchnorm2d(x, s, Mode::train);
    CHECK(s.running_mean.data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5));
    CHECK(s.running_var.data[0] == doctest::Approx(0.9 * 1.0 + 0.1 * (5.0 / 3.0)));
}

TEST_CASE("batchnorm2d eval mode is a pure function of input and running stats") {
    Rng rng(19);
    auto s = fresh_bn(2);
    s.running_mean = DTensor({2}, {0.5, -1.0});
    s.running_var = DTensor({2}, {2.0, 0.3});
    auto x = random_tensor({1, 2, 3, 3}, rng);
    const auto rm_before = s.running_mean.data;
    const auto rv_before = s.running_var.data;
    auto y1 = batchnorm2d(x, s, Mode::eval);
    auto y2 = batchnorm2d(x, s, Mode::eval);
    CHECK(y1.data == y2.data);
    CHECK(s.running_mean.data == rm_before);
    CHECK(s.running_var.data == rv_before);
}

TEST_CASE("batchnorm2d rejects degenerate train batches") {
    auto s = fresh_bn(3);
    CHECK_THROWS_AS(batchnorm2d(DTensor::zeros({1, 3, 1, 1}), s, Mode::train), DegenerateBatch);
    CHECK_NOTHROW(batchnorm2d(DTensor::zeros({1, 3, 1, 1}), s, Mode::eval));
}

TEST_CASE("batchnorm2d gradient vs finite differences on 2x3x4x4") {
    Rng rng(23);
    auto x = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng, -0.5, 0.5);
    // weight the output so the gradient is not uniform; fresh running stats
    // are created inside each closure so FD re-runs never see mutated state
    auto weights = random_tensor({2, 3, 4, 4}, rng);
    auto wrt_input = [&](TapeT<double>& t, const DTensor& probe) {
        auto rm = DTensor::zeros({3});
        auto rv = DTensor::full({3}, 1.0);
        auto y = batchnorm2d(probe, t.leaf(gamma, false), t.leaf(beta, false), rm, rv, 0.1, 1e-5,
                             Mode::train);
        return mean(mul(y, t.leaf(weights, false)));
    };
    auto wrt_gamma = [&](TapeT<double>& t, const DTensor& probe) {
        auto rm = DTensor::zeros({3});
        auto rv = DTensor::full({3}, 1.0);
        auto y = batchnorm2d(t.leaf(x, false), probe, t.leaf(beta, false), rm, rv, 0.1, 1e-5,
                             Mode::train);
        return mean(mul(y, t.leaf(weights, false)));
    };
    auto wrt_beta = [&](TapeT<double>& t, const DTensor& probe) {
        auto rm = DTensor::zeros({3});
        auto rv = DTensor::full({3}, 1.0);
        auto y = batchnorm2d(t.leaf(x, false), t.leaf(gamma, false), probe, rm, rv, 0.1, 1e-5,
                             Mode::train);
        return mean(mul(y, t.leaf(weights, false)));
    };
    CHECK(grad_check<double>(wrt_input, x, 1e-4) < 1e-4);
    CHECK(grad_check<double>(wrt_gamma, gamma, 1e-4) < 1e-5);
    CHECK(grad_check<double>(wrt_beta, beta, 1e-4) < 1e-5);

    auto eval_wrt_input = [&](TapeT<double>& t, const DTensor& probe) {
        auto rm = DTensor({3}, {0.2, -0.1, 0.4});
        auto rv = DTensor({3}, {1.5, 0.7, 2.0});
        auto y = batchnorm2d(probe, t.leaf(gamma, false), t.leaf(beta, false), rm, rv, 0.1, 1e-5,
                             Mode::eval);
        return mean(mul(y, t.leaf(weights, false)));
    };
    CHECK(grad_check<double>(eval_wrt_input, x, 1e-4) < 1e-6);
}

// ---------------------------------------------------------------------------
// relu / sigmoid
// ---------------------------------------------------------------------------

TEST_CASE("relu definition, idempotence and subgradient") {
    auto y = relu(DTensor({3}, {-1, 0, 2}));
    CHECK(y.data == std::vector<double>{0, 0, 2});
    CHECK(relu(y).data == y.data);

    TapeT<double> tape;
    auto x = tape.leaf(DTensor({3}, {-1, 0, 2}), true);
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x).data == std::vector<double>{0, 0, 1});  // 0 at the kink

    Rng rng(29);
    auto probe = relu_safe_tensor({3, 4}, rng);
    auto f = [](TapeT<double>&, const DTensor& p) { return mean(relu(p)); };
    CHECK(grad_check<double>(f, probe, 1e-4) < 1e-10);
}

TEST_CASE("sigmoid symmetry, stability and strict range") {
    CHECK(sigmoid(DTensor({1}, {0.0})).data[0] == doctest::Approx(0.5));
    auto y = sigmoid(DTensor({2}, {40.0, -40.0}));
    CHECK(y.all_finite());
    CHECK(y.data[0] < 1.0);
    CHECK(y.data[0] > 1.0 - 1e-15);
    CHECK(y.data[1] > 0.0);
    // high-precision reference: sigmoid(-40) = 4.248354255291589e-18
    CHECK(y.data[1] == doctest::Approx(4.248354255291589e-18).epsilon(1e-12));

    Rng rng(31);
    auto probe = random_tensor({3, 3}, rng, -4.0, 4.0);
    auto f = [](TapeT<double>&, const DTensor& p) { return mean(sigmoid(p)); };
    CHECK(grad_check<double>(f, probe, 1e-4) < 1e-7);
}

// ---------------------------------------------------------------------------
// resize_bilinear
// ---------------------------------------------------------------------------

TEST_CASE("resize_bilinear to the same size is the exact identity") {
    Rng rng(37);
    auto x = random_tensor({2, 2, 5, 7}, rng);
    auto y = resize_bilinear(x, 5, 7);
    CHECK(y.data == x.data);

    TapeT<double> tape;
    auto xl = tape.leaf(x, true);
    tape.backward(sum(resize_bilinear(xl, 5, 7)));
    for (double v : tape.grad(xl).data) CHECK(v == 1.0);
}

TEST_CASE("resize_bilinear keeps constants constant at any size") {
    auto x = DTensor::full({1, 1, 3, 3}, 2.75);
    for (auto [h, w] : {std::pair{7, 5}, {1, 9}, {6, 6}}) {
        auto y = resize_bilinear(x, h, w);
        CHECK(y.shape == Shape{1, 1, h, w});
        for (double v : y.data) CHECK(v == doctest::Approx(2.75).epsilon(1e-12));
    }
}

TEST_CASE("resize_bilinear 2x2 -> 4x4 matches hand-computed weights") {
    auto x = DTensor({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = resize_bilinear(x, 4, 4);
    const std::vector<double> expected = {1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5,
                                          2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
    REQUIRE(y.data.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(y.data[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("resize_bilinear gradients pass finite differences both ways") {
    Rng rng(41);
    auto x = random_tensor({1, 2, 3, 4}, rng);
    auto up = [](TapeT<double>&, const DTensor& p) { return mean(resize_bilinear(p, 6, 5)); };
    auto down = [](TapeT<double>&, const DTensor& p) { return mean(resize_bilinear(p, 2, 2)); };
    CHECK(grad_check<double>(up, x, 1e-4) < 1e-9);
    CHECK(grad_check<double>(down, x, 1e-4) < 1e-9);
    CHECK_THROWS_AS(resize_bilinear(x, 0, 4), InvalidGeometry);
}

// ---------------------------------------------------------------------------
// center_crop
// ---------------------------------------------------------------------------

TEST_CASE("center_crop identity, offsets and gradient") {
    Rng rng(43);
    auto x = random_tensor({1, 1, 4, 4}, rng);
    CHECK(center_crop(x, 4, 4).data == x.data);

    auto y = center_crop(x, 2, 2);
    // offset floor((4-2)/2) = 1 -> rows/cols 1..2
    CHECK(y.data[0] == x.data[1 * 4 + 1]);
    CHECK(y.data[1] == x.data[1 * 4 + 2]);
    CHECK(y.data[2] == x.data[2 * 4 + 1]);
    CHECK(y.data[3] == x.data[2 * 4 + 2]);

    TapeT<double> tape;
    auto xl = tape.leaf(x, true);
    tape.backward(sum(center_crop(xl, 2, 2)));
    auto g = tape.grad(xl);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const bool inside = r >= 1 && r <= 2 && c >= 1 && c <= 2;
            CHECK(g.data[static_cast<std::size_t>(r) * 4 + c] == (inside ? 1.0 : 0.0));
        }

    CHECK_THROWS_AS(center_crop(x, 5, 2), CropLargerThanInput);
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

TEST_CASE("concat_channels geometry and bit-exact slicing back") {
    Rng rng(47);
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 3, 3, 3}, rng);
    auto y = concat_channels(a, b);
    CHECK(y.shape == Shape{2, 5, 3, 3});
    // slice back per batch element
    for (int n = 0; n < 2; ++n) {
        for (int i = 0; i < 2 * 9; ++i)
            CHECK(y.data[static_cast<std::size_t>(n) * 45 + i] ==
                  a.data[static_cast<std::size_t>(n) * 18 + i]);
        for (int i = 0; i < 3 * 9; ++i)
            CHECK(y.data[static_cast<std::size_t>(n) * 45 + 18 + i] ==
                  b.data[static_cast<std::size_t>(n) * 27 + i]);
    }
    CHECK_THROWS_AS(concat_channels(a, random_tensor({2, 3, 4, 3}, rng)), ShapeMismatch);
}

TEST_CASE("concat_channels splits gradients by channel range") {
    Rng rng(53);
    auto a = random_tensor({1, 2, 2, 2}, rng);
    auto b = random_tensor({1, 1, 2, 2}, rng);
    auto weights = random_tensor({1, 3, 2, 2}, rng);
    auto wrt_a = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(mul(concat_channels(probe, t.leaf(b, false)), t.leaf(weights, false)));
    };
    auto wrt_b = [&](TapeT<double>& t, const DTensor& probe) {
        return mean(mul(concat_channels(t.leaf(a, false), probe), t.leaf(weights, false)));
    };
    CHECK(grad_check<double>(wrt_a, a, 1e-4) < 1e-9);
    CHECK(grad_check<double>(wrt_b, b, 1e-4) < 1e-9);
}
