#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

// Differentiable layers over NCHW tensors. Convolutions are direct
// (shift-and-accumulate over kernel taps); no im2col or FFT paths.
// Accumulation order is fixed (batch, channel, tap, row, column ascending)
// so results are bit-deterministic.

enum class Mode { train, eval };

namespace detail {

inline int ceil_div(int a, int b) {  // b > 0
    return a > 0 ? (a + b - 1) / b : -((-a) / b);
}

template <typename T>
void check_4d(const TensorT<T>& x, const char* op) {
    if (x.shape.size() != 4)
        throw ShapeMismatch(std::string(op) + ": expected 4-D NCHW tensor, got " +
                            shape_str(x.shape));
}

// Shared bilinear geometry: half-pixel centers, align-corners=false,
// edge-clamped taps. Coordinate math in double regardless of T.
struct BilinearTap {
    int i0, i1;
    double f;  // weight of i1; (1-f) goes to i0
};

inline std::vector<BilinearTap> bilinear_taps(int in_size, int out_size) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    for (int o = 0; o < out_size; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        const int i0 = static_cast<int>(std::floor(src));
        const double f = src - i0;
        taps[static_cast<std::size_t>(o)] = {std::clamp(i0, 0, in_size - 1),
                                             std::clamp(i0 + 1, 0, in_size - 1), f};
    }
    return taps;
}

// Resamples one plane of width w; used by resize_bilinear and by the data
// pipeline, which must share the same convention. Row geometry lives in
// the precomputed taps.
template <typename T>
void bilinear_plane(const T* src, int w, T* dst, int oh, int ow,
                    const std::vector<BilinearTap>& ty, const std::vector<BilinearTap>& tx) {
    for (int oy = 0; oy < oh; ++oy) {
        const auto& y = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < ow; ++ox) {
            const auto& x = tx[static_cast<std::size_t>(ox)];
            const double v00 = static_cast<double>(src[y.i0 * w + x.i0]);
            const double v01 = static_cast<double>(src[y.i0 * w + x.i1]);
            const double v10 = static_cast<double>(src[y.i1 * w + x.i0]);
            const double v11 = static_cast<double>(src[y.i1 * w + x.i1]);
            dst[oy * ow + ox] =
                static_cast<T>((1.0 - y.f) * ((1.0 - x.f) * v00 + x.f * v01) +
                               y.f * ((1.0 - x.f) * v10 + x.f * v11));
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dParamsT {
    TensorT<T> weight;  // [out_ch, in_ch, kH, kW]
    TensorT<T> bias;    // [out_ch]
    int stride = 1;
    int padding = 0;
};

using Conv2dParams = Conv2dParamsT<float>;

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding) {
    detail::check_4d(input, "conv2d");
    if (weight.shape.size() != 4)
        throw ShapeMismatch("conv2d: weight must be [out,in,kH,kW], got " +
                            shape_str(weight.shape));
    const int N = input.shape[0], Cin = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Cout = weight.shape[0], kH = weight.shape[2], kW = weight.shape[3];
    if (weight.shape[1] != Cin)
        throw ShapeMismatch("conv2d: input has " + std::to_string(Cin) +
                            " channels, weight expects " + std::to_string(weight.shape[1]));
    if (bias.shape != Shape{Cout})
        throw ShapeMismatch("conv2d: bias shape " + shape_str(bias.shape) + ", expected [" +
                            std::to_string(Cout) + "]");
    if (stride < 1 || padding < 0) throw InvalidGeometry("conv2d: bad stride/padding");
    const int Hout = (H + 2 * padding - kH) / stride + 1;
    const int Wout = (W + 2 * padding - kW) / stride + 1;
    if (H + 2 * padding < kH || W + 2 * padding < kW || Hout < 1 || Wout < 1)
        throw InvalidGeometry("conv2d: kernel larger than padded input");

    std::vector<T> out(static_cast<std::size_t>(N) * Cout * Hout * Wout);
    const T* in = input.data.data();
    const T* w = weight.data.data();
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            T* out_plane = out.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
            std::fill(out_plane, out_plane + Hout * Wout, bias.data[static_cast<std::size_t>(co)]);
            for (int ci = 0; ci < Cin; ++ci) {
                const T* in_plane = in + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                for (int ky = 0; ky < kH; ++ky) {
                    const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                    const int oy_hi = std::min(Hout - 1, (H - 1 + padding - ky) / stride);
                    for (int kx = 0; kx < kW; ++kx) {
                        const T wv = w[((static_cast<std::size_t>(co) * Cin + ci) * kH + ky) * kW + kx];
                        const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int ox_hi = std::min(Wout - 1, (W - 1 + padding - kx) / stride);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const T* in_row = in_plane + (oy * stride + ky - padding) * W;
                            T* out_row = out_plane + oy * Wout;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                out_row[ox] += wv * in_row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }

    auto* tape = detail::common_tape(input, weight);
    if (!tape) tape = bias.tape;
    const bool rg = input.requires_grad || weight.requires_grad || bias.requires_grad;
    const int in_node = input.node, w_node = weight.node, b_node = bias.node;
    std::vector<T> in_saved = input.data, w_saved = weight.data;
    Shape in_shape = input.shape, w_shape = weight.shape;
    return detail::make_result<T>(
        tape, {N, Cout, Hout, Wout}, std::move(out), {in_node, w_node, b_node}, rg, "conv2d",
        [=](TapeT<T>& t, const std::vector<T>& g) {
            // bias: plain sum over batch and space
            if (t.node_requires_grad(b_node)) {
                std::vector<T> gb(static_cast<std::size_t>(Cout), T(0));
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                        T s = 0;
                        for (int i = 0; i < Hout * Wout; ++i) s += gp[i];
                        gb[static_cast<std::size_t>(co)] += s;
                    }
                t.accumulate(b_node, gb);
            }
            if (t.node_requires_grad(w_node)) {
                std::vector<T> gw(w_saved.size(), T(0));
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const T* in_plane =
                                in_saved.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                            for (int ky = 0; ky < kH; ++ky) {
                                const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                const int oy_hi = std::min(Hout - 1, (H - 1 + padding - ky) / stride);
                                for (int kx = 0; kx < kW; ++kx) {
                                    const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ox_hi = std::min(Wout - 1, (W - 1 + padding - kx) / stride);
                                    T acc = 0;
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const T* in_row = in_plane + (oy * stride + ky - padding) * W;
                                        const T* g_row = gp + oy * Wout;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                            acc += g_row[ox] * in_row[ox * stride + kx - padding];
                                    }
                                    gw[((static_cast<std::size_t>(co) * Cin + ci) * kH + ky) * kW + kx] += acc;
                                }
                            }
                        }
                    }
                t.accumulate(w_node, gw);
            }
            if (t.node_requires_grad(in_node)) {
                std::vector<T> gi(in_saved.size(), T(0));
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                        for (int ci = 0; ci < Cin; ++ci) {
                            T* gi_plane = gi.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                            for (int ky = 0; ky < kH; ++ky) {
                                const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                const int oy_hi = std::min(Hout - 1, (H - 1 + padding - ky) / stride);
                                for (int kx = 0; kx < kW; ++kx) {
                                    const T wv =
                                        w_saved[((static_cast<std::size_t>(co) * Cin + ci) * kH + ky) * kW + kx];
                                    const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ox_hi = std::min(Wout - 1, (W - 1 + padding - kx) / stride);
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        T* gi_row = gi_plane + (oy * stride + ky - padding) * W;
                                        const T* g_row = gp + oy * Wout;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                            gi_row[ox * stride + kx - padding] += wv * g_row[ox];
                                    }
                                }
                            }
                        }
                    }
                t.accumulate(in_node, gi);
            }
        });
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const Conv2dParamsT<T>& p) {
    return conv2d(input, p.weight, p.bias, p.stride, p.padding);
}

// ---------------------------------------------------------------------------
// conv_transpose2d
// ---------------------------------------------------------------------------

// weight layout [in_ch, out_ch, kH, kW]; output = (H-1)*stride - 2*padding + kH.
// Forward is the adjoint of conv2d's forward (scatter of input taps), which
// the adjoint-identity tests rely on. No bias, matching the UNet up blocks.
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                            int padding = 0) {
    detail::check_4d(input, "conv_transpose2d");
    if (weight.shape.size() != 4)
        throw ShapeMismatch("conv_transpose2d: weight must be [in,out,kH,kW], got " +
                            shape_str(weight.shape));
    const int N = input.shape[0], Cin = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Cout = weight.shape[1], kH = weight.shape[2], kW = weight.shape[3];
    if (weight.shape[0] != Cin)
        throw ShapeMismatch("conv_transpose2d: input has " + std::to_string(Cin) +
                            " channels, weight expects " + std::to_string(weight.shape[0]));
    if (stride < 1 || padding < 0) throw InvalidGeometry("conv_transpose2d: bad stride/padding");
    const int Hout = (H - 1) * stride - 2 * padding + kH;
    const int Wout = (W - 1) * stride - 2 * padding + kW;
    if (Hout < 1 || Wout < 1) throw InvalidGeometry("conv_transpose2d: empty output");

    std::vector<T> out(static_cast<std::size_t>(N) * Cout * Hout * Wout, T(0));
    const T* in = input.data.data();
    const T* w = weight.data.data();
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Cin; ++ci) {
            const T* in_plane = in + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
            for (int co = 0; co < Cout; ++co) {
                T* out_plane = out.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                for (int ky = 0; ky < kH; ++ky)
                    for (int kx = 0; kx < kW; ++kx) {
                        const T wv = w[((static_cast<std::size_t>(ci) * Cout + co) * kH + ky) * kW + kx];
                        const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                        const int iy_hi = std::min(H - 1, (Hout - 1 + padding - ky) / stride);
                        const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int ix_hi = std::min(W - 1, (Wout - 1 + padding - kx) / stride);
                        for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                            const T* in_row = in_plane + iy * W;
                            T* out_row = out_plane + (iy * stride + ky - padding) * Wout;
                            for (int ix = ix_lo; ix <= ix_hi; ++ix)
                                out_row[ix * stride + kx - padding] += wv * in_row[ix];
                        }
                    }
            }
        }

    auto* tape = detail::common_tape(input, weight);
    const bool rg = input.requires_grad || weight.requires_grad;
    const int in_node = input.node, w_node = weight.node;
    std::vector<T> in_saved = input.data, w_saved = weight.data;
    return detail::make_result<T>(
        tape, {N, Cout, Hout, Wout}, std::move(out), {in_node, w_node}, rg, "conv_transpose2d",
        [=](TapeT<T>& t, const std::vector<T>& g) {
            if (t.node_requires_grad(in_node)) {
                // gather: the adjoint of the forward scatter
                std::vector<T> gi(in_saved.size(), T(0));
                for (int n = 0; n < N; ++n)
                    for (int ci = 0; ci < Cin; ++ci) {
                        T* gi_plane = gi.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                        for (int co = 0; co < Cout; ++co) {
                            const T* gp = g.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                            for (int ky = 0; ky < kH; ++ky)
                                for (int kx = 0; kx < kW; ++kx) {
                                    const T wv =
                                        w_saved[((static_cast<std::size_t>(ci) * Cout + co) * kH + ky) * kW + kx];
                                    const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int iy_hi = std::min(H - 1, (Hout - 1 + padding - ky) / stride);
                                    const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ix_hi = std::min(W - 1, (Wout - 1 + padding - kx) / stride);
                                    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                                        T* gi_row = gi_plane + iy * W;
                                        const T* g_row = gp + (iy * stride + ky - padding) * Wout;
                                        for (int ix = ix_lo; ix <= ix_hi; ++ix)
                                            gi_row[ix] += wv * g_row[ix * stride + kx - padding];
                                    }
                                }
                        }
                    }
                t.accumulate(in_node, gi);
            }
            if (t.node_requires_grad(w_node)) {
                std::vector<T> gw(w_saved.size(), T(0));
                for (int n = 0; n < N; ++n)
                    for (int ci = 0; ci < Cin; ++ci) {
                        const T* in_plane =
                            in_saved.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                        for (int co = 0; co < Cout; ++co) {
                            const T* gp = g.data() + (static_cast<std::size_t>(n) * Cout + co) * Hout * Wout;
                            for (int ky = 0; ky < kH; ++ky)
                                for (int kx = 0; kx < kW; ++kx) {
                                    const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int iy_hi = std::min(H - 1, (Hout - 1 + padding - ky) / stride);
                                    const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ix_hi = std::min(W - 1, (Wout - 1 + padding - kx) / stride);
                                    T acc = 0;
                                    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                                        const T* in_row = in_plane + iy * W;
                                        const T* g_row = gp + (iy * stride + ky - padding) * Wout;
                                        for (int ix = ix_lo; ix <= ix_hi; ++ix)
                                            acc += in_row[ix] * g_row[ix * stride + kx - padding];
                                    }
                                    gw[((static_cast<std::size_t>(ci) * Cout + co) * kH + ky) * kW + kx] += acc;
                                }
                        }
                    }
                t.accumulate(w_node, gw);
            }
        });
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

// Square window, stride == kernel. Gradient routes to the argmax position;
// ties break to the first element in row-major window order.
template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& input, int kernel = 2, int stride = 2) {
    detail::check_4d(input, "maxpool2d");
    if (kernel < 1 || stride != kernel)
        throw InvalidGeometry("maxpool2d: only stride == kernel is supported");
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    if (H % kernel != 0 || W % kernel != 0)
        throw OddSpatialDim("maxpool2d: spatial dims " + std::to_string(H) + "x" +
                            std::to_string(W) + " not divisible by " + std::to_string(kernel));
    const int Hout = H / kernel, Wout = W / kernel;
    std::vector<T> out(static_cast<std::size_t>(N) * C * Hout * Wout);
    std::vector<std::int32_t> argmax(out.size());  // flat index within input plane
    const T* in = input.data.data();
    std::size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = in + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < Hout; ++oy)
                for (int ox = 0; ox < Wout; ++ox, ++o) {
                    int best = (oy * kernel) * W + ox * kernel;
                    T best_v = plane[best];
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int idx = (oy * kernel + ky) * W + (ox * kernel + kx);
                            if (plane[idx] > best_v) {
                                best_v = plane[idx];
                                best = idx;
                            }
                        }
                    out[o] = best_v;
                    argmax[o] = best;
                }
        }

    const int in_node = input.node;
    const std::size_t plane_size = static_cast<std::size_t>(H) * W;
    const std::size_t out_plane = static_cast<std::size_t>(Hout) * Wout;
    const std::size_t in_total = input.data.size();
    return detail::make_result<T>(
        input.tape, {N, C, Hout, Wout}, std::move(out), {in_node}, input.requires_grad,
        "maxpool2d",
        [in_node, argmax, plane_size, out_plane, in_total, N, C](TapeT<T>& t,
                                                                 const std::vector<T>& g) {
            std::vector<T> gi(in_total, T(0));
            std::size_t o = 0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gplane = gi.data() + (static_cast<std::size_t>(n) * C + c) * plane_size;
                    for (std::size_t i = 0; i < out_plane; ++i, ++o)
                        gplane[argmax[o]] += g[o];
                }
            t.accumulate(in_node, gi);
        });
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNorm2dStateT {
    TensorT<T> gamma, beta;              // [C]
    TensorT<T> running_mean, running_var;  // [C]
    T momentum = T(0.1);
    T eps = T(1e-5);
};

using BatchNorm2dState = BatchNorm2dStateT<float>;

// Train mode normalizes with biased batch statistics and folds the unbiased
// variance into the running estimate; eval mode is a pure function of the
// running stats. running_mean / running_var are mutated only in train mode.
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, const TensorT<T>& gamma, const TensorT<T>& beta,
                       TensorT<T>& running_mean, TensorT<T>& running_var, T momentum, T eps,
                       Mode mode) {
    detail::check_4d(input, "batchnorm2d");
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    if (gamma.shape != Shape{C} || beta.shape != Shape{C} || running_mean.shape != Shape{C} ||
        running_var.shape != Shape{C})
        throw ShapeMismatch("batchnorm2d: per-channel parameter shape mismatch for C=" +
                            std::to_string(C));
    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    std::vector<T> mean_c(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
    if (mode == Mode::train) {
        if (m < 2) throw DegenerateBatch("batchnorm2d: train mode needs N*H*W >= 2, got " +
                                         std::to_string(m));
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = input.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = input.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(p[i]) - mu;
                    v += d * d;
                }
            }
            const double var_biased = v / static_cast<double>(m);
            const double var_unbiased = v / static_cast<double>(m - 1);
            mean_c[static_cast<std::size_t>(c)] = static_cast<T>(mu);
            inv_std[static_cast<std::size_t>(c)] =
                static_cast<T>(1.0 / std::sqrt(var_biased + static_cast<double>(eps)));
            running_mean.data[static_cast<std::size_t>(c)] =
                (T(1) - momentum) * running_mean.data[static_cast<std::size_t>(c)] +
                momentum * static_cast<T>(mu);
            running_var.data[static_cast<std::size_t>(c)] =
                (T(1) - momentum) * running_var.data[static_cast<std::size_t>(c)] +
                momentum * static_cast<T>(var_unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean_c[static_cast<std::size_t>(c)] = running_mean.data[static_cast<std::size_t>(c)];
            inv_std[static_cast<std::size_t>(c)] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running_var.data[static_cast<std::size_t>(c)]) +
                                static_cast<double>(eps)));
        }
    }

    std::vector<T> xhat(input.data.size());
    std::vector<T> out(input.data.size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = input.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            T* xh = xhat.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            T* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            const T mu = mean_c[static_cast<std::size_t>(c)];
            const T is = inv_std[static_cast<std::size_t>(c)];
            const T gc = gamma.data[static_cast<std::size_t>(c)];
            const T bc = beta.data[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                op[i] = gc * xh[i] + bc;
            }
        }

    auto* tape = detail::common_tape(input, gamma);
    if (!tape) tape = beta.tape;
    const bool rg = input.requires_grad || gamma.requires_grad || beta.requires_grad;
    const int in_node = input.node, g_node = gamma.node, b_node = beta.node;
    std::vector<T> gamma_saved = gamma.data;
    const bool training = (mode == Mode::train);
    return detail::make_result<T>(
        tape, input.shape, std::move(out), {in_node, g_node, b_node}, rg, "batchnorm2d",
        [=, xhat = std::move(xhat)](TapeT<T>& t, const std::vector<T>& g) {
            const std::size_t cs = static_cast<std::size_t>(C);
            std::vector<T> sum_g(cs, T(0)), sum_gx(cs, T(0));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                    T sg = 0, sgx = 0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sg += g[base + i];
                        sgx += g[base + i] * xhat[base + i];
                    }
                    sum_g[static_cast<std::size_t>(c)] += sg;
                    sum_gx[static_cast<std::size_t>(c)] += sgx;
                }
            if (t.node_requires_grad(g_node)) t.accumulate(g_node, sum_gx);
            if (t.node_requires_grad(b_node)) t.accumulate(b_node, sum_g);
            if (t.node_requires_grad(in_node)) {
                std::vector<T> gi(xhat.size());
                const T inv_m = T(1) / static_cast<T>(m);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                        const T k = gamma_saved[static_cast<std::size_t>(c)] *
                                    inv_std[static_cast<std::size_t>(c)];
                        if (training) {
                            const T mg = sum_g[static_cast<std::size_t>(c)] * inv_m;
                            const T mgx = sum_gx[static_cast<std::size_t>(c)] * inv_m;
                            for (std::size_t i = 0; i < plane; ++i)
                                gi[base + i] = k * (g[base + i] - mg - xhat[base + i] * mgx);
                        } else {
                            for (std::size_t i = 0; i < plane; ++i) gi[base + i] = k * g[base + i];
                        }
                    }
                t.accumulate(in_node, gi);
            }
        });
}

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, BatchNorm2dStateT<T>& state, Mode mode) {
    return batchnorm2d(input, state.gamma, state.beta, state.running_mean, state.running_var,
                       state.momentum, state.eps, mode);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

// Subgradient at 0 is 0.
template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
    std::vector<T> out(input.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data[i] > T(0) ? input.data[i] : T(0);
    const int in_node = input.node;
    std::vector<T> in_saved = input.data;
    return detail::make_result<T>(input.tape, input.shape, std::move(out), {in_node},
                                  input.requires_grad, "relu",
                                  [in_node, in_saved](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> gi(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          gi[i] = in_saved[i] > T(0) ? g[i] : T(0);
                                      t.accumulate(in_node, gi);
                                  });
}

// Piecewise form keeps exp() argument non-positive, so large |x| cannot
// overflow. Saturated values are nudged to the nearest representable
// number inside (0,1): the exact result rounds to 0 or 1 once |x| passes
// the precision limit, and downstream log-losses need the open interval.
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& input) {
    const T hi = std::nextafter(T(1), T(0));
    const T lo = std::numeric_limits<T>::min();
    std::vector<T> out(input.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = input.data[i];
        T v;
        if (x >= T(0)) {
            const T e = std::exp(-x);
            v = T(1) / (T(1) + e);
        } else {
            const T e = std::exp(x);
            v = e / (T(1) + e);
        }
        out[i] = std::min(std::max(v, lo), hi);
    }
    const int in_node = input.node;
    std::vector<T> y_saved = out;
    return detail::make_result<T>(input.tape, input.shape, std::move(out), {in_node},
                                  input.requires_grad, "sigmoid",
                                  [in_node, y_saved](TapeT<T>& t, const std::vector<T>& g) {
                                      std::vector<T> gi(g.size());
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          gi[i] = g[i] * y_saved[i] * (T(1) - y_saved[i]);
                                      t.accumulate(in_node, gi);
                                  });
}

// ---------------------------------------------------------------------------
// resize_bilinear
// ---------------------------------------------------------------------------

// Half-pixel centers, align-corners=false. Linear in the input, so backward
// scatters the upstream gradient with the same interpolation weights; this
// is the path that keeps skip-connection gradients alive.
template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& input, int out_h, int out_w) {
    detail::check_4d(input, "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw InvalidGeometry("resize_bilinear: output dims must be >= 1");
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const auto ty = detail::bilinear_taps(H, out_h);
    const auto tx = detail::bilinear_taps(W, out_w);
    std::vector<T> out(static_cast<std::size_t>(N) * C * out_h * out_w);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            detail::bilinear_plane(
                input.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W, W,
                out.data() + (static_cast<std::size_t>(n) * C + c) * out_h * out_w, out_h, out_w,
                ty, tx);

    const int in_node = input.node;
    const std::size_t in_total = input.data.size();
    return detail::make_result<T>(
        input.tape, {N, C, out_h, out_w}, std::move(out), {in_node}, input.requires_grad,
        "resize_bilinear",
        [in_node, in_total, ty, tx, N, C, H, W, out_h, out_w](TapeT<T>& t,
                                                              const std::vector<T>& g) {
            std::vector<T> gi(in_total, T(0));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gp = gi.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    const T* gu = g.data() + (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const auto& y = ty[static_cast<std::size_t>(oy)];
                        for (int ox = 0; ox < out_w; ++ox) {
                            const auto& x = tx[static_cast<std::size_t>(ox)];
                            const double gv = static_cast<double>(gu[oy * out_w + ox]);
                            gp[y.i0 * W + x.i0] += static_cast<T>((1.0 - y.f) * (1.0 - x.f) * gv);
                            gp[y.i0 * W + x.i1] += static_cast<T>((1.0 - y.f) * x.f * gv);
                            gp[y.i1 * W + x.i0] += static_cast<T>(y.f * (1.0 - x.f) * gv);
                            gp[y.i1 * W + x.i1] += static_cast<T>(y.f * x.f * gv);
                        }
                    }
                }
            t.accumulate(in_node, gi);
        });
}

// ---------------------------------------------------------------------------
// center_crop
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> center_crop(const TensorT<T>& input, int out_h, int out_w) {
    detail::check_4d(input, "center_crop");
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    if (out_h > H || out_w > W)
        throw CropLargerThanInput("center_crop: " + std::to_string(out_h) + "x" +
                                  std::to_string(out_w) + " from " + std::to_string(H) + "x" +
                                  std::to_string(W));
    if (out_h < 1 || out_w < 1) throw InvalidGeometry("center_crop: output dims must be >= 1");
    const int oy0 = (H - out_h) / 2, ox0 = (W - out_w) / 2;
    std::vector<T> out(static_cast<std::size_t>(N) * C * out_h * out_w);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = input.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            T* op = out.data() + (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
            for (int y = 0; y < out_h; ++y)
                std::copy(p + (y + oy0) * W + ox0, p + (y + oy0) * W + ox0 + out_w, op + y * out_w);
        }
    const int in_node = input.node;
    const std::size_t in_total = input.data.size();
    return detail::make_result<T>(
        input.tape, {N, C, out_h, out_w}, std::move(out), {in_node}, input.requires_grad,
        "center_crop",
        [in_node, in_total, N, C, H, W, out_h, out_w, oy0, ox0](TapeT<T>& t,
                                                                const std::vector<T>& g) {
            std::vector<T> gi(in_total, T(0));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gp = gi.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    const T* gu = g.data() + (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
                    for (int y = 0; y < out_h; ++y)
                        for (int x = 0; x < out_w; ++x)
                            gp[(y + oy0) * W + x + ox0] += gu[y * out_w + x];
                }
            t.accumulate(in_node, gi);
        });
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_4d(a, "concat_channels");
    detail::check_4d(b, "concat_channels");
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw ShapeMismatch("concat_channels: N/H/W mismatch " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
    const int N = a.shape[0], Ca = a.shape[1], Cb = b.shape[1], H = a.shape[2], W = a.shape[3];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<T> out(static_cast<std::size_t>(N) * (Ca + Cb) * plane);
    for (int n = 0; n < N; ++n) {
        std::copy(a.data.begin() + static_cast<std::ptrdiff_t>(n * Ca * plane),
                  a.data.begin() + static_cast<std::ptrdiff_t>((n + 1) * Ca * plane),
                  out.begin() + static_cast<std::ptrdiff_t>(n * (Ca + Cb) * plane));
        std::copy(b.data.begin() + static_cast<std::ptrdiff_t>(n * Cb * plane),
                  b.data.begin() + static_cast<std::ptrdiff_t>((n + 1) * Cb * plane),
                  out.begin() + static_cast<std::ptrdiff_t>((n * (Ca + Cb) + Ca) * plane));
    }
    auto* tape = detail::common_tape(a, b);
    const int a_node = a.node, b_node = b.node;
    return detail::make_result<T>(
        tape, {N, Ca + Cb, H, W}, std::move(out), {a_node, b_node},
        a.requires_grad || b.requires_grad, "concat_channels",
        [a_node, b_node, N, Ca, Cb, plane](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> ga(static_cast<std::size_t>(N) * Ca * plane);
            std::vector<T> gb(static_cast<std::size_t>(N) * Cb * plane);
            for (int n = 0; n < N; ++n) {
                std::copy(g.begin() + static_cast<std::ptrdiff_t>(n * (Ca + Cb) * plane),
                          g.begin() + static_cast<std::ptrdiff_t>((n * (Ca + Cb) + Ca) * plane),
                          ga.begin() + static_cast<std::ptrdiff_t>(n * Ca * plane));
                std::copy(g.begin() + static_cast<std::ptrdiff_t>((n * (Ca + Cb) + Ca) * plane),
                          g.begin() + static_cast<std::ptrdiff_t>((n + 1) * (Ca + Cb) * plane),
                          gb.begin() + static_cast<std::ptrdiff_t>(n * Cb * plane));
            }
            t.accumulate(a_node, ga);
            t.accumulate(b_node, gb);
        });
}

}  // namespace tinyseg
