#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tinyseg/layers.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

// Training losses over sigmoid probabilities plus the evaluation Dice
// coefficient. All losses are built from tape primitives, so their
// gradients come from the same machinery the layers use.

enum class LossKind { bce, ce, focal, dice, mixed };

struct LossConfig {
    LossKind kind = LossKind::mixed;
    double alpha = 1.0;   // weight of the focal term in the mixed loss
    double gamma = 0.9;   // focal exponent
    double smooth = 1.0;  // soft-Dice smoothing constant
};

enum class DiceMode { standard, paper_literal };

inline constexpr double kProbClampEps = 1e-7;

namespace detail {

template <typename T>
void check_binary_target(const TensorT<T>& target, const char* op) {
    for (T v : target.data)
        if (v != T(0) && v != T(1))
            throw NonBinaryMask(std::string(op) + ": target contains values outside {0,1}");
}

template <typename T>
TensorT<T> one_minus(const TensorT<T>& x) {
    return add_scalar(neg(x), T(1));
}

// p_t = p where target==1, (1-p) where target==0; inputs pre-clamped.
template <typename T>
TensorT<T> prob_of_target(const TensorT<T>& p, const TensorT<T>& target) {
    TensorT<T> one_minus_t = one_minus(target.detached());
    return add(mul(p, target.detached()), mul(one_minus(p), one_minus_t));
}

}  // namespace detail

// Mean over elements of -[t*log(p) + (1-t)*log(1-p)], with p clamped to
// [eps, 1-eps] so saturated sigmoids stay finite.
template <typename T>
TensorT<T> bce_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    detail::check_same_shape(pred, target, "bce_loss");
    detail::check_binary_target(target, "bce_loss");
    auto p = clamp(pred, static_cast<T>(kProbClampEps), static_cast<T>(1.0 - kProbClampEps));
    auto t = target.detached();
    auto term = add(mul(t, log_op(p)), mul(detail::one_minus(t), log_op(detail::one_minus(p))));
    return neg(mean(term));
}

// Mean of -(1-p_t)^gamma * log(p_t). gamma = 0 reduces exactly to bce_loss.
// No class-balance factor; the mix weight alpha lives in mixed_loss.
template <typename T>
TensorT<T> focal_loss(const TensorT<T>& pred, const TensorT<T>& target, T gamma) {
    if (gamma < T(0)) throw NegativeGamma("focal_loss: gamma must be >= 0");
    detail::check_same_shape(pred, target, "focal_loss");
    detail::check_binary_target(target, "focal_loss");
    auto p = clamp(pred, static_cast<T>(kProbClampEps), static_cast<T>(1.0 - kProbClampEps));
    auto pt = detail::prob_of_target(p, target);
    auto weight = pow_scalar(detail::one_minus(pt), gamma);
    return neg(mean(mul(weight, log_op(pt))));
}

// (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth), differentiable in pred.
template <typename T>
TensorT<T> dice_score_soft(const TensorT<T>& pred, const TensorT<T>& target, T smooth) {
    detail::check_same_shape(pred, target, "dice_score_soft");
    auto t = target.detached();
    auto inter = sum(mul(pred, t));
    auto numer = add_scalar(scale(inter, T(2)), smooth);
    auto denom = add_scalar(add(sum(pred), sum(t)), smooth);
    return div(numer, denom);
}

template <typename T>
TensorT<T> dice_loss(const TensorT<T>& pred, const TensorT<T>& target, T smooth) {
    return detail::one_minus(dice_score_soft(pred, target, smooth));
}

// The paper's training objective: alpha * Focal - log(soft Dice).
template <typename T>
TensorT<T> mixed_loss(const TensorT<T>& pred, const TensorT<T>& target, const LossConfig& cfg) {
    auto focal = focal_loss(pred, target, static_cast<T>(cfg.gamma));
    auto dice = dice_score_soft(pred, target, static_cast<T>(cfg.smooth));
    return sub(scale(focal, static_cast<T>(cfg.alpha)), log_op(dice));
}

// Two-class softmax cross-entropy on logits [N,2,H,W]; target is the binary
// mask [N,1,H,W]. Log-sum-exp stabilized. Kept as a fused op: composing it
// from primitives would need a channel reduction nothing else wants.
template <typename T>
TensorT<T> ce_loss(const TensorT<T>& logits, const TensorT<T>& target) {
    detail::check_4d(logits, "ce_loss");
    if (logits.shape[1] != 2)
        throw ShapeMismatch("ce_loss: logits must have 2 channels, got " +
                            std::to_string(logits.shape[1]));
    const int N = logits.shape[0], H = logits.shape[2], W = logits.shape[3];
    if (target.shape != Shape{N, 1, H, W})
        throw ShapeMismatch("ce_loss: target shape " + shape_str(target.shape) + ", expected " +
                            shape_str({N, 1, H, W}));
    detail::check_binary_target(target, "ce_loss");

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t count = static_cast<std::size_t>(N) * plane;
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const T* z0 = logits.data.data() + static_cast<std::size_t>(n) * 2 * plane;
        const T* z1 = z0 + plane;
        const T* tp = target.data.data() + static_cast<std::size_t>(n) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double a = static_cast<double>(z0[i]), b = static_cast<double>(z1[i]);
            const double m = std::max(a, b);
            const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
            total += lse - (tp[i] == T(1) ? b : a);
        }
    }
    const T value = static_cast<T>(total / static_cast<double>(count));

    const int z_node = logits.node;
    std::vector<T> z_saved = logits.data, t_saved = target.data;
    return detail::make_result<T>(
        logits.tape, {1}, {value}, {z_node}, logits.requires_grad, "ce_loss",
        [z_node, z_saved, t_saved, N, plane, count](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> gz(z_saved.size());
            const double gscale = static_cast<double>(g[0]) / static_cast<double>(count);
            for (int n = 0; n < N; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * 2 * plane;
                const T* z0 = z_saved.data() + base;
                const T* z1 = z0 + plane;
                const T* tp = t_saved.data() + static_cast<std::size_t>(n) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double a = static_cast<double>(z0[i]), b = static_cast<double>(z1[i]);
                    const double m = std::max(a, b);
                    const double e0 = std::exp(a - m), e1 = std::exp(b - m);
                    const double s0 = e0 / (e0 + e1), s1 = e1 / (e0 + e1);
                    const bool fg = (tp[i] == T(1));
                    gz[base + i] = static_cast<T>(gscale * (s0 - (fg ? 0.0 : 1.0)));
                    gz[base + plane + i] = static_cast<T>(gscale * (s1 - (fg ? 1.0 : 0.0)));
                }
            }
            t.accumulate(z_node, gz);
        });
}

// Dispatcher used by the trainer. The 'ce' kind routes the sigmoid
// probability head through logits (0, logit(p)), which is algebraically
// equivalent to BCE but exercises the softmax path.
template <typename T>
TensorT<T> segmentation_loss(const TensorT<T>& pred, const TensorT<T>& target,
                             const LossConfig& cfg) {
    switch (cfg.kind) {
        case LossKind::bce:
            return bce_loss(pred, target);
        case LossKind::focal:
            return focal_loss(pred, target, static_cast<T>(cfg.gamma));
        case LossKind::dice:
            return dice_loss(pred, target, static_cast<T>(cfg.smooth));
        case LossKind::mixed:
            return mixed_loss(pred, target, cfg);
        case LossKind::ce: {
            auto p = clamp(pred, static_cast<T>(kProbClampEps),
                           static_cast<T>(1.0 - kProbClampEps));
            auto z1 = sub(log_op(p), log_op(detail::one_minus(p)));
            auto z0 = TensorT<T>::zeros(pred.shape);
            return ce_loss(concat_channels(z0, z1), target);
        }
    }
    throw InvalidConfig("segmentation_loss: unknown loss kind");
}

// ---------------------------------------------------------------------------
// Evaluation Dice coefficient (binary masks, not differentiable)
// ---------------------------------------------------------------------------

// standard:       2|A∩B| / (|A| + |B|)
// paper_literal:  min(1, 2|A∩B| / |A∪B|)
// The literal union denominator exceeds 1 whenever the masks overlap on
// more than half their union (identical masks would give exactly 2), so it
// is capped to keep the coefficient a coefficient. paper_literal >=
// standard always, with equality exactly when the masks are disjoint or
// identical. Two empty masks agree perfectly: 1.0 in both conventions.
template <typename T>
double dice_coefficient(const TensorT<T>& a, const TensorT<T>& b, DiceMode mode) {
    detail::check_same_shape(a, b, "dice_coefficient");
    std::int64_t inter = 0, ca = 0, cb = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const T av = a.data[i], bv = b.data[i];
        if ((av != T(0) && av != T(1)) || (bv != T(0) && bv != T(1)))
            throw NonBinaryMask("dice_coefficient: masks must be strictly {0,1}");
        const bool ai = (av == T(1)), bi = (bv == T(1));
        inter += (ai && bi);
        ca += ai;
        cb += bi;
        uni += (ai || bi);
    }
    if (mode == DiceMode::standard) {
        if (ca + cb == 0) return 1.0;
        return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
    }
    if (uni == 0) return 1.0;
    return std::min(1.0, 2.0 * static_cast<double>(inter) / static_cast<double>(uni));
}

}  // namespace tinyseg
