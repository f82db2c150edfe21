#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tinyseg/layers.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

// UNet with a configurable number of levels. Encoder level i doubles the
// channel count (base * 2^i) and halves the spatial dims; the decoder
// mirrors it with 2x2/stride-2 transpose convolutions. Skip tensors are
// resized (default) or center-cropped to the decoder's spatial dims and
// concatenated as (skip, upsampled). Body convs are 3x3/stride1/pad1, the
// head is a 1x1 conv followed by sigmoid.

enum class SkipMode { resize, center_crop };

struct UNetConfig {
    int in_channels = 1;
    int base_channels = 64;
    int depth = 4;
    SkipMode skip_mode = SkipMode::resize;
    int out_channels = 1;
};

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEps = 1e-5;

// Deepest level that still pools cleanly: both dims must stay even at
// every pooling step, i.e. be divisible by 2^depth.
inline int max_unet_depth(int h, int w) {
    int d = 0;
    while (h % 2 == 0 && w % 2 == 0 && (h / 2) >= 1 && (w / 2) >= 1) {
        h /= 2;
        w /= 2;
        ++d;
    }
    return d;
}

inline void validate_depth(int h, int w, int depth) {
    if (h < 1 || w < 1) throw InvalidGeometry("validate_depth: non-positive image dims");
    if (depth < 1) throw InvalidConfig("validate_depth: depth must be >= 1");
    const int max_d = max_unet_depth(h, w);
    if (depth > max_d)
        throw DepthTooDeep("depth " + std::to_string(depth) + " too deep for " +
                           std::to_string(h) + "x" + std::to_string(w) +
                           " input; max admissible depth is " + std::to_string(max_d));
}

inline void validate_config(const UNetConfig& cfg) {
    if (cfg.in_channels < 1 || cfg.base_channels < 1 || cfg.depth < 1)
        throw InvalidConfig("unet: in_channels, base_channels and depth must be >= 1");
    if (cfg.out_channels != 1)
        throw InvalidConfig("unet: binary head requires out_channels == 1");
}

// Ordered (name, shape) schema; the name set is a pure function of the
// config and doubles as the checkpoint directory layout.
inline std::vector<std::pair<std::string, Shape>> unet_param_schema(const UNetConfig& cfg) {
    validate_config(cfg);
    std::vector<std::pair<std::string, Shape>> schema;
    auto conv_block = [&schema](const std::string& prefix, int c_in, int c_out) {
        schema.emplace_back(prefix + ".conv1.weight", Shape{c_out, c_in, 3, 3});
        schema.emplace_back(prefix + ".conv1.bias", Shape{c_out});
        schema.emplace_back(prefix + ".bn1.gamma", Shape{c_out});
        schema.emplace_back(prefix + ".bn1.beta", Shape{c_out});
        schema.emplace_back(prefix + ".bn1.running_mean", Shape{c_out});
        schema.emplace_back(prefix + ".bn1.running_var", Shape{c_out});
        schema.emplace_back(prefix + ".conv2.weight", Shape{c_out, c_out, 3, 3});
        schema.emplace_back(prefix + ".conv2.bias", Shape{c_out});
        schema.emplace_back(prefix + ".bn2.gamma", Shape{c_out});
        schema.emplace_back(prefix + ".bn2.beta", Shape{c_out});
        schema.emplace_back(prefix + ".bn2.running_mean", Shape{c_out});
        schema.emplace_back(prefix + ".bn2.running_var", Shape{c_out});
    };
    int ch = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
        const int out = cfg.base_channels << i;
        conv_block("enc" + std::to_string(i), ch, out);
        ch = out;
    }
    conv_block("bottleneck", ch, cfg.base_channels << cfg.depth);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int lo = cfg.base_channels << i;       // channels at this level
        const int hi = lo * 2;                       // channels arriving from below
        schema.emplace_back("up" + std::to_string(i) + ".deconv.weight", Shape{hi, lo, 2, 2});
        conv_block("dec" + std::to_string(i), hi, lo);  // skip(lo) + upsampled(lo)
    }
    schema.emplace_back("head.weight", Shape{cfg.out_channels, cfg.base_channels, 1, 1});
    schema.emplace_back("head.bias", Shape{cfg.out_channels});
    return schema;
}

inline std::vector<std::string> unet_param_names(const UNetConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& [name, shape] : unet_param_schema(cfg)) names.push_back(name);
    return names;
}

inline bool is_running_stat(const std::string& name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

template <typename T>
struct UNetModelT {
    UNetConfig config;
    std::map<std::string, TensorT<T>> params;  // includes batchnorm running stats
};

using UNetModel = UNetModelT<float>;

// He-normal conv/deconv weights (std = sqrt(2 / fan_in)), zero biases,
// identity batchnorm. One seeded stream, drawn in schema order, so the
// same seed reproduces the model bit for bit.
template <typename T>
UNetModelT<T> build_unet_t(const UNetConfig& cfg, std::uint64_t seed) {
    UNetModelT<T> model{cfg, {}};
    Rng rng(seed);
    for (const auto& [name, shape] : unet_param_schema(cfg)) {
        TensorT<T> t = TensorT<T>::zeros(shape);
        if (name.ends_with(".weight") && shape.size() == 4) {
            const int fan_in = shape[1] * shape[2] * shape[3];
            const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, std_dev));
        } else if (name.ends_with(".gamma") || name.ends_with(".running_var")) {
            for (auto& v : t.data) v = T(1);
        }
        model.params.emplace(name, std::move(t));
    }
    return model;
}

inline UNetModel build_unet(const UNetConfig& cfg, std::uint64_t seed) {
    return build_unet_t<float>(cfg, seed);
}

template <typename T>
struct UNetForwardResultT {
    TensorT<T> output;                      // probabilities [N,1,H,W]
    std::map<std::string, int> param_nodes;  // trainable params -> tape node
};

// Forward pass. With a tape, every trainable parameter is registered as a
// requires_grad leaf and its node id reported for the optimizer; running
// stats stay detached buffers (mutated only in train mode). Without a tape
// this is a pure eager evaluation.
template <typename T>
UNetForwardResultT<T> unet_forward(UNetModelT<T>& model, const TensorT<T>& input, Mode mode,
                                   TapeT<T>* tape = nullptr) {
    detail::check_4d(input, "unet_forward");
    const UNetConfig& cfg = model.config;
    if (input.shape[1] != cfg.in_channels)
        throw ShapeMismatch("unet_forward: input has " + std::to_string(input.shape[1]) +
                            " channels, model expects " + std::to_string(cfg.in_channels));
    validate_depth(input.shape[2], input.shape[3], cfg.depth);

    UNetForwardResultT<T> result;
    auto param = [&](const std::string& name) -> TensorT<T> {
        const TensorT<T>& p = model.params.at(name);
        if (!tape) return p;
        auto leafed = tape->leaf(p, true);
        result.param_nodes.emplace(name, leafed.node);
        return leafed;
    };
    auto conv_block = [&](const TensorT<T>& x, const std::string& prefix) {
        auto y = conv2d(x, param(prefix + ".conv1.weight"), param(prefix + ".conv1.bias"), 1, 1);
        y = batchnorm2d(y, param(prefix + ".bn1.gamma"), param(prefix + ".bn1.beta"),
                        model.params.at(prefix + ".bn1.running_mean"),
                        model.params.at(prefix + ".bn1.running_var"), static_cast<T>(kBnMomentum),
                        static_cast<T>(kBnEps), mode);
        y = relu(y);
        y = conv2d(y, param(prefix + ".conv2.weight"), param(prefix + ".conv2.bias"), 1, 1);
        y = batchnorm2d(y, param(prefix + ".bn2.gamma"), param(prefix + ".bn2.beta"),
                        model.params.at(prefix + ".bn2.running_mean"),
                        model.params.at(prefix + ".bn2.running_var"), static_cast<T>(kBnMomentum),
                        static_cast<T>(kBnEps), mode);
        return relu(y);
    };

    // An input already living on this tape (e.g. a grad-check probe) keeps
    // its node; anything else enters as a constant leaf.
    TensorT<T> x = input;
    if (tape && !(input.tape == tape && input.node >= 0)) x = tape->leaf(input, false);
    std::vector<TensorT<T>> skips;
    skips.reserve(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) {
        x = conv_block(x, "enc" + std::to_string(i));
        skips.push_back(x);
        x = maxpool2d(x);
    }
    x = conv_block(x, "bottleneck");
    for (int i = cfg.depth - 1; i >= 0; --i) {
        x = conv_transpose2d(x, param("up" + std::to_string(i) + ".deconv.weight"), 2);
        const TensorT<T>& skip = skips[static_cast<std::size_t>(i)];
        TensorT<T> fitted = (cfg.skip_mode == SkipMode::resize)
                                ? resize_bilinear(skip, x.shape[2], x.shape[3])
                                : center_crop(skip, x.shape[2], x.shape[3]);
        x = concat_channels(fitted, x);
        x = conv_block(x, "dec" + std::to_string(i));
    }
    x = conv2d(x, param("head.weight"), param("head.bias"), 1, 0);
    result.output = sigmoid(x);
    return result;
}

}  // namespace tinyseg
