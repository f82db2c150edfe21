#include "tinyseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tinyseg/layers.hpp"
#include "tinyseg/image_io.hpp"
#include "tinyseg/optim.hpp"

namespace fs = std::filesystem;

namespace tinyseg {

namespace {

constexpr double kPredictThreshold = 0.5;

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& context) {
    if (!j.is_object()) throw ConfigError("config: '" + context + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" + it.key() + "' in " + context);
    }
}

LossKind loss_kind_from(const std::string& s) {
    if (s == "bce") return LossKind::bce;
    if (s == "ce") return LossKind::ce;
    if (s == "focal") return LossKind::focal;
    if (s == "dice") return LossKind::dice;
    if (s == "mixed") return LossKind::mixed;
    throw ConfigError("config: unknown loss kind '" + s + "'");
}

std::string loss_kind_str(LossKind k) {
    switch (k) {
        case LossKind::bce: return "bce";
        case LossKind::ce: return "ce";
        case LossKind::focal: return "focal";
        case LossKind::dice: return "dice";
        case LossKind::mixed: return "mixed";
    }
    return "mixed";
}

DiceMode dice_mode_from(const std::string& s) {
    if (s == "standard") return DiceMode::standard;
    if (s == "paper_literal" || s == "paper-literal") return DiceMode::paper_literal;
    throw ConfigError("config: unknown dice mode '" + s + "'");
}

RotationKind rotation_from(const std::string& s) {
    if (s == "none") return RotationKind::none;
    if (s == "quarter_turns") return RotationKind::quarter_turns;
    if (s == "small_angle") return RotationKind::small_angle;
    throw ConfigError("config: unknown rotation kind '" + s + "'");
}

std::string rotation_str(RotationKind k) {
    switch (k) {
        case RotationKind::none: return "none";
        case RotationKind::quarter_turns: return "quarter_turns";
        case RotationKind::small_angle: return "small_angle";
    }
    return "quarter_turns";
}

std::vector<std::pair<std::string, std::string>> resolve_pairs(const DataSpec& d, bool val_set) {
    if (val_set) {
        if (!d.val_manifest.empty()) return list_pairs_manifest(d.val_manifest);
        return list_pairs_directory(d.val_images_dir, d.val_masks_dir);
    }
    if (!d.manifest.empty()) return list_pairs_manifest(d.manifest);
    return list_pairs_directory(d.images_dir, d.masks_dir);
}

bool has_predefined_val(const DataSpec& d) {
    return !d.val_manifest.empty() || (!d.val_images_dir.empty() && !d.val_masks_dir.empty());
}

// Binarize at strict p > threshold.
std::vector<std::uint8_t> threshold_probs(const float* p, std::size_t n, double threshold) {
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = p[i] > threshold ? 1 : 0;
    return out;
}

std::vector<std::uint8_t> nearest_resize_mask(const std::vector<std::uint8_t>& mask, int h, int w,
                                              int out_h, int out_w) {
    if (h == out_h && w == out_w) return mask;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const int iy = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, h - 1);
        for (int x = 0; x < out_w; ++x) {
            const int ix = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, w - 1);
            out[static_cast<std::size_t>(y) * out_w + x] =
                mask[static_cast<std::size_t>(iy) * w + ix];
        }
    }
    return out;
}

double dice_binary(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                   DiceMode mode) {
    if (a.size() != b.size())
        throw ShapeMismatch("dice: mask sizes differ (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    std::int64_t inter = 0, ca = 0, cb = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ai = a[i] != 0, bi = b[i] != 0;
        inter += (ai && bi);
        ca += ai;
        cb += bi;
        uni += (ai || bi);
    }
    if (mode == DiceMode::standard)
        return (ca + cb) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
    return uni == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

void save_atomic(const std::string& path, const UNetModel& model, const CheckpointMeta& meta,
                 const AdamState* optim) {
    save_checkpoint(path, model, meta, optim);  // save_checkpoint is tmp+rename already
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
    check_keys(j, {"data", "image_size", "model", "loss", "optimizer", "epochs", "batch_size",
                   "seeds", "checkpoint_dir", "checkpoint_every", "dice_mode", "augment"},
               "top level");
    TrainConfig cfg;
    try {
        if (!j.contains("data")) throw ConfigError("config: missing required 'data' section");
        const auto& d = j.at("data");
        check_keys(d, {"images_dir", "masks_dir", "manifest", "val_images_dir", "val_masks_dir",
                       "val_manifest", "val_fraction", "mask_threshold"},
                   "data");
        cfg.data.images_dir = d.value("images_dir", "");
        cfg.data.masks_dir = d.value("masks_dir", "");
        cfg.data.manifest = d.value("manifest", "");
        cfg.data.val_images_dir = d.value("val_images_dir", "");
        cfg.data.val_masks_dir = d.value("val_masks_dir", "");
        cfg.data.val_manifest = d.value("val_manifest", "");
        cfg.data.val_fraction = d.value("val_fraction", 0.2);
        cfg.data.mask_threshold = d.value("mask_threshold", 0.5);
        if (cfg.data.manifest.empty() && (cfg.data.images_dir.empty() || cfg.data.masks_dir.empty()))
            throw ConfigError("config: data needs 'manifest' or 'images_dir'+'masks_dir'");

        cfg.image_size = j.value("image_size", 256);
        if (j.contains("model")) {
            const auto& m = j.at("model");
            check_keys(m, {"in_channels", "base_channels", "depth", "skip_mode", "out_channels"},
                       "model");
            cfg.model.in_channels = m.value("in_channels", 1);
            cfg.model.base_channels = m.value("base_channels", 64);
            cfg.model.depth = m.value("depth", 4);
            cfg.model.out_channels = m.value("out_channels", 1);
            const std::string sm = m.value("skip_mode", "resize");
            if (sm == "resize")
                cfg.model.skip_mode = SkipMode::resize;
            else if (sm == "center_crop")
                cfg.model.skip_mode = SkipMode::center_crop;
            else
                throw ConfigError("config: unknown skip_mode '" + sm + "'");
        } else {
            cfg.model = UNetConfig{1, 64, 4, SkipMode::resize, 1};
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            check_keys(l, {"kind", "alpha", "gamma", "smooth"}, "loss");
            cfg.loss.kind = loss_kind_from(l.value("kind", "mixed"));
            cfg.loss.alpha = l.value("alpha", 1.0);
            cfg.loss.gamma = l.value("gamma", 0.9);
            cfg.loss.smooth = l.value("smooth", 1.0);
            if (cfg.loss.gamma < 0.0) throw ConfigError("config: loss gamma must be >= 0");
            if (cfg.loss.smooth <= 0.0) throw ConfigError("config: loss smooth must be > 0");
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            check_keys(o, {"base_lr", "factor", "beta1", "beta2", "eps"}, "optimizer");
            cfg.optimizer.base_lr = o.value("base_lr", 0.001);
            cfg.optimizer.factor = o.value("factor", 0.75);
            cfg.optimizer.beta1 = o.value("beta1", 0.9);
            cfg.optimizer.beta2 = o.value("beta2", 0.999);
            cfg.optimizer.eps = o.value("eps", 1e-8);
        }
        cfg.epochs = j.value("epochs", 20);
        cfg.batch_size = j.value("batch_size", 4);
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            check_keys(s, {"weights", "split", "shuffle", "augment"}, "seeds");
            cfg.seeds.weights = s.value("weights", std::uint64_t{1});
            cfg.seeds.split = s.value("split", std::uint64_t{2});
            cfg.seeds.shuffle = s.value("shuffle", std::uint64_t{3});
            cfg.seeds.augment = s.value("augment", std::uint64_t{4});
        }
        cfg.checkpoint_dir = j.value("checkpoint_dir", "checkpoints");
        cfg.checkpoint_every = j.value("checkpoint_every", 5);
        cfg.dice_mode = dice_mode_from(j.value("dice_mode", "standard"));
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            check_keys(a, {"enabled", "hflip_prob", "rotation", "max_angle_deg"}, "augment");
            cfg.augment.enabled = a.value("enabled", true);
            cfg.augment.policy.hflip_prob = a.value("hflip_prob", 0.5);
            cfg.augment.policy.rotation = rotation_from(a.value("rotation", "quarter_turns"));
            cfg.augment.policy.max_angle_deg = a.value("max_angle_deg", 10.0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    if (cfg.epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (cfg.image_size < 2) throw ConfigError("config: image_size must be >= 2");
    try {
        validate_config(cfg.model);
        validate_depth(cfg.image_size, cfg.image_size, cfg.model.depth);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return train_config_from_json(j);
}

nlohmann::ordered_json resolved_config_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["data"] = {{"images_dir", cfg.data.images_dir},
                 {"masks_dir", cfg.data.masks_dir},
                 {"manifest", cfg.data.manifest},
                 {"val_images_dir", cfg.data.val_images_dir},
                 {"val_masks_dir", cfg.data.val_masks_dir},
                 {"val_manifest", cfg.data.val_manifest},
                 {"val_fraction", cfg.data.val_fraction},
                 {"mask_threshold", cfg.data.mask_threshold}};
    j["image_size"] = cfg.image_size;
    j["model"] = {{"in_channels", cfg.model.in_channels},
                  {"base_channels", cfg.model.base_channels},
                  {"depth", cfg.model.depth},
                  {"skip_mode", cfg.model.skip_mode == SkipMode::resize ? "resize" : "center_crop"},
                  {"out_channels", cfg.model.out_channels}};
    j["loss"] = {{"kind", loss_kind_str(cfg.loss.kind)},
                 {"alpha", cfg.loss.alpha},
                 {"gamma", cfg.loss.gamma},
                 {"smooth", cfg.loss.smooth}};
    j["optimizer"] = {{"base_lr", cfg.optimizer.base_lr},
                      {"factor", cfg.optimizer.factor},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps}};
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["seeds"] = {{"weights", cfg.seeds.weights},
                  {"split", cfg.seeds.split},
                  {"shuffle", cfg.seeds.shuffle},
                  {"augment", cfg.seeds.augment}};
    j["checkpoint_dir"] = cfg.checkpoint_dir;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["dice_mode"] = cfg.dice_mode == DiceMode::standard ? "standard" : "paper_literal";
    j["augment"] = {{"enabled", cfg.augment.enabled},
                    {"hflip_prob", cfg.augment.policy.hflip_prob},
                    {"rotation", rotation_str(cfg.augment.policy.rotation)},
                    {"max_angle_deg", cfg.augment.policy.max_angle_deg}};
    return j;
}

TrainResult train(const TrainConfig& cfg, const std::string& resume_checkpoint) {
    // --- data ---
    auto train_samples = load_dataset(resolve_pairs(cfg.data, false), cfg.data.mask_threshold);
    std::vector<SamplePair> val_samples;
    if (has_predefined_val(cfg.data)) {
        val_samples = load_dataset(resolve_pairs(cfg.data, true), cfg.data.mask_threshold);
    } else {
        DatasetSplit split = split_dataset(std::move(train_samples), cfg.data.val_fraction,
                                           cfg.seeds.split);
        train_samples = std::move(split.train);
        val_samples = std::move(split.val);
    }
    for (auto& s : train_samples) s = resize_pair(s, cfg.image_size);
    for (auto& s : val_samples) s = resize_pair(s, cfg.image_size);
    if (train_samples.empty()) throw EmptyDataset("train: no training samples");
    if (cfg.epochs > 0 && val_samples.empty())
        throw DataError("train: validation set is empty; lower val_fraction or provide one");

    // --- model / optimizer ---
    UNetModel model;
    AdamState adam;
    adam.beta1 = static_cast<float>(cfg.optimizer.beta1);
    adam.beta2 = static_cast<float>(cfg.optimizer.beta2);
    adam.eps = static_cast<float>(cfg.optimizer.eps);
    int start_epoch = 0;
    if (!resume_checkpoint.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_checkpoint);
        if (!(ckpt.model.config.in_channels == cfg.model.in_channels &&
              ckpt.model.config.base_channels == cfg.model.base_channels &&
              ckpt.model.config.depth == cfg.model.depth &&
              ckpt.model.config.skip_mode == cfg.model.skip_mode &&
              ckpt.model.config.out_channels == cfg.model.out_channels))
            throw ConfigError("resume: checkpoint model config does not match the train config");
        if (ckpt.meta.image_size != cfg.image_size)
            throw ConfigError("resume: checkpoint image_size " +
                              std::to_string(ckpt.meta.image_size) + " vs config " +
                              std::to_string(cfg.image_size));
        if (ckpt.meta.epoch > cfg.epochs)
            throw ConfigError("resume: checkpoint is past the requested epoch count");
        model = std::move(ckpt.model);
        if (ckpt.optim) adam = std::move(*ckpt.optim);
        start_epoch = ckpt.meta.epoch;
    } else {
        model = build_unet(cfg.model, cfg.seeds.weights);
    }

    // --- artifacts ---
    fs::create_directories(cfg.checkpoint_dir);
    TrainResult result;
    result.metrics_csv = (fs::path(cfg.checkpoint_dir) / "metrics.csv").string();
    result.resolved_config = (fs::path(cfg.checkpoint_dir) / "config_resolved.json").string();
    result.final_checkpoint = (fs::path(cfg.checkpoint_dir) / "last.ckpt").string();
    {
        std::ofstream out(result.resolved_config, std::ios::trunc);
        out << resolved_config_json(cfg).dump(2) << "\n";
    }
    const bool append_metrics = !resume_checkpoint.empty() && fs::exists(result.metrics_csv);
    std::ofstream metrics(result.metrics_csv,
                          append_metrics ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("train: cannot open metrics CSV for writing");
    if (!append_metrics) metrics << kMetricsHeader << "\n" << std::flush;

    const LrSchedule sched{cfg.optimizer.base_lr, cfg.optimizer.factor, cfg.epochs};
    const std::string best_path = (fs::path(cfg.checkpoint_dir) / "best.ckpt").string();
    double best_dice = -1.0;
    int best_epoch = -1;

    // --- epochs ---
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(sched, epoch);

        double train_loss_sum = 0.0;
        std::int64_t train_count = 0;
        const auto batches = epoch_batch_indices(train_samples.size(), cfg.batch_size,
                                                 cfg.seeds.shuffle, epoch);
        for (const auto& idx : batches) {
            Batch batch;
            if (cfg.augment.enabled) {
                std::vector<SamplePair> augmented;
                augmented.reserve(idx.size());
                for (std::size_t i : idx) {
                    Rng draw(mix_seed(cfg.seeds.augment, static_cast<std::uint64_t>(epoch), i));
                    augmented.push_back(augment(train_samples[i], cfg.augment.policy, draw));
                }
                std::vector<std::size_t> all(augmented.size());
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                batch = assemble_batch(augmented, all);
            } else {
                batch = assemble_batch(train_samples, idx);
            }

            Tape tape;
            auto fwd = unet_forward(model, batch.images, Mode::train, &tape);
            auto loss = segmentation_loss(fwd.output, batch.masks, cfg.loss);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw DivergedLoss("training loss is not finite at epoch " +
                                   std::to_string(epoch + 1));
            tape.backward(loss);
            std::map<std::string, Tensor> grads;
            for (const auto& [name, node] : fwd.param_nodes)
                if (tape.has_grad_node(node)) grads.emplace(name, tape.grad_node(node));
            adam_step(model.params, grads, adam, static_cast<float>(lr));
            train_loss_sum += loss_value * static_cast<double>(idx.size());
            train_count += static_cast<std::int64_t>(idx.size());
        }

        // --- validation (eval mode, no augmentation, original order) ---
        double val_loss_sum = 0.0;
        double dice_sum = 0.0;
        std::int64_t val_count = 0;
        for (std::size_t at = 0; at < val_samples.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<std::size_t> idx;
            for (std::size_t i = at;
                 i < std::min(val_samples.size(), at + static_cast<std::size_t>(cfg.batch_size));
                 ++i)
                idx.push_back(i);
            Batch batch = assemble_batch(val_samples, idx);
            auto fwd = unet_forward(model, batch.images, Mode::eval);
            auto loss = segmentation_loss(fwd.output, batch.masks, cfg.loss);
            val_loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
            const std::size_t plane =
                static_cast<std::size_t>(cfg.image_size) * cfg.image_size;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto pred = threshold_probs(fwd.output.data.data() + i * plane, plane,
                                                  kPredictThreshold);
                std::vector<std::uint8_t> target(plane);
                for (std::size_t p = 0; p < plane; ++p)
                    target[p] = batch.masks.data[i * plane + p] != 0.0f ? 1 : 0;
                dice_sum += dice_binary(pred, target, cfg.dice_mode);
            }
            val_count += static_cast<std::int64_t>(idx.size());
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = train_loss_sum / static_cast<double>(train_count);
        rec.val_loss = val_count ? val_loss_sum / static_cast<double>(val_count) : 0.0;
        rec.val_dice_mean = val_count ? dice_sum / static_cast<double>(val_count) : 0.0;
        rec.lr = lr;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics << format_metrics_row(rec) << "\n" << std::flush;

        if (rec.val_dice_mean > best_dice) {
            best_dice = rec.val_dice_mean;
            best_epoch = epoch + 1;
            save_atomic(best_path, model, {epoch + 1, cfg.image_size}, &adam);
            result.best_checkpoint = best_path;
            result.best_val_dice = best_dice;
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
            save_atomic((fs::path(cfg.checkpoint_dir) / name).string(), model,
                        {epoch + 1, cfg.image_size}, &adam);
        }
        result.epochs_run = epoch + 1;
    }
    (void)best_epoch;

    save_atomic(result.final_checkpoint, model, {cfg.epochs, cfg.image_size}, &adam);
    return result;
}

std::vector<std::uint8_t> predict_gray(UNetModel& model, int image_size, const GrayImage& image,
                                       double threshold) {
    validate_depth(image_size, image_size, model.config.depth);
    Tensor input = Tensor::zeros({1, 1, image_size, image_size});
    const auto ty = detail::bilinear_taps(image.height, image_size);
    const auto tx = detail::bilinear_taps(image.width, image_size);
    detail::bilinear_plane(image.pixels.data(), image.width, input.data.data(),
                           image_size, image_size, ty, tx);
    auto fwd = unet_forward(model, input, Mode::eval);
    const auto small = threshold_probs(fwd.output.data.data(), fwd.output.data.size(), threshold);
    return nearest_resize_mask(small, image_size, image_size, image.height, image.width);
}

void predict_mask(const std::string& checkpoint_path, const std::string& image_path,
                  const std::string& out_path, double threshold) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const GrayImage image = load_image_gray(image_path);
    const int size = ckpt.meta.image_size > 0 ? ckpt.meta.image_size
                                              : std::min(image.height, image.width);
    const auto mask = predict_gray(ckpt.model, size, image, threshold);
    write_mask_png(out_path, image.height, image.width, mask);
}

EvalReport evaluate_pairs(
    const std::function<std::vector<std::uint8_t>(const SamplePair&)>& predict_fn,
    const std::vector<SamplePair>& samples, DiceMode mode) {
    if (samples.empty()) throw EmptyDataset("evaluate: no samples");
    EvalReport report;
    double total = 0.0;
    for (const auto& s : samples) {
        const auto pred = predict_fn(s);
        std::vector<std::uint8_t> target(s.mask.begin(), s.mask.end());
        const double d = dice_binary(pred, target, mode);
        report.rows.push_back({s.image_path, d});
        total += d;
    }
    report.mean_dice = total / static_cast<double>(samples.size());
    return report;
}

EvalReport evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                    DiceMode mode, const std::string& report_csv) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto samples = load_dataset(list_pairs_manifest(manifest_path));
    const int size = ckpt.meta.image_size > 0 ? ckpt.meta.image_size : 0;
    auto report = evaluate_pairs(
        [&](const SamplePair& s) {
            const int use = size > 0 ? size : std::min(s.height, s.width);
            return predict_gray(ckpt.model, use, GrayImage{s.height, s.width, s.image},
                                kPredictThreshold);
        },
        samples, mode);
    if (!report_csv.empty()) {
        std::ofstream out(report_csv, std::ios::trunc);
        if (!out) throw DataError("evaluate: cannot write report '" + report_csv + "'");
        out << "image,dice\n";
        for (const auto& row : report.rows) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.10g", row.dice);
            out << row.image << "," << buf << "\n";
        }
    }
    return report;
}

}  // namespace tinyseg
