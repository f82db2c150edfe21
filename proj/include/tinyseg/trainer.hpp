#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinyseg/checkpoint.hpp"
#include "tinyseg/data.hpp"
#include "tinyseg/losses.hpp"
#include "tinyseg/metrics.hpp"
#include "tinyseg/unet.hpp"

namespace tinyseg {

// Training loop, prediction and evaluation entry points backing the CLI.
//
// Reproducibility: a run is fully determined by the resolved config —
// weight init, split, shuffle and augmentation draws all come from the
// four named seeds, and per-epoch streams are derived independently, so a
// resumed run continues exactly where the uninterrupted one would be.

struct SeedPack {
    std::uint64_t weights = 1;
    std::uint64_t split = 2;
    std::uint64_t shuffle = 3;
    std::uint64_t augment = 4;
};

struct DataSpec {
    std::string images_dir;
    std::string masks_dir;
    std::string manifest;
    std::string val_images_dir;  // optional predefined validation set
    std::string val_masks_dir;
    std::string val_manifest;
    double val_fraction = 0.2;
    double mask_threshold = 0.5;
};

struct OptimizerSpec {
    double base_lr = 0.001;
    double factor = 0.75;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AugmentSpec {
    bool enabled = true;
    AugmentPolicy policy;
};

struct TrainConfig {
    DataSpec data;
    int image_size = 256;
    UNetConfig model;
    LossConfig loss;
    OptimizerSpec optimizer;
    int epochs = 20;
    int batch_size = 4;
    SeedPack seeds;
    std::string checkpoint_dir = "checkpoints";
    int checkpoint_every = 5;  // 0 disables periodic checkpoints
    DiceMode dice_mode = DiceMode::standard;
    AugmentSpec augment;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// Every field materialized, defaults included; written next to the
// artifacts so a run can be reproduced from the emitted file alone.
nlohmann::ordered_json resolved_config_json(const TrainConfig& cfg);

struct TrainResult {
    std::string final_checkpoint;
    std::string best_checkpoint;  // empty if no validation epoch ran
    std::string metrics_csv;
    std::string resolved_config;
    int epochs_run = 0;
    double best_val_dice = 0.0;
};

TrainResult train(const TrainConfig& cfg, const std::string& resume_checkpoint = {});

// Thresholded eval-mode forward at the model's training resolution; the
// result is resized back to the input's dimensions (nearest neighbor).
std::vector<std::uint8_t> predict_gray(UNetModel& model, int image_size, const GrayImage& image,
                                       double threshold);

void predict_mask(const std::string& checkpoint_path, const std::string& image_path,
                  const std::string& out_path, double threshold = 0.5);

struct EvalRow {
    std::string image;
    double dice = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_dice = 0.0;
};

// Core over loaded pairs, parameterized by the prediction function so the
// metric path is testable without a model.
EvalReport evaluate_pairs(
    const std::function<std::vector<std::uint8_t>(const SamplePair&)>& predict_fn,
    const std::vector<SamplePair>& samples, DiceMode mode);

// Loads the checkpoint, predicts every manifest pair and reports per-image
// and mean Dice; writes a CSV report when report_csv is non-empty.
EvalReport evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                    DiceMode mode, const std::string& report_csv = {});

}  // namespace tinyseg
