#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "tinyseg/optim.hpp"
#include "tinyseg/unet.hpp"

namespace tinyseg {

// On-disk checkpoint layout (version 1):
//
//   bytes 0..3    magic "SGNF"
//   bytes 4..7    u32 little-endian version (= 1)
//   bytes 8..15   u64 little-endian JSON header length
//   bytes 16..    UTF-8 JSON header
//   padding       zeros up to the next 64-byte file boundary
//   payloads      raw little-endian f32 tensor data
//
// The JSON header holds {"config", "meta", "optim", "tensors"}; each
// "tensors" entry maps a name to {"dtype", "shape", "offset"} where offset
// is relative to the payload base and 64-byte aligned. Optimizer moments
// are stored under "<param>.adam_m" / "<param>.adam_v" with the step count
// in "optim". Round-trips are bit-exact.

struct CheckpointMeta {
    int epoch = 0;       // completed epochs at save time
    int image_size = 0;  // training resolution, used by predict/evaluate
};

struct Checkpoint {
    UNetModel model;
    CheckpointMeta meta;
    std::optional<AdamState> optim;
};

void save_checkpoint(const std::string& path, const UNetModel& model, const CheckpointMeta& meta,
                     const AdamState* optim = nullptr);

Checkpoint load_checkpoint(const std::string& path);

// Loads weights only, validating the tensor directory against the expected
// config's schema; the first offending name or shape is reported.
UNetModel load_weights(const std::string& path, const UNetConfig& expected_config);

void to_json(nlohmann::json& j, const UNetConfig& cfg);
void from_json(const nlohmann::json& j, UNetConfig& cfg);

}  // namespace tinyseg
