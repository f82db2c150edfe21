#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tinyseg/rng.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

// Image/mask ingestion and batching. Images are grayscale floats in [0,1]
// (RGB collapsed by channel mean), masks strictly {0,1}. Every random
// decision is drawn from per-purpose seeded streams so a full epoch of
// batches is reproducible from (split, shuffle, augment) seeds alone.

struct SamplePair {
    int height = 0;
    int width = 0;
    std::vector<float> image;        // H*W, in [0,1]
    std::vector<std::uint8_t> mask;  // H*W, in {0,1}
    std::string image_path;
    std::string mask_path;
};

struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // H*W, in [0,1]
};

GrayImage load_image_gray(const std::string& path);

enum class RotationKind { none, quarter_turns, small_angle };

struct AugmentPolicy {
    double hflip_prob = 0.5;
    RotationKind rotation = RotationKind::quarter_turns;
    double max_angle_deg = 10.0;  // small_angle only
};

struct DatasetSplit {
    std::vector<SamplePair> train;
    std::vector<SamplePair> val;
    std::uint64_t split_seed = 0;
};

struct Batch {
    Tensor images;  // [N,1,H,W]
    Tensor masks;   // [N,1,H,W], values {0,1}
};

// Decodes and normalizes one pair. Mask binarization: if the mask's
// maximum normalized value exceeds `threshold`, pixels compare against
// threshold * bit-depth max; otherwise every non-zero pixel is foreground,
// which collapses instance-labeled masks (e.g. 16-bit cell labels {0,7,12})
// to a binary mask.
SamplePair load_sample(const std::string& image_path, const std::string& mask_path,
                       double threshold = 0.5);

// Bilinear image resize (same convention as resize_bilinear), nearest-
// neighbor mask resize so masks stay binary.
SamplePair resize_pair(const SamplePair& s, int size);

// Exact transforms applied identically to image and mask.
SamplePair hflip_pair(const SamplePair& s);
SamplePair rot90_pair(const SamplePair& s, int quarter_turns);  // CCW, k mod 4

// Horizontal flip then rotation, identical draws applied to image and mask.
// Quarter turns are exact index permutations; small-angle rotation samples
// the image bilinearly and the mask by nearest neighbor with zero fill.
SamplePair augment(const SamplePair& s, const AugmentPolicy& policy, Rng& draw);

DatasetSplit split_dataset(std::vector<SamplePair> samples, double val_fraction,
                           std::uint64_t seed);

// Shuffled index batches for one epoch; the last partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batch_indices(std::size_t n, int batch_size,
                                                          std::uint64_t shuffle_seed,
                                                          std::int64_t epoch);

Batch assemble_batch(const std::vector<SamplePair>& samples,
                     const std::vector<std::size_t>& indices);

std::vector<Batch> make_batches(const std::vector<SamplePair>& samples, int batch_size,
                                std::uint64_t shuffle_seed, std::int64_t epoch);

// Pair discovery: paired `images/` + `masks/` directories with identical
// filenames, or a manifest of "image<TAB>mask" lines (UTF-8, LF). Relative
// manifest paths resolve against the manifest's directory.
std::vector<std::pair<std::string, std::string>> list_pairs_directory(
    const std::string& images_dir, const std::string& masks_dir);

std::vector<std::pair<std::string, std::string>> list_pairs_manifest(
    const std::string& manifest_path);

std::vector<SamplePair> load_dataset(const std::vector<std::pair<std::string, std::string>>& pairs,
                                     double threshold = 0.5);

}  // namespace tinyseg
