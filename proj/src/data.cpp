#include "tinyseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tinyseg/image_io.hpp"
#include "tinyseg/layers.hpp"

namespace fs = std::filesystem;

namespace tinyseg {

namespace {

// Grayscale plane in [0,1] from a decoded image; RGB collapses by channel mean.
std::vector<float> to_gray(const DecodedImage& img) {
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
    std::vector<float> out(n);
    const float inv_max = 1.0f / static_cast<float>(img.max_value);
    if (img.channels == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = img.pixels[i] * inv_max;
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t b = i * 3;
            const float s = static_cast<float>(img.pixels[b]) + img.pixels[b + 1] + img.pixels[b + 2];
            out[i] = s / 3.0f * inv_max;
        }
    }
    return out;
}

int nearest_index(int dst, double scale, int in_size) {
    const int i = static_cast<int>(std::floor((dst + 0.5) * scale));
    return std::clamp(i, 0, in_size - 1);
}

// Quarter-turn counter-clockwise: out[r][c] = in[c][W-1-r]; output is W x H.
template <typename V>
std::vector<V> rot90(const std::vector<V>& in, int h, int w) {
    std::vector<V> out(in.size());
    for (int r = 0; r < w; ++r)
        for (int c = 0; c < h; ++c)
            out[static_cast<std::size_t>(r) * h + c] =
                in[static_cast<std::size_t>(c) * w + (w - 1 - r)];
    return out;
}

}  // namespace

GrayImage load_image_gray(const std::string& path) {
    const DecodedImage img = decode_image(path);
    return {img.height, img.width, to_gray(img)};
}

SamplePair load_sample(const std::string& image_path, const std::string& mask_path,
                       double threshold) {
    const DecodedImage img = decode_image(image_path);
    const DecodedImage msk = decode_image(mask_path);
    if (img.height != msk.height || img.width != msk.width)
        throw DimensionMismatch("image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " vs mask " +
                                std::to_string(msk.width) + "x" + std::to_string(msk.height) +
                                " ('" + image_path + "' / '" + mask_path + "')");

    SamplePair s;
    s.height = img.height;
    s.width = img.width;
    s.image = to_gray(img);
    s.image_path = image_path;
    s.mask_path = mask_path;

    const std::vector<float> mask_gray = to_gray(msk);
    const float max_norm = mask_gray.empty()
                               ? 0.0f
                               : *std::max_element(mask_gray.begin(), mask_gray.end());
    s.mask.resize(mask_gray.size());
    if (max_norm > threshold) {
        for (std::size_t i = 0; i < mask_gray.size(); ++i)
            s.mask[i] = mask_gray[i] > threshold ? 1 : 0;
    } else {
        // Instance-labeled or low-range mask: any non-zero pixel is foreground.
        for (std::size_t i = 0; i < mask_gray.size(); ++i) s.mask[i] = mask_gray[i] > 0.0f ? 1 : 0;
    }
    return s;
}

SamplePair resize_pair(const SamplePair& s, int size) {
    if (size < 1) throw InvalidGeometry("resize_pair: size must be >= 1");
    if (s.height == size && s.width == size) return s;
    SamplePair out;
    out.height = size;
    out.width = size;
    out.image_path = s.image_path;
    out.mask_path = s.mask_path;
    out.image.resize(static_cast<std::size_t>(size) * size);
    const auto ty = detail::bilinear_taps(s.height, size);
    const auto tx = detail::bilinear_taps(s.width, size);
    detail::bilinear_plane(s.image.data(), s.width, out.image.data(), size, size, ty, tx);
    out.mask.resize(static_cast<std::size_t>(size) * size);
    const double sy = static_cast<double>(s.height) / size;
    const double sx = static_cast<double>(s.width) / size;
    for (int y = 0; y < size; ++y) {
        const int iy = nearest_index(y, sy, s.height);
        for (int x = 0; x < size; ++x)
            out.mask[static_cast<std::size_t>(y) * size + x] =
                s.mask[static_cast<std::size_t>(iy) * s.width + nearest_index(x, sx, s.width)];
    }
    return out;
}

SamplePair augment(const SamplePair& s, const AugmentPolicy& policy, Rng& draw) {
    SamplePair out = s;
    if (draw.uniform() < policy.hflip_prob) {
        for (int y = 0; y < out.height; ++y) {
            auto* img_row = out.image.data() + static_cast<std::size_t>(y) * out.width;
            auto* mask_row = out.mask.data() + static_cast<std::size_t>(y) * out.width;
            std::reverse(img_row, img_row + out.width);
            std::reverse(mask_row, mask_row + out.width);
        }
    }
    if (policy.rotation == RotationKind::quarter_turns) {
        const int k = static_cast<int>(draw.uniform_int(4));
        for (int turn = 0; turn < k; ++turn) {
            out.image = rot90(out.image, out.height, out.width);
            out.mask = rot90(out.mask, out.height, out.width);
            std::swap(out.height, out.width);
        }
    } else if (policy.rotation == RotationKind::small_angle) {
        const double angle = (2.0 * draw.uniform() - 1.0) * policy.max_angle_deg * M_PI / 180.0;
        const double cy = (out.height - 1) / 2.0, cx = (out.width - 1) / 2.0;
        const double ca = std::cos(angle), sa = std::sin(angle);
        std::vector<float> img(out.image.size(), 0.0f);
        std::vector<std::uint8_t> mask(out.mask.size(), 0);
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                // inverse map: rotate the output pixel back into the source
                const double dy = y - cy, dx = x - cx;
                const double sy = ca * dy + sa * dx + cy;
                const double sx = -sa * dy + ca * dx + cx;
                const std::size_t o = static_cast<std::size_t>(y) * out.width + x;
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                if (sy >= 0.0 && sx >= 0.0 && y0 < out.height && x0 < out.width) {
                    const double fy = sy - y0, fx = sx - x0;
                    auto at = [&](int yy, int xx) -> double {
                        if (yy < 0 || xx < 0 || yy >= out.height || xx >= out.width) return 0.0;
                        return s.image[static_cast<std::size_t>(yy) * out.width + xx];
                    };
                    img[o] = static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                                fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
                    const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, out.height - 1);
                    const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, out.width - 1);
                    mask[o] = s.mask[static_cast<std::size_t>(ny) * out.width + nx];
                }
            }
        out.image = std::move(img);
        out.mask = std::move(mask);
    }
    return out;
}

DatasetSplit split_dataset(std::vector<SamplePair> samples, double val_fraction,
                           std::uint64_t seed) {
    if (samples.empty()) throw EmptyDataset("split_dataset: no samples");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw InvalidConfig("split_dataset: val_fraction must be in (0,1)");
    Rng rng(seed);
    for (std::size_t i = samples.size() - 1; i > 0; --i)
        std::swap(samples[i], samples[rng.uniform_int(i + 1)]);
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(samples.size()) * val_fraction));
    DatasetSplit split;
    split.split_seed = seed;
    split.train.assign(samples.begin(), samples.end() - static_cast<std::ptrdiff_t>(n_val));
    split.val.assign(samples.end() - static_cast<std::ptrdiff_t>(n_val), samples.end());
    return split;
}

std::vector<std::vector<std::size_t>> epoch_batch_indices(std::size_t n, int batch_size,
                                                          std::uint64_t shuffle_seed,
                                                          std::int64_t epoch) {
    if (n == 0) throw EmptyDataset("epoch_batch_indices: no samples");
    if (batch_size < 1) throw InvalidConfig("epoch_batch_indices: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

Batch assemble_batch(const std::vector<SamplePair>& samples,
                     const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw EmptyDataset("assemble_batch: empty index list");
    const SamplePair& first = samples.at(indices[0]);
    const int h = first.height, w = first.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int n = static_cast<int>(indices.size());
    Tensor images = Tensor::zeros({n, 1, h, w});
    Tensor masks = Tensor::zeros({n, 1, h, w});
    for (int i = 0; i < n; ++i) {
        const SamplePair& s = samples.at(indices[static_cast<std::size_t>(i)]);
        if (s.height != h || s.width != w)
            throw DimensionMismatch("assemble_batch: sample dims differ within batch");
        for (std::size_t p = 0; p < plane; ++p) {
            images.data[static_cast<std::size_t>(i) * plane + p] = s.image[p];
            masks.data[static_cast<std::size_t>(i) * plane + p] = static_cast<float>(s.mask[p]);
        }
    }
    return {std::move(images), std::move(masks)};
}

std::vector<Batch> make_batches(const std::vector<SamplePair>& samples, int batch_size,
                                std::uint64_t shuffle_seed, std::int64_t epoch) {
    std::vector<Batch> out;
    for (const auto& idx : epoch_batch_indices(samples.size(), batch_size, shuffle_seed, epoch))
        out.push_back(assemble_batch(samples, idx));
    return out;
}

std::vector<std::pair<std::string, std::string>> list_pairs_directory(
    const std::string& images_dir, const std::string& masks_dir) {
    if (!fs::is_directory(images_dir))
        throw FileNotFound("images directory not found: '" + images_dir + "'");
    if (!fs::is_directory(masks_dir))
        throw FileNotFound("masks directory not found: '" + masks_dir + "'");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(images_dir))
        if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw EmptyDataset("no images in '" + images_dir + "'");
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& name : names) {
        const fs::path mask_path = fs::path(masks_dir) / name;
        if (!fs::exists(mask_path))
            throw DataError("no mask for image '" + name + "' in '" + masks_dir + "'");
        pairs.emplace_back((fs::path(images_dir) / name).string(), mask_path.string());
    }
    return pairs;
}

std::vector<std::pair<std::string, std::string>> list_pairs_manifest(
    const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw FileNotFound("manifest not found: '" + manifest_path + "'");
    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&base](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw FormatError("manifest line " + std::to_string(lineno) +
                              ": expected 'image<TAB>mask'");
        pairs.emplace_back(resolve(line.substr(0, tab)), resolve(line.substr(tab + 1)));
    }
    if (pairs.empty()) throw EmptyDataset("manifest '" + manifest_path + "' lists no pairs");
    return pairs;
}

std::vector<SamplePair> load_dataset(
    const std::vector<std::pair<std::string, std::string>>& pairs, double threshold) {
    std::vector<SamplePair> out;
    out.reserve(pairs.size());
    for (const auto& [img, mask] : pairs) out.push_back(load_sample(img, mask, threshold));
    return out;
}

}  // namespace tinyseg
