#include "tinyseg/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "tinyseg/errors.hpp"
#include "tinyseg/image_io.hpp"
#include "tinyseg/rng.hpp"

namespace fs = std::filesystem;

namespace tinyseg {

void write_shapes_dataset(const std::string& dir, int count, int size, std::uint64_t seed) {
    if (count < 1 || size < 4) throw InvalidConfig("write_shapes_dataset: bad count/size");
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    for (int idx = 0; idx < count; ++idx) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(idx)));
        const std::size_t plane = static_cast<std::size_t>(size) * size;
        std::vector<float> image(plane);
        std::vector<std::uint8_t> mask(plane, 0);
        for (auto& v : image) v = 0.08f + 0.08f * static_cast<float>(rng.uniform());

        const int n_circles = 1 + static_cast<int>(rng.uniform_int(4));
        for (int c = 0; c < n_circles; ++c) {
            const double cx = (0.15 + 0.7 * rng.uniform()) * size;
            const double cy = (0.15 + 0.7 * rng.uniform()) * size;
            const double r = (0.08 + 0.14 * rng.uniform()) * size;
            const float level = 0.55f + 0.35f * static_cast<float>(rng.uniform());
            const double r2 = r * r;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double dy = y - cy, dx = x - cx;
                    if (dy * dy + dx * dx <= r2) {
                        const std::size_t o = static_cast<std::size_t>(y) * size + x;
                        image[o] = std::max(image[o], level);
                        mask[o] = 1;
                    }
                }
        }

        std::vector<std::uint8_t> gray(plane);
        for (std::size_t i = 0; i < plane; ++i)
            gray[i] = static_cast<std::uint8_t>(
                std::clamp(static_cast<int>(image[i] * 255.0f + 0.5f), 0, 255));

        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", idx);
        write_gray_png((fs::path(dir) / "images" / name).string(), size, size, gray);
        write_mask_png((fs::path(dir) / "masks" / name).string(), size, size, mask);
    }
}

}  // namespace tinyseg
