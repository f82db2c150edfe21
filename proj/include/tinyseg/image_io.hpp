#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tinyseg {

// Thin decode/encode layer (PNG and TIFF, 8/16-bit, grayscale or RGB).
// Everything downstream works on normalized planes; nothing else in the
// library touches the codec.

struct DecodedImage {
    int height = 0;
    int width = 0;
    int channels = 0;           // 1 or 3
    int max_value = 255;        // 255 or 65535, from the source bit depth
    std::vector<std::uint16_t> pixels;  // row-major, interleaved channels
};

DecodedImage decode_image(const std::string& path);

// Writes a binary mask as an 8-bit PNG with values {0, 255}.
void write_mask_png(const std::string& path, int height, int width,
                    const std::vector<std::uint8_t>& mask01);

// Writes an 8-bit grayscale image; values clamped to [0,255].
void write_gray_png(const std::string& path, int height, int width,
                    const std::vector<std::uint8_t>& gray);

}  // namespace tinyseg
