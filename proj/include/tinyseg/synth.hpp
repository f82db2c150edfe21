#pragma once

#include <cstdint>
#include <string>

namespace tinyseg {

// Synthetic binary-segmentation dataset: grayscale images containing 1-4
// filled circles on a noisy dark background; the mask is the union of the
// circles. Fully determined by the seed. Writes <dir>/images/NNNN.png and
// <dir>/masks/NNNN.png.
void write_shapes_dataset(const std::string& dir, int count, int size, std::uint64_t seed);

}  // namespace tinyseg
