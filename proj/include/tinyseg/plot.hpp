#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyseg/metrics.hpp"

namespace tinyseg {

// Deterministic grayscale raster of the train/val loss curves. No
// drawing backend; pixels are produced directly so two runs over the
// same CSV are byte-identical.

inline constexpr int kPlotWidth = 640;
inline constexpr int kPlotHeight = 480;
inline constexpr int kPlotMarginLeft = 60;
inline constexpr int kPlotMarginRight = 20;
inline constexpr int kPlotMarginTop = 20;
inline constexpr int kPlotMarginBottom = 44;
inline constexpr std::uint8_t kTrainShade = 0;    // black
inline constexpr std::uint8_t kValShade = 128;    // gray

struct Raster {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 255 = background

    std::uint8_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

// X pixel for an epoch value given the rendered epoch range; exposed so
// tests can address curve columns.
int plot_x_for_epoch(int epoch, int epoch_min, int epoch_max);

Raster render_loss_curves(const std::vector<EpochRecord>& rows);

// Reads the CSV, renders, writes PNG or PGM (by extension). FormatError
// when the CSV has no data rows.
void emit_loss_curve(const std::string& metrics_csv, const std::string& out_path);

}  // namespace tinyseg
