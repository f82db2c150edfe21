#include "tinyseg/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>

#include "tinyseg/errors.hpp"
#include "tinyseg/image_io.hpp"

namespace tinyseg {

namespace {

// 5x7 bitmap font, rows top to bottom, bit 4 = leftmost column. Covers
// digits, '.', '-', '+', and the letters used by the axis captions and
// legend.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
    static const std::map<char, std::array<std::uint8_t, 7>> f = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
        {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},
        {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
        {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
        {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
        {'p', {0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10}},
        {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
        {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
        {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    };
    return f;
}

void put(Raster& r, int y, int x, std::uint8_t shade) {
    if (y >= 0 && y < r.height && x >= 0 && x < r.width)
        r.pixels[static_cast<std::size_t>(y) * r.width + x] = shade;
}

void draw_text(Raster& r, int y, int x, const std::string& text, std::uint8_t shade) {
    int cx = x;
    for (char ch : text) {
        auto it = font().find(ch);
        if (it != font().end()) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[static_cast<std::size_t>(row)] & (1 << (4 - col)))
                        put(r, y + row, cx + col, shade);
        }
        cx += 6;  // 5px glyph + 1px spacing; unknown chars (spaces) just advance
    }
}

void draw_line(Raster& r, int y0, int x0, int y1, int x1, std::uint8_t shade) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put(r, y0, x0, shade);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace

int plot_x_for_epoch(int epoch, int epoch_min, int epoch_max) {
    const int plot_w = kPlotWidth - kPlotMarginLeft - kPlotMarginRight;
    if (epoch_max == epoch_min) return kPlotMarginLeft + plot_w / 2;
    const double t = static_cast<double>(epoch - epoch_min) / (epoch_max - epoch_min);
    return kPlotMarginLeft + static_cast<int>(std::lround(t * (plot_w - 1)));
}

Raster render_loss_curves(const std::vector<EpochRecord>& rows) {
    if (rows.empty()) throw FormatError("render_loss_curves: no data rows");
    Raster r{kPlotHeight, kPlotWidth,
             std::vector<std::uint8_t>(
                 static_cast<std::size_t>(kPlotHeight) * kPlotWidth, 255)};

    const int plot_h = kPlotHeight - kPlotMarginTop - kPlotMarginBottom;
    const int axis_y = kPlotHeight - kPlotMarginBottom;  // just below the plot area

    int e_min = rows.front().epoch, e_max = rows.front().epoch;
    double lo = rows.front().train_loss, hi = lo;
    for (const auto& row : rows) {
        e_min = std::min(e_min, row.epoch);
        e_max = std::max(e_max, row.epoch);
        lo = std::min({lo, row.train_loss, row.val_loss});
        hi = std::max({hi, row.train_loss, row.val_loss});
    }
    double pad = (hi - lo) * 0.05;
    if (pad <= 0.0) pad = 0.5;
    lo -= pad;
    hi += pad;

    auto y_for = [&](double v) {
        const double t = (hi - v) / (hi - lo);
        return kPlotMarginTop + static_cast<int>(std::lround(t * (plot_h - 1)));
    };

    // axes sit one pixel outside the plot interior
    draw_line(r, kPlotMarginTop, kPlotMarginLeft - 1, axis_y, kPlotMarginLeft - 1, 0);
    draw_line(r, axis_y, kPlotMarginLeft - 1, axis_y, kPlotWidth - kPlotMarginRight - 1, 0);

    // ticks and numeric labels
    const int n_yticks = 5;
    for (int i = 0; i < n_yticks; ++i) {
        const double v = lo + (hi - lo) * i / (n_yticks - 1);
        const int y = y_for(v);
        draw_line(r, y, kPlotMarginLeft - 5, y, kPlotMarginLeft - 1, 0);
        draw_text(r, y - 3, 4, format_value(v), 0);
    }
    const int n_xticks = std::min(6, e_max - e_min + 1);
    for (int i = 0; i < n_xticks; ++i) {
        const int e = e_min + (e_max - e_min) * i / std::max(1, n_xticks - 1);
        const int x = plot_x_for_epoch(e, e_min, e_max);
        draw_line(r, axis_y, x, axis_y + 4, x, 0);
        draw_text(r, axis_y + 7, x - 3, std::to_string(e), 0);
    }
    draw_text(r, kPlotHeight - 12, kPlotWidth / 2 - 15, "epoch", 0);
    draw_text(r, 6, 4, "loss", 0);

    auto draw_series = [&](auto value_of, std::uint8_t shade) {
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const int x0 = plot_x_for_epoch(rows[i - 1].epoch, e_min, e_max);
            const int x1 = plot_x_for_epoch(rows[i].epoch, e_min, e_max);
            draw_line(r, y_for(value_of(rows[i - 1])), x0, y_for(value_of(rows[i])), x1, shade);
        }
        if (rows.size() == 1)
            put(r, y_for(value_of(rows[0])), plot_x_for_epoch(rows[0].epoch, e_min, e_max), shade);
    };
    draw_series([](const EpochRecord& row) { return row.val_loss; }, kValShade);
    draw_series([](const EpochRecord& row) { return row.train_loss; }, kTrainShade);

    const int legend_x = kPlotWidth - kPlotMarginRight - 70;
    draw_line(r, kPlotMarginTop + 7, legend_x, kPlotMarginTop + 7, legend_x + 14, kTrainShade);
    draw_text(r, kPlotMarginTop + 4, legend_x + 18, "train", 0);
    draw_line(r, kPlotMarginTop + 19, legend_x, kPlotMarginTop + 19, legend_x + 14, kValShade);
    draw_text(r, kPlotMarginTop + 16, legend_x + 18, "val", 0);
    return r;
}

void emit_loss_curve(const std::string& metrics_csv, const std::string& out_path) {
    const auto rows = read_metrics_csv(metrics_csv);
    if (rows.empty())
        throw FormatError("emit_loss_curve: '" + metrics_csv + "' has no data rows");
    const Raster raster = render_loss_curves(rows);
    write_gray_png(out_path, raster.height, raster.width, raster.pixels);
}

}  // namespace tinyseg
