#include "tinyseg/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tinyseg/errors.hpp"

namespace tinyseg {

std::string format_metrics_row(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.3f", r.epoch, r.train_loss,
                  r.val_loss, r.val_dice_mean, r.lr, r.wall_seconds);
    return buf;
}

std::vector<EpochRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("metrics CSV not found: '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("metrics CSV '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader)
        throw FormatError("metrics CSV '" + path + "' has unexpected header '" + line + "'");
    std::vector<EpochRecord> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        double vals[6];
        for (int i = 0; i < 6; ++i) {
            if (!std::getline(ss, field, ',') || field.empty())
                throw FormatError("metrics CSV '" + path + "': malformed row at line " +
                                  std::to_string(lineno));
            try {
                vals[i] = std::stod(field);
            } catch (const std::exception&) {
                throw FormatError("metrics CSV '" + path + "': bad number at line " +
                                  std::to_string(lineno));
            }
        }
        if (std::getline(ss, field, ','))
            throw FormatError("metrics CSV '" + path + "': too many fields at line " +
                              std::to_string(lineno));
        rows.push_back({static_cast<int>(vals[0]), vals[1], vals[2], vals[3], vals[4], vals[5]});
    }
    return rows;
}

}  // namespace tinyseg
