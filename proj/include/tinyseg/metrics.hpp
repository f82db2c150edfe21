#pragma once

#include <string>
#include <vector>

namespace tinyseg {

// One row of the training metrics CSV. Header:
//   epoch,train_loss,val_loss,val_dice_mean,lr,wall_seconds
struct EpochRecord {
    int epoch = 0;  // 1-based completed epoch
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice_mean = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,val_loss,val_dice_mean,lr,wall_seconds";

std::string format_metrics_row(const EpochRecord& r);

// Parses a metrics CSV; FormatError on a missing/incorrect header or
// malformed row. An empty row set is allowed here (the epochs=0 run
// produces one); consumers that need data check for themselves.
std::vector<EpochRecord> read_metrics_csv(const std::string& path);

}  // namespace tinyseg
