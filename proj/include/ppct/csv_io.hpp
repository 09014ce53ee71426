#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ppct/cvr_model.hpp"
#include "ppct/datagen.hpp"
#include "ppct/experiment.hpp"
#include "ppct/imputer.hpp"
#include "ppct/protocol.hpp"

namespace ppct {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Log file: record_id,user_id,platform,os_version,target_app,opted_in,
// click_time,y,z,x_0..x_{d-1},xp_0..xp_{p-1}. xp columns are blank for
// unclicked rows; z is blank for label-withheld rows.
void write_logs_csv(std::ostream& os, std::span<const LogRecord> records);
void write_partition_csv(std::ostream& os, const LabeledPartition& partition);

/// Reads a generator export. Ad ids and z_true_prob are not in the file
/// (ad_id stays empty, z_true_prob is NaN). A blank z is a DataError.
std::vector<LogRecord> read_logs_csv(std::istream& is);

void write_callbacks_csv(std::ostream& os, std::span<const ConversionCallback> callbacks);
void write_groups_csv(std::ostream& os, std::span<const GroupLabel> groups);
void write_soft_labels_csv(std::ostream& os, std::span<const SoftLabel> labels);
void write_trace_csv(std::ostream& os, const TrainingTrace& trace);

/// Header line "dim <d> l2 <l2>" then one weight per line, bias last.
void write_lr_params(std::ostream& os, const LRParams& params);
LRParams read_lr_params(std::istream& is);

/// Per-cell report: setting,optin_rate,seed,pr_auc,calibration_error
void write_cells_csv(std::ostream& os, std::span<const SeedResult> cells);
void write_cells_header(std::ostream& os);
void write_cell_row(std::ostream& os, const SeedResult& cell);

/// Aggregated report: setting,optin_rate,pr_auc_mean,pr_auc_se,relative_pr_auc,n_seeds
void write_aggregated_csv(std::ostream& os, std::span<const MetricsReport> reports);

/// Fixed-width table for humans.
void write_summary(std::ostream& os, std::span<const MetricsReport> reports);

/// Flat `key=value` lines.
void write_manifest(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);

/// Writes through `<path>.partial` and renames on success, so `path` is
/// never left half-written. On failure the `.partial` file remains.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

}  // namespace ppct
