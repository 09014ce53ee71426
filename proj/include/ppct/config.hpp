#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "ppct/experiment.hpp"

namespace ppct {

/// Everything one config file controls. `setting` and `optin_rate` pick the
/// single cell that `train` and `evaluate` run; `sweep` uses the lists in
/// `sweep`.
struct RunConfig {
  SweepConfig sweep;
  std::filesystem::path output_dir = "out";
  SettingKind setting = SettingKind::PostRankingSignals;
  double optin_rate = 0.0;
  /// Epoch count for AndroidPlusIosLe13 (fixed epochs instead of early stopping).
  std::optional<int> le13_fixed_epochs;

  RunConfig();
  void validate() const;
  ExperimentSetting single_setting() const;
};

/// INI sections [gen] [protocol] [train] [arch] [imputer] [experiment].
/// Missing keys keep their defaults. Unknown or malformed keys throw
/// ConfigError naming `section.key`.
RunConfig parse_run_config(std::istream& is);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical INI text of every field; parsing it yields the same config.
std::string dump_run_config(const RunConfig& config);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace ppct
