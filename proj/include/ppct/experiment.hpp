#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppct/cvr_model.hpp"
#include "ppct/datagen.hpp"
#include "ppct/imputer.hpp"
#include "ppct/protocol.hpp"

namespace ppct {

struct ExperimentSetting {
  SettingKind kind = SettingKind::NonPPCT;
  double optin_rate = 0.0;  // OptInOnly and PostRankingSignals only
  std::optional<int> fixed_epochs_override;  // honoured by AndroidPlusIosLe13

  bool uses_optin_rate() const {
    return kind == SettingKind::OptInOnly || kind == SettingKind::PostRankingSignals;
  }
};

/// Everything run_setting needs besides the records.
struct PipelineConfig {
  ProtocolConfig protocol;
  TrainConfig train;
  MLPArch arch = MLPArch::standard(GenConfig{}.dim_x);
  LrFitOptions imputer;
  CalibrationLevel calibration_level = CalibrationLevel::Group;
  bool calibrate = true;
  bool use_mtl = false;
  /// Fraction of users whose clicks form the held-out test set.
  double test_fraction = 0.25;
  int ece_bins = 10;

  void validate() const;
};

struct RunDiagnostics {
  bool imputer_invoked = false;
  std::size_t n_hard = 0;
  std::size_t n_soft = 0;
  std::size_t n_groups = 0;
  std::size_t n_groups_calibrated = 0;
  std::size_t n_groups_skipped = 0;  // infeasible after window leakage
  std::vector<std::uint64_t> train_ids;        // hard training rows (excl. validation)
  std::vector<std::uint64_t> validation_ids;
  std::vector<std::uint64_t> soft_ids;
  std::vector<std::uint64_t> imputer_fit_ids;
  std::vector<std::uint64_t> test_ids;
  TrainingTrace trace;
};

struct SeedResult {
  ExperimentSetting setting;
  std::uint64_t seed = 0;
  double pr_auc = 0.0;
  double calibration_error = 0.0;
  RunDiagnostics diagnostics;
  ModelParams model;
};

/// Test users are chosen by a hash of (seed, user_id), independent of the setting.
bool is_test_user(std::uint64_t user_id, std::uint64_t seed, double test_fraction);

/// Clicked records of test users, with their true labels.
std::vector<RankingExample> test_examples(std::span<const LogRecord> records, std::uint64_t seed,
                                          double test_fraction);

struct Evaluation {
  double pr_auc = 0.0;
  double calibration_error = 0.0;
};

Evaluation evaluate_model(const ModelParams& params, std::span<const RankingExample> test,
                          int ece_bins);

/// Full pipeline for one setting and seed: hold out test users, assign
/// opt-in, partition, (PostRankingSignals only) fit the imputer on the hard
/// partition, impute, run the reporting protocol over the label-withheld
/// clicks and calibrate, then train and score PR-AUC on the held-out clicks.
/// Stage failures are rethrown with the stage name prefixed.
SeedResult run_setting(const ExperimentSetting& setting, std::span<const LogRecord> records,
                       const PipelineConfig& config, std::uint64_t seed);

struct MetricsReport {
  ExperimentSetting setting;
  double pr_auc = 0.0;  // mean over seeds
  double pr_auc_se = 0.0;
  double relative_pr_auc = 0.0;  // to the NonPPCT mean
  double calibration_error = 0.0;
  int n_seeds = 0;
};

struct SweepConfig {
  GenConfig gen;
  PipelineConfig pipeline;
  std::vector<ExperimentSetting> settings;  // kinds; rates come from `rates`
  std::vector<double> rates;
  int n_seeds = 10;

  void validate() const;
};

struct SweepResult {
  std::vector<SeedResult> cells;
  std::vector<MetricsReport> reports;
};

/// Seed s uses gen.seed + s for both data generation and the pipeline.
/// Settings that ignore the opt-in rate run once per seed and are reported
/// at every rate. `on_cell` sees each finished cell (for partial flushing).
SweepResult optin_sweep(const SweepConfig& config,
                        const std::function<void(const SeedResult&)>& on_cell = {});

/// Mean/SE per (setting, rate), relative to the NonPPCT mean; sorted by
/// setting then rate. Throws ConfigError if no NonPPCT cell exists.
std::vector<MetricsReport> aggregate_reports(std::span<const SeedResult> cells);

}  // namespace ppct
