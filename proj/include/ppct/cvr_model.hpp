#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "ppct/datagen.hpp"
#include "ppct/imputer.hpp"
#include "ppct/mlp.hpp"

namespace ppct {

using ModelParams = MlpParams<double>;

/// The only thing the CVR model is allowed to see: ranking features and a
/// target. There is no post-ranking field to read.
struct RankingExample {
  std::uint64_t record_id = 0;
  Vector x;
  double label = 0.0;
};

std::vector<RankingExample> hard_examples(std::span<const LogRecord> hard);

/// Pairs each unlabeled record with its soft label (matched by record id);
/// labels are clamped to [eps, 1 - eps].
std::vector<RankingExample> soft_examples(std::span<const UnlabeledRecord> unlabeled,
                                          std::span<const SoftLabel> labels);

struct EarlyStopping {
  int patience = 5;
};
struct FixedEpochs {
  int epochs = 10;
};
using StoppingRule = std::variant<EarlyStopping, FixedEpochs>;

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 64;
  int max_epochs = 40;
  StoppingRule stopping = EarlyStopping{5};
  double validation_fraction = 0.1;
  double momentum = 0.0;
  /// Loss weight of soft-labeled examples relative to hard ones.
  double soft_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_pr_auc = 0.0;  // NaN without a validation split
};

struct TrainingTrace {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // epoch whose parameters were returned
  std::vector<std::uint64_t> validation_ids;
};

struct TrainResult {
  ModelParams params;
  TrainingTrace trace;
};

/// sigmoid of head 0.
double forward(const ModelParams& params, const Vector& x);
std::vector<double> predict(const ModelParams& params, std::span<const RankingExample> examples);

/// -label log p - (1 - label) log(1 - p), with p clamped to [eps, 1 - eps].
/// Throws DataError if label is outside [0, 1].
double soft_xent_loss(double p, double label);

/// Mini-batch SGD on the mean soft cross-entropy over hard U soft.
///
/// EarlyStopping holds out a label-stratified validation_fraction of the hard
/// examples, tracks validation PR-AUC after each epoch, stops after
/// `patience` epochs without a strict improvement and restores the best
/// epoch. FixedEpochs trains on everything for exactly `epochs` epochs.
TrainResult train(std::span<const RankingExample> hard, std::span<const RankingExample> soft,
                  const MLPArch& arch, const TrainConfig& config);

/// Two-head variant: hard examples train head 0, soft examples head 1, both
/// through the shared trunk; the batch loss is the unweighted sum of the two
/// per-head means. Validation and inference use head 0.
TrainResult train_mtl(std::span<const RankingExample> hard, std::span<const RankingExample> soft,
                      const MLPArch& arch, const TrainConfig& config);

/// Text checkpoint: an arch header followed by every parameter in shortest
/// round-trip decimal form, so a save/load cycle is bit-exact.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ppct
