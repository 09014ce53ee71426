#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ppct/core.hpp"
#include "ppct/datagen.hpp"
#include "ppct/protocol.hpp"

namespace ppct {

/// Logistic regression on post-ranking signals. The last entry of `w` is the bias.
struct LRParams {
  Vector w;
  double l2 = 1e-4;
};

template <typename Scalar>
struct LossAndGradient {
  Scalar loss;
  VectorX<Scalar> gradient;
};

/// Mean negative log-likelihood of a bias-augmented logistic model plus
/// l2 * |w|^2 / 2 (bias excluded), and its exact gradient.
///
/// `features` holds one example per row; `weights` has features.cols() + 1
/// entries with the bias last.
template <typename DerivedW, typename DerivedX, typename DerivedZ>
LossAndGradient<typename DerivedW::Scalar> logistic_loss_and_gradient(
    const Eigen::MatrixBase<DerivedW>& weights, const Eigen::MatrixBase<DerivedX>& features,
    const Eigen::MatrixBase<DerivedZ>& labels, typename DerivedW::Scalar l2) {
  using Scalar = typename DerivedW::Scalar;
  const Eigen::Index dim = features.cols();
  if (weights.size() != dim + 1 || labels.size() != features.rows())
    throw ShapeError("logistic model: expected " + std::to_string(dim + 1) + " weights and " +
                     std::to_string(features.rows()) + " labels");
  if (features.rows() == 0) throw DataError("logistic model: empty batch");
  const Scalar n = static_cast<Scalar>(features.rows());
  const auto coef = weights.head(dim);
  const Scalar bias = weights(dim);

  const VectorX<Scalar> margin = (features * coef).array() + bias;
  // -z log s(m) - (1 - z) log(1 - s(m)) = softplus(m) - z m
  const Scalar nll = (softplus(margin.array()) - labels.array() * margin.array()).sum() / n;
  const VectorX<Scalar> residual = sigmoid(margin.array()).matrix() - labels;

  LossAndGradient<Scalar> out;
  out.loss = nll + Scalar(0.5) * l2 * coef.squaredNorm();
  out.gradient.resize(dim + 1);
  out.gradient.head(dim) = features.transpose() * residual / n + l2 * coef;
  out.gradient(dim) = residual.sum() / n;
  return out;
}

/// Hard-labeled post-ranking row: x' and z only.
struct PostRankingExample {
  Vector x_prime;
  double z = 0.0;
};

/// Only x' is copied from the records; ranking features never reach the imputer.
std::vector<PostRankingExample> post_ranking_examples(std::span<const LogRecord> hard);

LossAndGradient<double> lr_loss_and_gradient(const LRParams& params,
                                             std::span<const PostRankingExample> batch);

enum class LrSolver { Newton, GradientDescent };

struct LrFitOptions {
  double l2 = 1e-4;
  LrSolver solver = LrSolver::Newton;
  int max_iterations = 500;
  double gradient_tolerance = 1e-9;
  std::optional<Vector> initial_w;
  /// Return a bias-only model instead of failing on single-class input.
  bool allow_constant = false;
};

LRParams fit_logistic_regression(std::span<const PostRankingExample> rows,
                                 const LrFitOptions& options);

/// Fits on x' of hard-labeled clicked records. Throws DataError on
/// single-class input unless options.allow_constant is set.
LRParams fit_post_ranking_lr(std::span<const LogRecord> hard, const LrFitOptions& options);

struct SoftLabel {
  std::uint64_t record_id = 0;
  double z_hat = 0.5;
  bool calibrated = false;
};

/// z_hat = sigmoid(x' . w + b), clamped to [eps, 1 - eps].
std::vector<SoftLabel> impute_soft_labels(std::span<const UnlabeledRecord> unlabeled,
                                          const LRParams& params);

/// Largest logit shift magnitude used by calibration.
inline constexpr double kMaxLogitShift = 30.0;

/// Solves sum_i sigmoid(logit(z_i) + delta) = target for delta by bisection,
/// to absolute tolerance 1e-6 on the sum. Targets at or beyond the reachable
/// range saturate at +-kMaxLogitShift.
double solve_logit_shift(std::span<const double> z_hat, double target);

struct CalibrationOutcome {
  std::vector<SoftLabel> labels;
  std::size_t groups_calibrated = 0;
  std::size_t groups_saturated = 0;
  std::vector<std::string> warnings;
};

/// Shifts the logits of each group's soft labels so they sum to the group's
/// reported conversion count. Suppressed groups are left untouched.
///
/// Throws DataError when a label has no group, when a group holds more soft
/// labels than clicks, or when a group's count exceeds its size.
CalibrationOutcome calibrate_soft_labels(
    std::span<const SoftLabel> soft, const std::unordered_map<std::uint64_t, GroupKey>& membership,
    std::span<const GroupLabel> groups);

/// Granularity at which group counts are pooled before calibrating.
enum class CalibrationLevel { Group, AppToken, Global };

std::string_view calibration_level_name(CalibrationLevel level);
CalibrationLevel parse_calibration_level(std::string_view s);

struct CoarsenedGroups {
  std::vector<GroupLabel> groups;
  std::unordered_map<std::uint64_t, GroupKey> membership;
};

/// Pools unsuppressed groups across windows (AppToken) or entirely (Global).
/// Suppressed groups keep their own keys, so their members stay uncalibrated.
CoarsenedGroups coarsen_groups(std::span<const GroupLabel> groups,
                               const std::unordered_map<std::uint64_t, GroupKey>& membership,
                               CalibrationLevel level);

}  // namespace ppct
