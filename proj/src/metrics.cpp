#include "ppct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ppct {

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("pr_auc: scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size())
    throw DataError("pr_auc: undefined for single-class labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double total_pos = static_cast<double>(positives);
  std::size_t tp = 0;
  std::size_t fp = 0;
  double area = 0.0;
  double previous_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    std::size_t step_tp = 0;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (labels[order[i]] == 1) {
        ++step_tp;
      } else {
        ++fp;
      }
    }
    if (step_tp == 0) continue;
    tp += step_tp;
    const double recall = static_cast<double>(tp) / total_pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - previous_recall) * precision;
    previous_recall = recall;
  }
  return area;
}

double calibration_error(std::span<const double> scores, std::span<const int> labels, int n_bins) {
  if (n_bins < 1) throw ConfigError("n_bins", "must be >= 1");
  if (scores.size() != labels.size())
    throw ShapeError("calibration_error: scores and labels differ in length");
  if (scores.empty()) throw DataError("calibration_error: empty input");
  std::vector<double> score_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> label_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(s * n_bins), static_cast<std::size_t>(n_bins - 1));
    score_sum[b] += scores[i];
    label_sum[b] += labels[i];
    ++count[b];
  }
  const double n = static_cast<double>(scores.size());
  double ece = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    ece += (c / n) * std::abs(score_sum[b] / c - label_sum[b] / c);
  }
  return ece;
}

MeanSe mean_and_se(std::span<const double> values) {
  MeanSe out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

}  // namespace ppct
