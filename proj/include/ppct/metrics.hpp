#pragma once

#include <span>

#include "ppct/core.hpp"

namespace ppct {

/// Area under the precision-recall curve (average precision).
///
/// Scores are visited in descending order; tied scores form one threshold
/// step, so the result does not depend on input order. Each step contributes
/// (recall gain) * (precision at that threshold). Labels are 0/1.
/// Throws DataError when the labels hold a single class, ShapeError when the
/// spans differ in length.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

/// Expected calibration error over `n_bins` equal-width bins on [0, 1].
double calibration_error(std::span<const double> scores, std::span<const int> labels, int n_bins);

/// Advertiser value of one impression: bid * p(click) * p(conversion | click).
inline double impression_value(double bid_per_conversion, double p_click, double p_conv) {
  return bid_per_conversion * p_conv * p_click;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample std / sqrt(n); 0 for n < 2
};

MeanSe mean_and_se(std::span<const double> values);

/// sqrt(se_a^2 + se_b^2).
inline double pooled_se(const MeanSe& a, const MeanSe& b) {
  return std::sqrt(a.se * a.se + b.se * b.se);
}

}  // namespace ppct
