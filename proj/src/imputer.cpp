#include "ppct/imputer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include <Eigen/Cholesky>

namespace ppct {
namespace {

constexpr double kSumTolerance = 1e-7;

struct Design {
  Matrix features;
  Vector labels;
};

// Rows are put in a canonical order first so that a full-batch fit does not
// depend on the order the caller happened to supply.
Design canonical_design(std::span<const PostRankingExample> rows) {
  if (rows.empty()) throw DataError("logistic fit: no training rows");
  const Eigen::Index dim = rows.front().x_prime.size();
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& r : rows) {
    if (r.x_prime.size() != dim) throw ShapeError("logistic fit: inconsistent x' width");
    if (r.z != 0.0 && r.z != 1.0) throw DataError("logistic fit: labels must be 0 or 1");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = rows[a];
    const auto& rb = rows[b];
    if (ra.z != rb.z) return ra.z < rb.z;
    return std::lexicographical_compare(ra.x_prime.begin(), ra.x_prime.end(), rb.x_prime.begin(),
                                        rb.x_prime.end());
  });
  Design d{Matrix(static_cast<Eigen::Index>(rows.size()), dim),
           Vector(static_cast<Eigen::Index>(rows.size()))};
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    d.features.row(i) = rows[order[static_cast<std::size_t>(i)]].x_prime.transpose();
    d.labels(i) = rows[order[static_cast<std::size_t>(i)]].z;
  }
  return d;
}

Matrix logistic_hessian(const Vector& w, const Design& d, double l2) {
  const Eigen::Index dim = d.features.cols();
  const Eigen::Index n = d.features.rows();
  Matrix augmented(n, dim + 1);
  augmented.leftCols(dim) = d.features;
  augmented.col(dim).setOnes();
  const Vector margin = augmented * w;
  const Vector s = sigmoid(margin.array()).matrix();
  const Vector curvature = (s.array() * (1.0 - s.array())).matrix();
  Matrix h = augmented.transpose() * curvature.asDiagonal() * augmented / static_cast<double>(n);
  h.diagonal().head(dim).array() += l2;
  return h;
}

// Backtracking line search along `direction` (a descent direction).
Vector line_search(const Vector& w, const Vector& direction, double loss, const Vector& gradient,
                   const Design& d, double l2, double step) {
  const double slope = gradient.dot(direction);
  for (int i = 0; i < 60; ++i) {
    const Vector candidate = w + step * direction;
    const double f = logistic_loss_and_gradient(candidate, d.features, d.labels, l2).loss;
    if (std::isfinite(f) && f <= loss + 1e-4 * step * slope) return candidate;
    step *= 0.5;
  }
  return w;
}

}  // namespace

std::vector<PostRankingExample> post_ranking_examples(std::span<const LogRecord> hard) {
  std::vector<PostRankingExample> out;
  out.reserve(hard.size());
  for (const auto& r : hard) {
    if (!r.x_prime)
      throw DataError("record " + std::to_string(r.record_id) + " has no post-ranking signals");
    out.push_back({*r.x_prime, r.converted ? 1.0 : 0.0});
  }
  return out;
}

LossAndGradient<double> lr_loss_and_gradient(const LRParams& params,
                                             std::span<const PostRankingExample> batch) {
  if (batch.empty()) throw DataError("lr_loss_and_gradient: empty batch");
  const Eigen::Index dim = batch.front().x_prime.size();
  Matrix features(static_cast<Eigen::Index>(batch.size()), dim);
  Vector labels(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x_prime.size() != dim) throw ShapeError("lr_loss_and_gradient: ragged batch");
    if (batch[i].z != 0.0 && batch[i].z != 1.0)
      throw DataError("lr_loss_and_gradient: labels must be 0 or 1");
    features.row(static_cast<Eigen::Index>(i)) = batch[i].x_prime.transpose();
    labels(static_cast<Eigen::Index>(i)) = batch[i].z;
  }
  return logistic_loss_and_gradient(params.w, features, labels, params.l2);
}

LRParams fit_logistic_regression(std::span<const PostRankingExample> rows,
                                 const LrFitOptions& options) {
  if (!(options.l2 >= 0.0)) throw ConfigError("l2", "must be >= 0");
  const Design d = canonical_design(rows);
  const Eigen::Index dim = d.features.cols();
  const double positives = d.labels.sum();
  const double n = static_cast<double>(d.labels.size());

  if (positives == 0.0 || positives == n) {
    if (!options.allow_constant)
      throw DataError("logistic fit: all " + std::to_string(rows.size()) +
                      " labels belong to one class");
    LRParams constant{Vector::Zero(dim + 1), options.l2};
    constant.w(dim) = logit(clamp_probability(positives / n));
    return constant;
  }

  Vector w = Vector::Zero(dim + 1);
  if (options.initial_w) {
    if (options.initial_w->size() != dim + 1) throw ShapeError("logistic fit: initial_w width");
    w = *options.initial_w;
  }

  for (int it = 0; it < options.max_iterations; ++it) {
    const auto [loss, gradient] = logistic_loss_and_gradient(w, d.features, d.labels, options.l2);
    if (gradient.norm() <= options.gradient_tolerance) break;
    Vector direction;
    double step = 1.0;
    if (options.solver == LrSolver::Newton) {
      Matrix h = logistic_hessian(w, d, options.l2);
      h.diagonal().array() += 1e-12;
      direction = -h.ldlt().solve(gradient);
      if (!direction.allFinite() || gradient.dot(direction) >= 0.0) direction = -gradient;
    } else {
      direction = -gradient;
      // 1 / L for L = trace bound on the Hessian's largest eigenvalue.
      const double mean_sq = d.features.rowwise().squaredNorm().mean();
      step = 1.0 / (0.25 * (mean_sq + 1.0) + options.l2);
    }
    const Vector next = line_search(w, direction, loss, gradient, d, options.l2, step);
    if (next == w) break;
    w = next;
  }
  return {w, options.l2};
}

LRParams fit_post_ranking_lr(std::span<const LogRecord> hard, const LrFitOptions& options) {
  const auto rows = post_ranking_examples(hard);
  return fit_logistic_regression(rows, options);
}

std::vector<SoftLabel> impute_soft_labels(std::span<const UnlabeledRecord> unlabeled,
                                          const LRParams& params) {
  std::vector<SoftLabel> out;
  out.reserve(unlabeled.size());
  const Eigen::Index dim = params.w.size() - 1;
  for (const auto& r : unlabeled) {
    if (!r.x_prime)
      throw DataError("record " + std::to_string(r.record_id) + " has no post-ranking signals");
    if (r.x_prime->size() != dim)
      throw ShapeError("record " + std::to_string(r.record_id) + ": x' width " +
                       std::to_string(r.x_prime->size()) + " != " + std::to_string(dim));
    const double margin = r.x_prime->dot(params.w.head(dim)) + params.w(dim);
    out.push_back({r.record_id, clamp_probability(sigmoid(margin)), false});
  }
  return out;
}

double solve_logit_shift(std::span<const double> z_hat, double target) {
  std::vector<double> logits;
  logits.reserve(z_hat.size());
  for (double z : z_hat) logits.push_back(logit(clamp_probability(z)));
  auto shifted_sum = [&](double delta) {
    double s = 0.0;
    for (double l : logits) s += sigmoid(l + delta);
    return s;
  };
  if (std::abs(shifted_sum(0.0) - target) <= kSumTolerance) return 0.0;
  double lo = -kMaxLogitShift;
  double hi = kMaxLogitShift;
  if (target <= shifted_sum(lo)) return lo;
  if (target >= shifted_sum(hi)) return hi;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double s = shifted_sum(mid);
    if (std::abs(s - target) <= kSumTolerance) return mid;
    (s < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

CalibrationOutcome calibrate_soft_labels(
    std::span<const SoftLabel> soft, const std::unordered_map<std::uint64_t, GroupKey>& membership,
    std::span<const GroupLabel> groups) {
  std::map<GroupKey, const GroupLabel*> by_key;
  for (const auto& g : groups) by_key.emplace(g.key(), &g);

  std::map<GroupKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    auto it = membership.find(soft[i].record_id);
    if (it == membership.end() || !by_key.contains(it->second))
      throw DataError("soft label for record " + std::to_string(soft[i].record_id) +
                      " belongs to no group");
    members[it->second].push_back(i);
  }

  CalibrationOutcome out;
  out.labels.assign(soft.begin(), soft.end());
  for (const auto& [key, idx] : members) {
    const GroupLabel& g = *by_key.at(key);
    if (g.suppressed) continue;
    const auto size = static_cast<std::uint64_t>(idx.size());
    if (size > g.click_count)
      throw DataError("group (app " + std::to_string(key.target_app) + ", token " +
                      std::to_string(key.token) + ") has more soft labels than clicks");
    if (g.conversions > size)
      throw DataError("group (app " + std::to_string(key.target_app) + ", token " +
                      std::to_string(key.token) + ", window " + std::to_string(key.window) +
                      ") reports " + std::to_string(g.conversions) + " conversions for " +
                      std::to_string(size) + " labels");
    double delta;
    if (g.conversions == 0 || g.conversions == size) {
      delta = g.conversions == 0 ? -kMaxLogitShift : kMaxLogitShift;
      ++out.groups_saturated;
      out.warnings.push_back("group (app " + std::to_string(key.target_app) + ", token " +
                             std::to_string(key.token) + ", window " + std::to_string(key.window) +
                             ") saturates: shift capped at " + std::to_string(delta));
    } else {
      std::vector<double> z(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) z[j] = soft[idx[j]].z_hat;
      delta = solve_logit_shift(z, static_cast<double>(g.conversions));
    }
    for (std::size_t i : idx) {
      SoftLabel& l = out.labels[i];
      if (delta != 0.0) l.z_hat = sigmoid(logit(clamp_probability(l.z_hat)) + delta);
      l.calibrated = true;
    }
    ++out.groups_calibrated;
  }
  return out;
}

std::string_view calibration_level_name(CalibrationLevel level) {
  switch (level) {
    case CalibrationLevel::Group: return "Group";
    case CalibrationLevel::AppToken: return "AppToken";
    case CalibrationLevel::Global: return "Global";
  }
  return "?";
}

CalibrationLevel parse_calibration_level(std::string_view s) {
  for (auto l : {CalibrationLevel::Group, CalibrationLevel::AppToken, CalibrationLevel::Global})
    if (calibration_level_name(l) == s) return l;
  throw ConfigError("calibration_level", "unknown level '" + std::string(s) + "'");
}

CoarsenedGroups coarsen_groups(std::span<const GroupLabel> groups,
                               const std::unordered_map<std::uint64_t, GroupKey>& membership,
                               CalibrationLevel level) {
  CoarsenedGroups out;
  if (level == CalibrationLevel::Group) {
    out.groups.assign(groups.begin(), groups.end());
    out.membership = membership;
    return out;
  }
  auto pooled_key = [&](const GroupKey& k) {
    return level == CalibrationLevel::AppToken
               ? GroupKey{k.target_app, k.token, -1}
               : GroupKey{std::numeric_limits<std::uint64_t>::max(), 0, -1};
  };
  std::map<GroupKey, bool> suppressed;
  std::map<GroupKey, GroupLabel> pooled;
  for (const auto& g : groups) {
    suppressed[g.key()] = g.suppressed;
    if (g.suppressed) {
      out.groups.push_back(g);
      continue;
    }
    const GroupKey pk = pooled_key(g.key());
    auto [it, inserted] = pooled.try_emplace(pk);
    GroupLabel& p = it->second;
    if (inserted) {
      p = g;
      p.target_app = pk.target_app;
      p.token = level == CalibrationLevel::AppToken ? g.token : GroupToken(0, g.token.bits());
      p.window = -1;
      continue;
    }
    p.window_start = std::min(p.window_start, g.window_start);
    p.window_end = std::max(p.window_end, g.window_end);
    p.click_count += g.click_count;
    p.conversions += g.conversions;
  }
  for (auto& [k, g] : pooled) out.groups.push_back(g);
  out.membership.reserve(membership.size());
  for (const auto& [id, key] : membership) {
    auto s = suppressed.find(key);
    const bool keep_original = s == suppressed.end() || s->second;
    out.membership.emplace(id, keep_original ? key : pooled_key(key));
  }
  return out;
}

}  // namespace ppct
