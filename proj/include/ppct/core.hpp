#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ppct {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// Probabilities entering a log-loss are kept inside [kProbEpsilon, 1 - kProbEpsilon].
inline constexpr double kProbEpsilon = 1e-6;

// ---------------------------------------------------------------------------
// Errors. Every failure surfaced by the library derives from ppct::Error.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration; carries the offending field name.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Data that violates a precondition (degenerate labels, missing signals, infeasible targets).
class DataError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// ---------------------------------------------------------------------------
// Scalar helpers.

template <std::floating_point Scalar>
inline Scalar sigmoid(Scalar t) {
  using std::exp;
  if (t >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-t));
  const Scalar e = exp(t);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(t)) without overflow.
template <std::floating_point Scalar>
inline Scalar softplus(Scalar t) {
  using std::exp;
  using std::log1p;
  return t > Scalar(0) ? t + log1p(exp(-t)) : log1p(exp(t));
}

template <std::floating_point Scalar>
inline Scalar logit(Scalar p) {
  using std::log;
  return log(p) - log(Scalar(1) - p);
}

template <std::floating_point Scalar>
inline Scalar clamp_probability(Scalar p) {
  return std::clamp(p, Scalar(kProbEpsilon), Scalar(1.0 - kProbEpsilon));
}

/// Coefficient-wise logistic function, usable inside Eigen expressions.
template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& t) {
  using Scalar = typename Derived::Scalar;
  return t.unaryExpr([](Scalar v) { return sigmoid(v); });
}

template <typename Derived>
auto softplus(const Eigen::ArrayBase<Derived>& t) {
  using Scalar = typename Derived::Scalar;
  return t.unaryExpr([](Scalar v) { return softplus(v); });
}

// ---------------------------------------------------------------------------
// Seed derivation. Independent streams (per user, per stage) are keyed off a
// base seed so that any shard can be regenerated on its own.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) from a 64-bit hash.
inline double hash_to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace ppct
