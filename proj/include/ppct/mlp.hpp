#pragma once

#include <span>
#include <string>
#include <vector>

#include "ppct/core.hpp"

namespace ppct {

enum class Activation { ReLU, Tanh };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);

/// layer_widths runs from the input width to the single output unit,
/// e.g. {dim_x, 64, 32, 1}.
struct MLPArch {
  std::vector<int> layer_widths;
  Activation activation = Activation::ReLU;
  std::uint64_t seed = 0;

  static MLPArch standard(int dim_x) { return {{dim_x, 64, 32, 1}, Activation::ReLU, 0}; }

  /// Needs >= 1 hidden layer, positive widths, last width 1; when
  /// `input_dim` >= 0 the first width must equal it.
  void validate(int input_dim = -1) const;
};

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;
};

/// Shared trunk of hidden layers plus one or more scalar heads. Head 0 is
/// the hard-label head used for inference.
template <typename Scalar>
struct MlpParams {
  MLPArch arch;
  std::vector<DenseLayer<Scalar>> trunk;
  std::vector<DenseLayer<Scalar>> heads;

  Eigen::Index input_dim() const { return trunk.front().weight.cols(); }

  Eigen::Index num_parameters() const {
    Eigen::Index n = 0;
    for (const auto& l : trunk) n += l.weight.size() + l.bias.size();
    for (const auto& l : heads) n += l.weight.size() + l.bias.size();
    return n;
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (auto& l : trunk) fn(l.weight), fn(l.bias);
    for (auto& l : heads) fn(l.weight), fn(l.bias);
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    for (const auto& l : trunk) fn(l.weight), fn(l.bias);
    for (const auto& l : heads) fn(l.weight), fn(l.bias);
  }

  VectorX<Scalar> flatten() const {
    VectorX<Scalar> out(num_parameters());
    Eigen::Index at = 0;
    for_each_block([&](const auto& block) {
      out.segment(at, block.size()) = block.reshaped();
      at += block.size();
    });
    return out;
  }

  void assign_flat(const VectorX<Scalar>& flat) {
    if (flat.size() != num_parameters()) throw ShapeError("MlpParams: flat vector width");
    Eigen::Index at = 0;
    for_each_block([&](auto& block) {
      block.reshaped() = flat.segment(at, block.size());
      at += block.size();
    });
  }

  MlpParams zeros_like() const {
    MlpParams z = *this;
    z.for_each_block([](auto& block) { block.setZero(); });
    return z;
  }

  /// this += alpha * other (same shapes).
  void add_scaled(Scalar alpha, const MlpParams& other) {
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      trunk[i].weight += alpha * other.trunk[i].weight;
      trunk[i].bias += alpha * other.trunk[i].bias;
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
      heads[i].weight += alpha * other.heads[i].weight;
      heads[i].bias += alpha * other.heads[i].bias;
    }
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const auto& block) { ok = ok && block.allFinite(); });
    return ok;
  }
};

/// Weights uniform in +-1/sqrt(fan_in) drawn from arch.seed; biases zero.
template <typename Scalar>
MlpParams<Scalar> init_mlp(const MLPArch& arch, int n_heads = 1) {
  arch.validate();
  Rng rng(derive_seed(arch.seed, 0x494e4954));  // "INIT"
  auto make = [&](int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer<Scalar> l{MatrixX<Scalar>(out, in), VectorX<Scalar>::Zero(out)};
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = Scalar(u(rng));
    return l;
  };
  MlpParams<Scalar> p;
  p.arch = arch;
  const auto& w = arch.layer_widths;
  for (std::size_t i = 0; i + 2 < w.size(); ++i) p.trunk.push_back(make(w[i], w[i + 1]));
  for (int h = 0; h < n_heads; ++h) p.heads.push_back(make(w[w.size() - 2], 1));
  return p;
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> activate(const MatrixX<Scalar>& z, Activation a) {
  if (a == Activation::ReLU) return z.cwiseMax(Scalar(0));
  return z.array().tanh().matrix();
}

// d act / dz expressed through the pre-activation z.
template <typename Scalar>
MatrixX<Scalar> activation_slope(const MatrixX<Scalar>& z, Activation a) {
  if (a == Activation::ReLU) return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
  return (Scalar(1) - z.array().tanh().square()).matrix();
}

}  // namespace detail

/// Output of the trunk (last hidden activations) for inputs laid out one
/// example per column.
template <typename Scalar, typename Derived>
MatrixX<Scalar> trunk_forward(const MlpParams<Scalar>& params,
                              const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.rows() != params.input_dim())
    throw ShapeError("mlp: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                     std::to_string(params.input_dim()));
  MatrixX<Scalar> a = inputs;
  for (const auto& l : params.trunk) {
    MatrixX<Scalar> z = (l.weight * a).colwise() + l.bias;
    a = detail::activate(z, params.arch.activation);
  }
  return a;
}

/// Logits of `head` for every input column.
template <typename Scalar, typename Derived>
VectorX<Scalar> forward_logits(const MlpParams<Scalar>& params,
                               const Eigen::MatrixBase<Derived>& inputs, int head = 0) {
  const auto& h = params.heads.at(static_cast<std::size_t>(head));
  const MatrixX<Scalar> a = trunk_forward(params, inputs);
  return ((h.weight * a).array() + h.bias(0)).matrix().transpose();
}

template <typename Scalar>
struct MlpLossAndGradient {
  Scalar loss;
  MlpParams<Scalar> gradient;
};

/// Weighted soft cross-entropy and its gradient by backpropagation.
///
/// Column i of `inputs` is routed to head `heads[i]` with target labels[i]
/// and weight sample_weights[i]. The loss is the sum over heads of each
/// head's weighted mean over the examples routed to it, so with one head
/// it is the ordinary weighted mean.
template <typename Scalar, typename Derived>
MlpLossAndGradient<Scalar> mlp_loss_and_gradient(const MlpParams<Scalar>& params,
                                                 const Eigen::MatrixBase<Derived>& inputs,
                                                 const VectorX<Scalar>& labels,
                                                 const VectorX<Scalar>& sample_weights,
                                                 std::span<const int> heads) {
  const Eigen::Index n = inputs.cols();
  if (labels.size() != n || sample_weights.size() != n || static_cast<Eigen::Index>(heads.size()) != n)
    throw ShapeError("mlp_loss_and_gradient: batch arrays differ in length");
  const Activation act = params.arch.activation;

  std::vector<MatrixX<Scalar>> pre;   // z_l
  std::vector<MatrixX<Scalar>> post;  // a_l, post[0] = inputs
  post.emplace_back(inputs);
  if (post[0].rows() != params.input_dim()) throw ShapeError("mlp: input width mismatch");
  for (const auto& l : params.trunk) {
    pre.push_back((l.weight * post.back()).colwise() + l.bias);
    post.push_back(detail::activate(pre.back(), act));
  }
  const MatrixX<Scalar>& top = post.back();

  std::vector<Scalar> head_count(params.heads.size(), Scalar(0));
  for (int h : heads) {
    if (h < 0 || static_cast<std::size_t>(h) >= params.heads.size())
      throw ShapeError("mlp_loss_and_gradient: head index out of range");
    head_count[static_cast<std::size_t>(h)] += Scalar(1);
  }

  MlpLossAndGradient<Scalar> out{Scalar(0), params.zeros_like()};
  MatrixX<Scalar> d_top = MatrixX<Scalar>::Zero(top.rows(), n);
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    if (head_count[h] == Scalar(0)) continue;
    const auto& head = params.heads[h];
    const VectorX<Scalar> s = ((head.weight * top).array() + head.bias(0)).matrix().transpose();
    VectorX<Scalar> ds = VectorX<Scalar>::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (heads[static_cast<std::size_t>(i)] != static_cast<int>(h)) continue;
      const Scalar c = sample_weights(i) / head_count[h];
      out.loss += c * (softplus(s(i)) - labels(i) * s(i));
      ds(i) = c * (sigmoid(s(i)) - labels(i));
    }
    out.gradient.heads[h].weight = ds.transpose() * top.transpose();
    out.gradient.heads[h].bias(0) = ds.sum();
    d_top += head.weight.transpose() * ds.transpose();
  }

  MatrixX<Scalar> d_post = std::move(d_top);
  for (std::size_t l = params.trunk.size(); l-- > 0;) {
    const MatrixX<Scalar> dz = d_post.cwiseProduct(detail::activation_slope(pre[l], act));
    out.gradient.trunk[l].weight = dz * post[l].transpose();
    out.gradient.trunk[l].bias = dz.rowwise().sum();
    if (l > 0) d_post = params.trunk[l].weight.transpose() * dz;
  }
  return out;
}

}  // namespace ppct
