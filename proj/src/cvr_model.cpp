#include "ppct/cvr_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>

#include "ppct/metrics.hpp"

namespace ppct {
namespace {

constexpr std::uint64_t kValidationStream = 0x56414c49;  // "VALI"
constexpr std::uint64_t kShuffleStream = 0x53485546;     // "SHUF"

struct Split {
  std::vector<const RankingExample*> train;
  std::vector<const RankingExample*> validation;
};

Split stratified_split(std::span<const RankingExample> hard, double fraction, std::uint64_t seed) {
  std::vector<const RankingExample*> pos;
  std::vector<const RankingExample*> neg;
  for (const auto& e : hard) (e.label >= 0.5 ? pos : neg).push_back(&e);
  if (pos.size() < 2 || neg.size() < 2)
    throw DataError("early stopping needs >= 2 hard examples of each class (have " +
                    std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) +
                    " negative)");
  Rng rng(derive_seed(seed, kValidationStream));
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  auto take = [&](std::size_t n) {
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n - 1);
  };
  const std::size_t kp = take(pos.size());
  const std::size_t kn = take(neg.size());
  Split s;
  s.validation.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(kp));
  s.validation.insert(s.validation.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(kn));
  s.train.assign(pos.begin() + static_cast<std::ptrdiff_t>(kp), pos.end());
  s.train.insert(s.train.end(), neg.begin() + static_cast<std::ptrdiff_t>(kn), neg.end());
  // Restore input order so the training stream does not depend on the split shuffle.
  auto by_position = [&](const RankingExample* a, const RankingExample* b) { return a < b; };
  std::sort(s.train.begin(), s.train.end(), by_position);
  std::sort(s.validation.begin(), s.validation.end(), by_position);
  return s;
}

Matrix columns_of(std::span<const RankingExample* const> examples, Eigen::Index dim) {
  Matrix m(dim, static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i]->x.size() != dim)
      throw ShapeError("record " + std::to_string(examples[i]->record_id) + ": x has width " +
                       std::to_string(examples[i]->x.size()) + ", expected " + std::to_string(dim));
    m.col(static_cast<Eigen::Index>(i)) = examples[i]->x;
  }
  return m;
}

double validation_pr_auc(const ModelParams& params, const Matrix& inputs,
                         const std::vector<int>& labels) {
  const Vector logits = forward_logits(params, inputs, 0);
  std::vector<double> scores(logits.data(), logits.data() + logits.size());
  return pr_auc(scores, labels);
}

TrainResult train_impl(std::span<const RankingExample> hard, std::span<const RankingExample> soft,
                       const MLPArch& arch, const TrainConfig& config, bool mtl) {
  config.validate();
  if (hard.empty() && soft.empty()) throw ConfigError("data", "no training examples");
  const bool early = std::holds_alternative<EarlyStopping>(config.stopping);
  if (early && hard.empty())
    throw ConfigError("stopping",
                      "EarlyStopping needs hard-labeled examples for validation; use FixedEpochs");
  if (mtl && soft.empty())
    throw ConfigError("soft", "multitask training needs soft-labeled examples; use train");
  if (mtl && hard.empty())
    throw ConfigError("hard", "multitask training needs hard-labeled examples");

  const int dim = static_cast<int>(hard.empty() ? soft.front().x.size() : hard.front().x.size());
  arch.validate(dim);

  Split split;
  if (early) {
    split = stratified_split(hard, config.validation_fraction, config.seed);
  } else {
    for (const auto& e : hard) split.train.push_back(&e);
  }

  std::vector<const RankingExample*> pool = split.train;
  std::vector<int> head_of(pool.size(), 0);
  std::vector<double> weight_of(pool.size(), 1.0);
  for (const auto& e : soft) {
    pool.push_back(&e);
    head_of.push_back(mtl ? 1 : 0);
    weight_of.push_back(config.soft_weight);
  }
  if (pool.empty()) throw ConfigError("data", "no training examples after the validation split");

  const Matrix inputs = columns_of(pool, dim);
  Vector labels(static_cast<Eigen::Index>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double y = pool[i]->label;
    if (!(y >= 0.0 && y <= 1.0))
      throw DataError("record " + std::to_string(pool[i]->record_id) + ": label outside [0, 1]");
    labels(static_cast<Eigen::Index>(i)) = y;
  }

  Matrix val_inputs;
  std::vector<int> val_labels;
  TrainResult result;
  if (early) {
    val_inputs = columns_of(split.validation, dim);
    for (const auto* e : split.validation) {
      val_labels.push_back(e->label >= 0.5 ? 1 : 0);
      result.trace.validation_ids.push_back(e->record_id);
    }
  }

  ModelParams params = init_mlp<double>(arch, mtl ? 2 : 1);
  ModelParams velocity = params.zeros_like();
  ModelParams best = params;
  double best_val = -std::numeric_limits<double>::infinity();

  Rng rng(derive_seed(config.seed, kShuffleStream));
  std::vector<Eigen::Index> order(pool.size());
  std::iota(order.begin(), order.end(), 0);

  const int epochs = early ? config.max_epochs : std::get<FixedEpochs>(config.stopping).epochs;
  const int patience = early ? std::get<EarlyStopping>(config.stopping).patience : 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> heads(idx.size());
      Vector w(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) {
        heads[j] = head_of[static_cast<std::size_t>(idx[j])];
        w(static_cast<Eigen::Index>(j)) = weight_of[static_cast<std::size_t>(idx[j])];
      }
      const Matrix xb = inputs(Eigen::all, idx);
      const Vector yb = labels(idx);
      auto [loss, grad] = mlp_loss_and_gradient(params, xb, yb, w, heads);
      if (!std::isfinite(loss)) throw DivergenceError(epoch, "non-finite training loss");
      loss_sum += loss * static_cast<double>(idx.size());
      if (config.momentum > 0.0) {
        velocity.add_scaled(config.momentum - 1.0, velocity);  // velocity *= momentum
        velocity.add_scaled(-config.learning_rate, grad);
        params.add_scaled(1.0, velocity);
      } else {
        params.add_scaled(-config.learning_rate, grad);
      }
    }
    if (!params.all_finite()) throw DivergenceError(epoch, "non-finite parameters");

    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()),
                     std::numeric_limits<double>::quiet_NaN()};
    if (early) {
      stats.val_pr_auc = validation_pr_auc(params, val_inputs, val_labels);
      if (stats.val_pr_auc > best_val) {
        best_val = stats.val_pr_auc;
        best = params;
        result.trace.best_epoch = epoch;
      }
    }
    result.trace.epochs.push_back(stats);
    if (early && epoch - result.trace.best_epoch >= patience) break;
  }

  if (early) {
    result.params = std::move(best);
  } else {
    result.params = std::move(params);
    result.trace.best_epoch = epochs;
  }
  return result;
}

void write_double(std::ostream& os, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, end - buf);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate", "must be finite and > 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs", "must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction", "must lie in (0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(soft_weight >= 0.0) || !std::isfinite(soft_weight))
    throw ConfigError("soft_weight", "must be finite and >= 0");
  if (const auto* e = std::get_if<EarlyStopping>(&stopping); e && e->patience < 1)
    throw ConfigError("patience", "must be >= 1");
  if (const auto* f = std::get_if<FixedEpochs>(&stopping); f && f->epochs < 1)
    throw ConfigError("fixed_epochs", "must be >= 1");
}

std::vector<RankingExample> hard_examples(std::span<const LogRecord> hard) {
  std::vector<RankingExample> out;
  out.reserve(hard.size());
  for (const auto& r : hard) out.push_back({r.record_id, r.x, r.converted ? 1.0 : 0.0});
  return out;
}

std::vector<RankingExample> soft_examples(std::span<const UnlabeledRecord> unlabeled,
                                          std::span<const SoftLabel> labels) {
  std::unordered_map<std::uint64_t, double> by_id;
  by_id.reserve(labels.size());
  for (const auto& l : labels) by_id.emplace(l.record_id, l.z_hat);
  std::vector<RankingExample> out;
  out.reserve(unlabeled.size());
  for (const auto& r : unlabeled) {
    auto it = by_id.find(r.record_id);
    if (it == by_id.end())
      throw DataError("record " + std::to_string(r.record_id) + " has no soft label");
    out.push_back({r.record_id, r.x, clamp_probability(it->second)});
  }
  return out;
}

double forward(const ModelParams& params, const Vector& x) {
  return sigmoid(forward_logits(params, x, 0)(0));
}

std::vector<double> predict(const ModelParams& params, std::span<const RankingExample> examples) {
  if (examples.empty()) return {};
  std::vector<const RankingExample*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& e : examples) ptrs.push_back(&e);
  const Vector logits = forward_logits(params, columns_of(ptrs, params.input_dim()), 0);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = sigmoid(logits(i));
  return out;
}

double soft_xent_loss(double p, double label) {
  if (!(label >= 0.0 && label <= 1.0)) throw DataError("soft_xent_loss: label outside [0, 1]");
  const double q = clamp_probability(p);
  return -label * std::log(q) - (1.0 - label) * std::log1p(-q);
}

TrainResult train(std::span<const RankingExample> hard, std::span<const RankingExample> soft,
                  const MLPArch& arch, const TrainConfig& config) {
  return train_impl(hard, soft, arch, config, false);
}

TrainResult train_mtl(std::span<const RankingExample> hard, std::span<const RankingExample> soft,
                      const MLPArch& arch, const TrainConfig& config) {
  return train_impl(hard, soft, arch, config, true);
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os << "ppct-mlp 1\n";
  os << "activation " << activation_name(params.arch.activation) << '\n';
  os << "seed " << params.arch.seed << '\n';
  os << "widths";
  for (int w : params.arch.layer_widths) os << ' ' << w;
  os << "\nheads " << params.heads.size() << '\n';
  const Vector flat = params.flatten();
  os << "parameters " << flat.size() << '\n';
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    write_double(os, flat(i));
    os << '\n';
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(is >> got) || got != want)
      throw DataError("checkpoint " + path.string() + ": expected '" + want + "', got '" + got + "'");
  };
  int version = 0;
  expect("ppct-mlp");
  is >> version;
  if (version != 1) throw DataError("checkpoint " + path.string() + ": unsupported version");
  MLPArch arch;
  std::string token;
  expect("activation");
  is >> token;
  arch.activation = parse_activation(token);
  expect("seed");
  is >> arch.seed;
  expect("widths");
  std::string line;
  std::getline(is, line);
  std::istringstream widths(line);
  for (int w; widths >> w;) arch.layer_widths.push_back(w);
  int n_heads = 0;
  Eigen::Index n_params = 0;
  expect("heads");
  is >> n_heads;
  expect("parameters");
  is >> n_params;
  if (!is || n_heads < 1) throw DataError("checkpoint " + path.string() + ": malformed header");
  ModelParams params = init_mlp<double>(arch, n_heads);
  if (params.num_parameters() != n_params)
    throw DataError("checkpoint " + path.string() + ": parameter count does not match arch");
  Vector flat(n_params);
  for (Eigen::Index i = 0; i < n_params; ++i) {
    if (!(is >> token)) throw DataError("checkpoint " + path.string() + ": truncated");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size())
      throw DataError("checkpoint " + path.string() + ": bad number '" + token + "'");
    flat(i) = v;
  }
  params.assign_flat(flat);
  return params;
}

std::string_view activation_name(Activation a) {
  return a == Activation::ReLU ? "ReLU" : "Tanh";
}

Activation parse_activation(std::string_view s) {
  if (s == "ReLU") return Activation::ReLU;
  if (s == "Tanh") return Activation::Tanh;
  throw ConfigError("activation", "unknown activation '" + std::string(s) + "'");
}

void MLPArch::validate(int input_dim) const {
  if (layer_widths.size() < 3)
    throw ConfigError("layer_widths", "need input, >= 1 hidden layer and an output width");
  for (int w : layer_widths)
    if (w < 1) throw ConfigError("layer_widths", "widths must be >= 1");
  if (layer_widths.back() != 1) throw ConfigError("layer_widths", "last width must be 1");
  if (input_dim >= 0 && layer_widths.front() != input_dim)
    throw ConfigError("layer_widths", "first width " + std::to_string(layer_widths.front()) +
                                          " does not match input width " + std::to_string(input_dim));
}

}  // namespace ppct
