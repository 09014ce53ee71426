#include "ppct/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "ppct/metrics.hpp"

namespace ppct {
namespace {

constexpr std::uint64_t kTestStream = 0x54455354;   // "TEST"
constexpr std::uint64_t kTrainStream = 0x5452414e;  // "TRAN"
constexpr std::uint64_t kArchStream = 0x41524348;   // "ARCH"

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(e.field(), std::string("stage '") + name + "': " + e.what());
  } catch (const Error& e) {
    throw DataError(std::string("stage '") + name + "': " + e.what());
  }
}

std::vector<std::uint64_t> ids_of(std::span<const RankingExample> examples) {
  std::vector<std::uint64_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.record_id);
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  protocol.validate();
  train.validate();
  arch.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction", "must lie in (0, 1)");
  if (ece_bins < 1) throw ConfigError("ece_bins", "must be >= 1");
}

bool is_test_user(std::uint64_t user_id, std::uint64_t seed, double test_fraction) {
  return hash_to_unit(derive_seed(derive_seed(seed, kTestStream), user_id)) < test_fraction;
}

std::vector<RankingExample> test_examples(std::span<const LogRecord> records, std::uint64_t seed,
                                          double test_fraction) {
  std::vector<RankingExample> test;
  for (const auto& r : records)
    if (r.clicked && is_test_user(r.user_id, seed, test_fraction))
      test.push_back({r.record_id, r.x, r.converted ? 1.0 : 0.0});
  return test;
}

Evaluation evaluate_model(const ModelParams& params, std::span<const RankingExample> test,
                          int ece_bins) {
  const std::vector<double> scores = predict(params, test);
  std::vector<int> labels(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) labels[i] = test[i].label >= 0.5 ? 1 : 0;
  return {pr_auc(scores, labels), calibration_error(scores, labels, ece_bins)};
}

SeedResult run_setting(const ExperimentSetting& setting, std::span<const LogRecord> records,
                       const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  if (setting.uses_optin_rate() && !(setting.optin_rate >= 0.0 && setting.optin_rate <= 1.0))
    throw ConfigError("optin_rate", "must lie in [0, 1]");

  SeedResult result;
  result.setting = setting;
  result.seed = seed;
  RunDiagnostics& diag = result.diagnostics;

  std::vector<LogRecord> pool;
  for (const auto& r : records)
    if (!is_test_user(r.user_id, seed, config.test_fraction)) pool.push_back(r);
  const std::vector<RankingExample> test = test_examples(records, seed, config.test_fraction);
  diag.test_ids = ids_of(test);

  const double rate = setting.uses_optin_rate() ? setting.optin_rate : 0.0;
  pool = assign_optin(std::move(pool), rate, seed);
  const LabeledPartition partition = partition_labels(pool, setting.kind);
  const std::vector<RankingExample> hard = hard_examples(partition.hard);
  std::vector<RankingExample> soft;

  if (setting.kind == SettingKind::PostRankingSignals && !partition.unlabeled.empty()) {
    diag.imputer_invoked = true;
    const LRParams lr = stage("imputer", [&] { return fit_post_ranking_lr(partition.hard, config.imputer); });
    for (const auto& r : partition.hard) diag.imputer_fit_ids.push_back(r.record_id);
    std::vector<SoftLabel> labels =
        stage("impute", [&] { return impute_soft_labels(partition.unlabeled, lr); });

    if (config.calibrate) {
      // The reporting channel carries the conversions of the label-withheld clicks.
      std::unordered_set<std::uint64_t> withheld;
      for (const auto& u : partition.unlabeled) withheld.insert(u.record_id);
      std::vector<LogRecord> channel;
      for (const auto& r : pool)
        if (r.clicked && withheld.contains(r.record_id)) channel.push_back(r);

      const ProtocolRun run = stage("protocol", [&] { return run_protocol(channel, config.protocol, seed); });
      const auto membership = group_membership(run.clicks, config.protocol.window_h);
      CoarsenedGroups coarse = coarsen_groups(run.groups, membership, config.calibration_level);

      // A late report can push a group's count past its size; such groups are
      // left uncalibrated like suppressed ones.
      std::map<GroupKey, std::uint64_t> members;
      for (const auto& [id, key] : coarse.membership) ++members[key];
      for (auto& g : coarse.groups) {
        if (!g.suppressed && g.conversions > members[g.key()]) {
          g.suppressed = true;
          ++diag.n_groups_skipped;
        }
      }
      diag.n_groups = coarse.groups.size();
      CalibrationOutcome outcome = stage("calibrate", [&] {
        return calibrate_soft_labels(labels, coarse.membership, coarse.groups);
      });
      diag.n_groups_calibrated = outcome.groups_calibrated;
      labels = std::move(outcome.labels);
    }
    soft = soft_examples(partition.unlabeled, labels);
  }
  diag.n_hard = hard.size();
  diag.n_soft = soft.size();
  diag.soft_ids = ids_of(soft);

  TrainConfig train_cfg = config.train;
  train_cfg.seed = derive_seed(seed, kTrainStream);
  if (setting.kind == SettingKind::AndroidPlusIosLe13 && setting.fixed_epochs_override)
    train_cfg.stopping = FixedEpochs{*setting.fixed_epochs_override};
  MLPArch arch = config.arch;
  arch.seed = derive_seed(seed, kArchStream);

  TrainResult trained = stage("train", [&] {
    return config.use_mtl && !soft.empty() ? train_mtl(hard, soft, arch, train_cfg)
                                           : train(hard, soft, arch, train_cfg);
  });
  diag.validation_ids = trained.trace.validation_ids;
  diag.trace = std::move(trained.trace);
  const std::unordered_set<std::uint64_t> validation(diag.validation_ids.begin(),
                                                     diag.validation_ids.end());
  for (const auto& e : hard)
    if (!validation.contains(e.record_id)) diag.train_ids.push_back(e.record_id);

  const Evaluation eval = stage("evaluate", [&] { return evaluate_model(trained.params, test, config.ece_bins); });
  result.pr_auc = eval.pr_auc;
  result.calibration_error = eval.calibration_error;
  result.model = std::move(trained.params);
  return result;
}

void SweepConfig::validate() const {
  gen.validate();
  pipeline.validate();
  if (n_seeds < 2) throw ConfigError("n_seeds", "must be >= 2 (standard errors need two seeds)");
  if (settings.empty()) throw ConfigError("settings", "no experiment settings");
  if (std::none_of(settings.begin(), settings.end(),
                   [](const auto& s) { return s.kind == SettingKind::NonPPCT; }))
    throw ConfigError("settings", "missing NonPPCT baseline (relative PR-AUC is undefined)");
  if (rates.empty()) throw ConfigError("rates", "no opt-in rates");
  for (double r : rates)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rates", "rates must lie in [0, 1]");
  if (!std::is_sorted(rates.begin(), rates.end()))
    throw ConfigError("rates", "rates must be sorted ascending");
  if (pipeline.arch.layer_widths.front() != gen.dim_x)
    throw ConfigError("layer_widths", "first width must equal gen.dim_x");
}

SweepResult optin_sweep(const SweepConfig& config,
                        const std::function<void(const SeedResult&)>& on_cell) {
  config.validate();
  SweepResult out;
  auto emit = [&](SeedResult cell) {
    if (on_cell) on_cell(cell);
    out.cells.push_back(std::move(cell));
  };
  for (int s = 0; s < config.n_seeds; ++s) {
    GenConfig gen = config.gen;
    gen.seed = config.gen.seed + static_cast<std::uint64_t>(s);
    const std::vector<LogRecord> records = stage("generate", [&] { return generate_logs(gen); });
    for (const auto& base : config.settings) {
      if (base.uses_optin_rate()) {
        for (double rate : config.rates) {
          ExperimentSetting setting = base;
          setting.optin_rate = rate;
          emit(run_setting(setting, records, config.pipeline, gen.seed));
        }
      } else {
        const SeedResult once = run_setting(base, records, config.pipeline, gen.seed);
        for (double rate : config.rates) {
          SeedResult cell = once;
          cell.setting.optin_rate = rate;
          emit(std::move(cell));
        }
      }
    }
  }
  out.reports = aggregate_reports(out.cells);
  return out;
}

std::vector<MetricsReport> aggregate_reports(std::span<const SeedResult> cells) {
  struct Acc {
    ExperimentSetting setting;
    std::vector<double> pr_auc;
    std::vector<double> ece;
  };
  std::map<std::pair<int, double>, Acc> groups;
  for (const auto& c : cells) {
    auto& acc = groups[{static_cast<int>(c.setting.kind), c.setting.optin_rate}];
    acc.setting = c.setting;
    acc.pr_auc.push_back(c.pr_auc);
    acc.ece.push_back(c.calibration_error);
  }
  std::map<double, double> baseline_by_rate;
  std::vector<double> baseline_all;
  for (const auto& [key, acc] : groups) {
    if (acc.setting.kind != SettingKind::NonPPCT) continue;
    baseline_by_rate[key.second] = mean_and_se(acc.pr_auc).mean;
    baseline_all.insert(baseline_all.end(), acc.pr_auc.begin(), acc.pr_auc.end());
  }
  if (baseline_all.empty())
    throw ConfigError("settings", "missing NonPPCT baseline (relative PR-AUC is undefined)");
  const double overall = mean_and_se(baseline_all).mean;

  std::vector<MetricsReport> out;
  for (const auto& [key, acc] : groups) {
    const MeanSe m = mean_and_se(acc.pr_auc);
    auto b = baseline_by_rate.find(key.second);
    const double baseline = b != baseline_by_rate.end() ? b->second : overall;
    out.push_back({acc.setting, m.mean, m.se, m.mean / baseline, mean_and_se(acc.ece).mean,
                   static_cast<int>(acc.pr_auc.size())});
  }
  return out;
}

}  // namespace ppct
