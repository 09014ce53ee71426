// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ppct/config.hpp"
#include "ppct/experiment.hpp"
#include "ppct/metrics.hpp"

using namespace ppct;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Guards a criterion body so that one throwing check still yields a line.
void criterion(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const MetricsReport& find_report(const SweepResult& r, SettingKind kind, double rate) {
  for (const auto& m : r.reports)
    if (m.setting.kind == kind && (!m.setting.uses_optin_rate() || m.setting.optin_rate == rate)) return m;
  throw Error("no report for " + std::string(setting_name(kind)));
}

MeanSe mean_se(const MetricsReport& m) { return {m.pr_auc, m.pr_auc_se}; }

// Held-out PR-AUC of the post-ranking imputer alone, fitted exactly as the
// PostRankingSignals pipeline fits it at opt-in rate 0.
double imputer_holdout_pr_auc(const RunConfig& cfg, std::uint64_t seed) {
  GenConfig g = cfg.sweep.gen;
  g.seed = seed;
  const auto logs = generate_logs(g);
  const double tf = cfg.sweep.pipeline.test_fraction;
  std::vector<LogRecord> pool;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : logs) {
    if (!is_test_user(r.user_id, seed, tf))
      pool.push_back(r);
  }
  pool = assign_optin(std::move(pool), 0.0, seed);
  const LRParams lr = fit_post_ranking_lr(partition_labels(pool, SettingKind::PostRankingSignals).hard,
                                          cfg.sweep.pipeline.imputer);
  const Eigen::Index d = lr.w.size() - 1;
  for (const auto& r : logs) {
    if (!r.clicked || !is_test_user(r.user_id, seed, tf)) continue;
    scores.push_back(sigmoid(r.x_prime->dot(lr.w.head(d)) + lr.w(d)));
    labels.push_back(r.converted ? 1 : 0);
  }
  return pr_auc(scores, labels);
}

void criteria_1_to_3(const RunConfig& cfg) {
  SweepConfig s = cfg.sweep;
  const auto start = std::chrono::steady_clock::now();
  SweepResult sweep;
  try {
    sweep = optin_sweep(s);
  } catch (const std::exception& e) {
    for (int id = 1; id <= 3; ++id) report(id, "sweep", false, std::string("sweep threw: ") + e.what());
    return;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  criterion(1, "degradation curve", [&] {
    const auto base = find_report(sweep, SettingKind::NonPPCT, 0.0);
    const auto prs = find_report(sweep, SettingKind::PostRankingSignals, 0.0);
    const auto android = find_report(sweep, SettingKind::AndroidOnly, 0.0);
    const double r_prs = prs.pr_auc / base.pr_auc;
    const double r_android = android.pr_auc / base.pr_auc;
    // SE of each retention, treating the baseline mean as fixed.
    const double gap_se = std::hypot(prs.pr_auc_se, android.pr_auc_se) / base.pr_auc;
    double imputer = 0.0;
    for (int k = 0; k < s.n_seeds; ++k) imputer += imputer_holdout_pr_auc(cfg, s.gen.seed + static_cast<std::uint64_t>(k));
    imputer /= s.n_seeds;
    const bool pass = s.n_seeds >= 10 && r_prs >= 0.9 && r_android <= 0.75 &&
                      (r_prs - r_android) > 4.0 * gap_se && imputer >= 0.8 && seconds < 300.0;
    report(1, "degradation curve", pass,
           fmt("PRS retains %.4f, AndroidOnly %.4f, gap/SE %.1f, imputer PR-AUC %.4f", r_prs, r_android,
               (r_prs - r_android) / gap_se, imputer) +
               fmt(", sweep %.0f s, seeds %.0f", seconds, s.n_seeds));
  });

  criterion(2, "opt-in monotonicity", [&] {
    const auto o0 = find_report(sweep, SettingKind::OptInOnly, 0.0);
    const auto o8 = find_report(sweep, SettingKind::OptInOnly, 0.8);
    const double rise = (o8.pr_auc - o0.pr_auc) / pooled_se(mean_se(o8), mean_se(o0));
    bool dominates = true;
    std::string gaps;
    for (double rate : {0.0, 0.2, 0.5, 0.8}) {
      const auto p = find_report(sweep, SettingKind::PostRankingSignals, rate);
      const auto o = find_report(sweep, SettingKind::OptInOnly, rate);
      dominates = dominates && p.pr_auc >= o.pr_auc;
      gaps += fmt(" %.4f", p.pr_auc - o.pr_auc);
    }
    const auto p0 = find_report(sweep, SettingKind::PostRankingSignals, 0.0);
    const double gap0 = (p0.pr_auc - o0.pr_auc) / pooled_se(mean_se(p0), mean_se(o0));
    report(2, "opt-in monotonicity", s.n_seeds >= 10 && rise > 2.0 && dominates && gap0 > 2.0,
           fmt("OptIn rise %.1f SE, rate-0 gap %.1f SE, PRS-OptIn at 0/.2/.5/.8:", rise, gap0) + gaps);
  });

  criterion(3, "convergence at full labels", [&] {
    const auto base = find_report(sweep, SettingKind::NonPPCT, 0.0);
    const auto p1 = find_report(sweep, SettingKind::PostRankingSignals, 1.0);
    const double se = pooled_se(mean_se(base), mean_se(p1));
    const double diff = std::abs(p1.pr_auc - base.pr_auc);
    report(3, "convergence at full labels", diff < se || (diff == 0.0 && se == 0.0),
           fmt("|diff| %.6f, pooled SE %.6f", diff, se));
  });
}

double normwise_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

void criterion_4() {
  criterion(4, "gradient fidelity", [] {
    Rng rng(4);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    std::uniform_int_distribution<int> size(1, 12);

    double lr_worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
      const int dim = size(rng) % 6 + 1;
      const int n = size(rng) + 2;
      std::vector<PostRankingExample> rows(static_cast<std::size_t>(n));
      for (auto& r : rows) {
        r.x_prime = Vector(dim);
        for (auto& v : r.x_prime) v = normal(rng);
        r.z = unif(rng) < 0.4 ? 1.0 : 0.0;
      }
      LRParams p{Vector(dim + 1), unif(rng) * 0.1};
      for (auto& v : p.w) v = normal(rng);
      const Vector analytic = lr_loss_and_gradient(p, rows).gradient;
      Vector numeric(dim + 1);
      const double h = 1e-6;
      for (int i = 0; i <= dim; ++i) {
        LRParams up = p, down = p;
        up.w(i) += h;
        down.w(i) -= h;
        numeric(i) = (lr_loss_and_gradient(up, rows).loss - lr_loss_and_gradient(down, rows).loss) / (2 * h);
      }
      lr_worst = std::max(lr_worst, normwise_error(analytic, numeric));
    }

    double mlp_worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
      const int in = size(rng) % 4 + 1;
      MLPArch arch{{in, size(rng) % 5 + 2, size(rng) % 4 + 2, 1}, Activation::Tanh,
                   static_cast<std::uint64_t>(1000 + draw)};
      const ModelParams p = init_mlp<double>(arch);
      const int n = size(rng);
      Matrix x(in, n);
      Vector y(n), w(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < in; ++j) x(j, i) = normal(rng);
        y(i) = unif(rng);
        w(i) = 0.5 + unif(rng);
      }
      const std::vector<int> heads(static_cast<std::size_t>(n), 0);
      const std::span<const int> hs(heads);
      const Vector analytic = mlp_loss_and_gradient(p, x, y, w, hs).gradient.flatten();
      const Vector flat = p.flatten();
      Vector numeric(flat.size());
      const double h = 1e-5;
      ModelParams q = p;
      for (Eigen::Index i = 0; i < flat.size(); ++i) {
        Vector f = flat;
        f(i) += h;
        q.assign_flat(f);
        const double up = mlp_loss_and_gradient(q, x, y, w, hs).loss;
        f(i) -= 2 * h;
        q.assign_flat(f);
        const double down = mlp_loss_and_gradient(q, x, y, w, hs).loss;
        numeric(i) = (up - down) / (2 * h);
      }
      mlp_worst = std::max(mlp_worst, normwise_error(analytic, numeric));
    }
    report(4, "gradient fidelity", lr_worst < 1e-5 && mlp_worst < 1e-4,
           fmt("worst LR relative error %.2e, worst MLP relative error %.2e over 100 draws each", lr_worst,
               mlp_worst));
  });
}

std::vector<LogRecord> random_clicks(std::uint64_t seed, std::size_t users) {
  GenConfig g;
  g.n_users = users;
  g.seed = seed;
  g.world_seed = seed * 7 + 1;
  std::vector<LogRecord> clicks;
  for (auto& r : generate_logs(g))
    if (r.clicked) clicks.push_back(std::move(r));
  return clicks;
}

void criterion_5() {
  criterion(5, "protocol conservation", [] {
    Rng rng(5);
    std::uniform_int_distribution<int> users(100, 600);
    std::uniform_int_distribution<unsigned> bits(1, 8);
    std::uniform_real_distribution<double> window(50.0, 300.0);
    int conserved = 0;
    int bounded = 0;
    std::size_t worst_leak = 0;
    for (int pair = 0; pair < 20; ++pair) {
      const std::uint64_t seed = 100 + static_cast<std::uint64_t>(pair);
      const auto clicks = random_clicks(seed, static_cast<std::size_t>(users(rng)));
      const auto truth = static_cast<std::uint64_t>(
          std::count_if(clicks.begin(), clicks.end(), [](const auto& r) { return r.converted; }));

      ProtocolConfig all;
      all.bits = bits(rng);
      all.suppression_k = 0;
      all.window_h = GenConfig{}.horizon_h + all.delay_max_h + 1.0;
      std::uint64_t reported = 0;
      for (const auto& g : run_protocol(clicks, all, seed).groups) reported += g.conversions;
      conserved += reported == truth;

      // Tiling windows: per-group shortfall against ground truth is leakage.
      ProtocolConfig tiled = all;
      tiled.window_h = window(rng);
      const ProtocolRun run = run_protocol(clicks, tiled, seed);
      const auto membership = group_membership(run.clicks, tiled.window_h);
      std::map<GroupKey, std::uint64_t> true_counts;
      for (const auto& c : run.clicks)
        if (c.converted) ++true_counts[membership.at(c.record_id)];
      std::size_t leak = 0;
      for (const auto& g : run.groups) {
        const auto it = true_counts.find(g.key());
        const std::uint64_t t = it == true_counts.end() ? 0 : it->second;
        if (t > g.conversions) leak += t - g.conversions;
      }
      const std::size_t straddlers =
          count_boundary_straddlers(simulate_callbacks(run.clicks, tiled, seed), tiled.window_h);
      bounded += leak <= straddlers;
      worst_leak = std::max(worst_leak, leak);
    }
    report(5, "protocol conservation", conserved == 20 && bounded == 20,
           fmt("exact totals in %.0f/20 pairs, leakage within straddler bound in %.0f/20 (max leakage %.0f)",
               conserved, bounded, static_cast<double>(worst_leak)));
  });
}

void criterion_6() {
  criterion(6, "suppression soundness", [] {
    Rng rng(6);
    std::uniform_int_distribution<int> users(50, 500);
    std::uniform_int_distribution<unsigned> bits(1, 8);
    std::uniform_real_distribution<double> window(30.0, 400.0);
    std::size_t violations = 0;
    std::size_t groups = 0;
    int trial = 0;
    for (unsigned k : {1u, 5u, 10u, 50u}) {
      for (int rep = 0; rep < 10; ++rep, ++trial) {
        const std::uint64_t seed = 600 + static_cast<std::uint64_t>(trial);
        ProtocolConfig c;
        c.bits = bits(rng);
        c.window_h = window(rng);
        c.suppression_k = k;
        const auto clicks = random_clicks(seed, static_cast<std::size_t>(users(rng)));
        for (const auto& g : run_protocol(clicks, c, seed).groups) {
          ++groups;
          if (!g.suppressed && g.click_count < k) ++violations;
          if (g.suppressed && g.conversions != 0) ++violations;
        }
      }
    }
    report(6, "suppression soundness", violations == 0,
           fmt("%.0f violations over %.0f groups, 40 configurations", static_cast<double>(violations),
               static_cast<double>(groups)));
  });
}

void criterion_7(const RunConfig& cfg) {
  criterion(7, "calibration conservation", [&] {
    double worst = 0.0;
    std::size_t checked = 0;
    std::size_t order_breaks = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      GenConfig g = cfg.sweep.gen;
      g.n_users = 1500;
      g.seed = seed;
      const auto logs = assign_optin(generate_logs(g), 0.0, seed);
      const auto part = partition_labels(logs, SettingKind::PostRankingSignals);
      const LRParams lr = fit_post_ranking_lr(part.hard, cfg.sweep.pipeline.imputer);
      const auto soft = impute_soft_labels(part.unlabeled, lr);

      std::set<std::uint64_t> withheld;
      for (const auto& u : part.unlabeled) withheld.insert(u.record_id);
      std::vector<LogRecord> channel;
      for (const auto& r : logs)
        if (r.clicked && withheld.contains(r.record_id)) channel.push_back(r);
      ProtocolConfig pc = cfg.sweep.pipeline.protocol;
      pc.suppression_k = static_cast<unsigned>(seed * 3);
      const ProtocolRun run = run_protocol(channel, pc, seed);
      const auto membership = group_membership(run.clicks, pc.window_h);

      // Feasible: the count does not exceed the group's soft-labelled members.
      std::map<GroupKey, std::vector<std::size_t>> members;
      for (std::size_t i = 0; i < soft.size(); ++i) members[membership.at(soft[i].record_id)].push_back(i);
      std::vector<GroupLabel> groups = run.groups;
      for (auto& gl : groups)
        if (gl.conversions > members[gl.key()].size()) gl.suppressed = true;

      const auto out = calibrate_soft_labels(soft, membership, groups);
      for (const auto& gl : groups) {
        if (gl.suppressed) continue;
        const auto& idx = members[gl.key()];
        const double target = static_cast<double>(gl.conversions);
        double sum = 0.0;
        for (std::size_t i : idx) sum += out.labels[i].z_hat;
        worst = std::max(worst, std::abs(sum - target));
        ++checked;
        for (std::size_t a : idx)
          for (std::size_t b : idx)
            if (soft[a].z_hat < soft[b].z_hat && !(out.labels[a].z_hat < out.labels[b].z_hat)) ++order_breaks;
      }
    }
    report(7, "calibration conservation", checked > 0 && worst <= 1e-6 && order_breaks == 0,
           fmt("max |sum z_hat - g| %.2e over %.0f groups, %.0f order inversions", worst,
               static_cast<double>(checked), static_cast<double>(order_breaks)));
  });
}

// Precision at every distinct threshold, recall gain between thresholds.
double threshold_enumeration(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double area = 0.0;
  double previous_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0;
    double fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] ? tp : fp) += 1.0;
    const double recall = tp / positives;
    const double precision = tp / (tp + fp);
    area += (recall - previous_recall) * precision;
    previous_recall = recall;
  }
  return area;
}

void criterion_8() {
  criterion(8, "PR-AUC oracle", [] {
    Rng rng(8);
    std::uniform_int_distribution<int> level(0, 6);
    std::uniform_real_distribution<double> unif;
    std::size_t cases = 0;
    std::size_t mismatches = 0;
    for (int n = 2; n <= 10; ++n) {
      for (int variant = 0; variant < 3; ++variant) {
        std::vector<double> s(static_cast<std::size_t>(n));
        for (auto& v : s) v = variant == 0 ? unif(rng) : level(rng) / 6.0;
        if (variant == 2) std::fill(s.begin(), s.begin() + n / 2, s[0]);
        for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
          std::vector<int> y(static_cast<std::size_t>(n));
          for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = (mask >> i) & 1;
          ++cases;
          if (pr_auc(s, y) != threshold_enumeration(s, y)) ++mismatches;
        }
      }
    }
    report(8, "PR-AUC oracle", mismatches == 0,
           fmt("%.0f mismatches over %.0f labelings (n = 2..10)", static_cast<double>(mismatches),
               static_cast<double>(cases)));
  });
}

std::vector<std::string> sorted_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  std::sort(lines.begin(), lines.end());
  return lines;
}

void criterion_9() {
  criterion(9, "sweep determinism", [] {
    const fs::path dir = fs::temp_directory_path() / "ppct_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    int codes[2] = {-1, -1};
    for (int i = 0; i < 2; ++i) {
      const std::string cmd = std::string(PPCT_CLI) + " sweep --config " + PPCT_DEFAULT_CONFIG + " --out " +
                              (dir / std::to_string(i)).string() + " > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      codes[i] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    const auto a = sorted_lines(dir / "0" / "aggregated.csv");
    const auto b = sorted_lines(dir / "1" / "aggregated.csv");
    report(9, "sweep determinism", codes[0] == 0 && codes[1] == 0 && a.size() > 1 && a == b,
           fmt("exit codes %.0f/%.0f, %.0f aggregated rows, identical: %.0f", codes[0], codes[1],
               static_cast<double>(a.size()), a == b ? 1.0 : 0.0));
  });
}

void criterion_10(const RunConfig& cfg) {
  criterion(10, "overfitting", [&] {
    PipelineConfig p = cfg.sweep.pipeline;
    const int max_epochs = p.train.max_epochs;
    p.train.stopping = EarlyStopping{max_epochs};
    int early_peaks = 0;
    std::string peaks;
    for (int k = 0; k < 10; ++k) {
      GenConfig g = cfg.sweep.gen;
      g.seed += static_cast<std::uint64_t>(k);
      const auto logs = generate_logs(g);
      const auto r = run_setting({SettingKind::AndroidPlusIosLe13, 0.0, {}}, logs, p, g.seed);
      const auto& ep = r.diagnostics.trace.epochs;
      const auto peak = std::max_element(ep.begin(), ep.end(),
                                         [](const auto& a, const auto& b) { return a.val_pr_auc < b.val_pr_auc; });
      const bool ok = static_cast<int>(ep.size()) == max_epochs && peak->epoch < max_epochs &&
                      ep.back().val_pr_auc < peak->val_pr_auc;
      early_peaks += ok;
      peaks += " " + std::to_string(peak->epoch);
    }
    report(10, "overfitting", early_peaks >= 8,
           fmt("%.0f/10 seeds peak before epoch %.0f and end below peak; peak epochs:", early_peaks, max_epochs) +
               peaks);
  });
}

}  // namespace

int main() {
  RunConfig cfg;
  try {
    cfg = load_run_config(PPCT_DEFAULT_CONFIG);
  } catch (const std::exception& e) {
    std::printf("FAIL cannot load default config: %s\n", e.what());
    return 1;
  }
  criteria_1_to_3(cfg);
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7(cfg);
  criterion_8();
  criterion_9();
  criterion_10(cfg);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
