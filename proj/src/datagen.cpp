#include "ppct/datagen.hpp"

#include <array>
#include <cmath>
#include <string>

namespace ppct {
namespace {

constexpr std::uint64_t kWorldStream = 0x5752'4c44;  // "WRLD"
constexpr std::uint64_t kOptinStream = 0x4f50'5449;  // "OPTI"

void require_fraction(double v, const char* field) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(field, "must lie in [0, 1]");
}

void require_nonnegative(double v, const char* field) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be finite and >= 0");
}

void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) throw ConfigError(field, "must be finite");
}

Vector random_unit(int dim, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

struct World {
  Vector ctr_weights;
  Vector cvr_android;
  Vector cvr_ios;
  Vector xp_direction;
};

World make_world(const GenConfig& c) {
  Rng rng(derive_seed(c.world_seed, kWorldStream));
  const int n_feat = c.dim_x - 1;
  World w;
  w.ctr_weights = Vector::Zero(n_feat);
  w.cvr_android = Vector::Zero(n_feat);
  w.cvr_ios = Vector::Zero(n_feat);
  if (n_feat > 0) {
    w.ctr_weights = c.ctr_feature_scale * random_unit(n_feat, rng);
    const Vector a = random_unit(n_feat, rng);
    Vector b = a;
    if (n_feat > 1) {
      // Orthogonal complement direction for the iOS-specific part.
      Vector r = random_unit(n_feat, rng);
      r -= r.dot(a) * a;
      if (r.norm() > 1e-12) {
        r.normalize();
        const double rho = c.platform_correlation;
        b = rho * a + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * r;
      }
    }
    w.cvr_android = c.cvr_feature_scale * a;
    w.cvr_ios = c.cvr_feature_scale * b;
  }
  w.xp_direction = random_unit(c.dim_xp, rng);
  return w;
}

}  // namespace

std::string_view platform_name(Platform p) {
  return p == Platform::Android ? "Android" : "iOS";
}

Platform parse_platform(std::string_view s) {
  if (s == "Android") return Platform::Android;
  if (s == "iOS") return Platform::iOS;
  throw DataError("unknown platform '" + std::string(s) + "'");
}

std::string_view setting_name(SettingKind kind) {
  switch (kind) {
    case SettingKind::NonPPCT: return "NonPPCT";
    case SettingKind::AndroidOnly: return "AndroidOnly";
    case SettingKind::AndroidPlusIosLe13: return "AndroidPlusIosLe13";
    case SettingKind::OptInOnly: return "OptInOnly";
    case SettingKind::PostRankingSignals: return "PostRankingSignals";
  }
  return "?";
}

SettingKind parse_setting_kind(std::string_view s) {
  for (auto k : {SettingKind::NonPPCT, SettingKind::AndroidOnly, SettingKind::AndroidPlusIosLe13,
                 SettingKind::OptInOnly, SettingKind::PostRankingSignals}) {
    if (setting_name(k) == s) return k;
  }
  throw ConfigError("settings", "unknown experiment setting '" + std::string(s) + "'");
}

void GenConfig::validate() const {
  if (dim_x < 1) throw ConfigError("dim_x", "must be >= 1");
  if (dim_xp < 1) throw ConfigError("dim_xp", "must be >= 1");
  if (n_users > 0 && n_ads < 1) throw ConfigError("n_ads", "must be >= 1");
  if (n_target_apps < 1) throw ConfigError("n_target_apps", "must be >= 1");
  require_fraction(ios_fraction, "ios_fraction");
  require_fraction(ios_le13_fraction, "ios_le13_fraction");
  require_nonnegative(xp_signal_strength, "xp_signal_strength");
  require_nonnegative(behavior_shift, "behavior_shift");
  require_nonnegative(impressions_per_user, "impressions_per_user");
  require_nonnegative(ctr_feature_scale, "ctr_feature_scale");
  require_nonnegative(cvr_feature_scale, "cvr_feature_scale");
  require_finite(ctr_base_logit, "ctr_base_logit");
  require_finite(cvr_base_logit, "cvr_base_logit");
  if (!(platform_correlation >= -1.0 && platform_correlation <= 1.0))
    throw ConfigError("platform_correlation", "must lie in [-1, 1]");
  if (!(horizon_h >= 1.0) || !std::isfinite(horizon_h))
    throw ConfigError("horizon_h", "must be finite and >= 1");
}

UnlabeledRecord withhold_label(const LogRecord& r) {
  UnlabeledRecord u;
  u.record_id = r.record_id;
  u.user_id = r.user_id;
  u.ad_id = r.ad_id;
  u.target_app = r.target_app;
  u.platform = r.platform;
  u.os_version = r.os_version;
  u.opted_in = r.opted_in;
  u.click_time = r.click_time;
  u.x = r.x;
  u.x_prime = r.x_prime;
  return u;
}

std::vector<LogRecord> generate_logs(const GenConfig& config) {
  config.validate();
  std::vector<LogRecord> out;
  if (config.n_users == 0) return out;

  const World world = make_world(config);
  const int n_feat = config.dim_x - 1;
  const auto horizon = static_cast<std::int64_t>(config.horizon_h);

  std::uint64_t next_id = 0;
  for (std::uint64_t user = 0; user < config.n_users; ++user) {
    Rng rng(derive_seed(config.seed, user + 1));
    std::bernoulli_distribution is_ios(config.ios_fraction);
    std::bernoulli_distribution legacy_os(config.ios_le13_fraction);
    std::poisson_distribution<int> n_impressions(config.impressions_per_user);
    std::uniform_int_distribution<std::uint64_t> pick_ad(0, config.n_ads - 1);
    std::uniform_int_distribution<std::int64_t> pick_hour(0, horizon - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal;

    const Platform platform = is_ios(rng) ? Platform::iOS : Platform::Android;
    int os_version;
    if (platform == Platform::iOS) {
      os_version = legacy_os(rng) ? 12 + static_cast<int>(unif(rng) * 2) : 14 + static_cast<int>(unif(rng) * 3);
    } else {
      os_version = 10 + static_cast<int>(unif(rng) * 4);
    }
    const bool legacy_ios = platform == Platform::iOS && os_version <= kLastLegacyIosVersion;
    const Vector& cvr_w = platform == Platform::iOS ? world.cvr_ios : world.cvr_android;

    const int n = config.impressions_per_user > 0 ? n_impressions(rng) : 0;
    for (int k = 0; k < n; ++k) {
      LogRecord r;
      r.record_id = next_id++;
      r.user_id = user;
      r.ad_id = pick_ad(rng);
      r.target_app = *r.ad_id % config.n_target_apps;
      r.platform = platform;
      r.os_version = os_version;
      r.click_time = static_cast<double>(pick_hour(rng));
      r.x.resize(config.dim_x);
      for (int i = 0; i < n_feat; ++i) r.x[i] = normal(rng);
      r.x[config.dim_x - 1] = platform == Platform::iOS ? 1.0 : -1.0;

      const auto features = r.x.head(n_feat);
      const double ctr_logit = config.ctr_base_logit + world.ctr_weights.dot(features);
      double cvr_logit = config.cvr_base_logit + cvr_w.dot(features);
      if (legacy_ios) cvr_logit += config.behavior_shift;
      r.z_true_prob = sigmoid(cvr_logit);

      r.clicked = unif(rng) < sigmoid(ctr_logit);
      if (r.clicked) {
        r.converted = unif(rng) < r.z_true_prob;
        Vector xp(config.dim_xp);
        for (int i = 0; i < config.dim_xp; ++i) xp[i] = normal(rng);
        xp += config.xp_signal_strength * (r.converted ? 1.0 : -1.0) * world.xp_direction;
        r.x_prime = std::move(xp);
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<LogRecord> assign_optin(std::vector<LogRecord> records, double optin_rate,
                                    std::uint64_t seed) {
  if (!(optin_rate >= 0.0 && optin_rate <= 1.0))
    throw ConfigError("optin_rate", "must lie in [0, 1]");
  const std::uint64_t base = derive_seed(seed, kOptinStream);
  for (auto& r : records) {
    if (r.platform != Platform::iOS) continue;
    r.opted_in = hash_to_unit(derive_seed(base, r.user_id)) < optin_rate;
  }
  return records;
}

bool keeps_hard_label(const LogRecord& r, SettingKind setting) {
  if (r.platform == Platform::Android) return true;
  switch (setting) {
    case SettingKind::NonPPCT: return true;
    case SettingKind::AndroidOnly: return false;
    case SettingKind::AndroidPlusIosLe13: return r.os_version <= kLastLegacyIosVersion;
    case SettingKind::OptInOnly:
    case SettingKind::PostRankingSignals:
      return r.opted_in || r.os_version <= kLastLegacyIosVersion;
  }
  return false;
}

LabeledPartition partition_labels(std::span<const LogRecord> records, SettingKind setting) {
  LabeledPartition p;
  for (const auto& r : records) {
    if (!r.clicked) continue;
    if (keeps_hard_label(r, setting)) {
      p.hard.push_back(r);
    } else {
      p.unlabeled.push_back(withhold_label(r));
    }
  }
  return p;
}

}  // namespace ppct
