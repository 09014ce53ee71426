#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ppct/core.hpp"

namespace ppct {

enum class Platform { Android, iOS };

std::string_view platform_name(Platform p);
Platform parse_platform(std::string_view s);

/// Knobs of the synthetic click/conversion world.
///
/// The conversion logit of a clicked impression is
///   cvr_base_logit + w_platform . features + [iOS, os <= 13] * behavior_shift
/// where w_android and w_ios have norm cvr_feature_scale and cosine
/// platform_correlation. The last coordinate of x is a platform indicator
/// (+1 iOS, -1 Android); the others are independent standard normals.
/// Post-ranking signals are x' = xp_signal_strength * (2z - 1) * u + noise.
struct GenConfig {
  std::uint64_t n_users = 4000;
  std::uint64_t n_ads = 40;
  std::uint64_t n_target_apps = 2;
  int dim_x = 12;
  int dim_xp = 4;
  double impressions_per_user = 5.0;
  double horizon_h = 720.0;
  double ctr_base_logit = -1.0;
  double ctr_feature_scale = 0.5;
  double cvr_base_logit = -2.0;
  double cvr_feature_scale = 2.0;
  double platform_correlation = 0.0;
  double xp_signal_strength = 1.2;
  double ios_fraction = 0.5;
  double ios_le13_fraction = 0.085;
  double behavior_shift = 1.0;
  /// Draws the ground-truth weights and x' direction; `seed` draws everything else.
  std::uint64_t world_seed = 1;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// One impression. `converted` and `z_true_prob` are simulator-side truth;
/// trainers only ever see RankingExample / PostRankingExample views.
struct LogRecord {
  std::uint64_t record_id = 0;
  std::uint64_t user_id = 0;
  std::optional<std::uint64_t> ad_id;  // not part of the CSV export
  std::uint64_t target_app = 0;
  Platform platform = Platform::Android;
  int os_version = 0;
  bool opted_in = false;
  double click_time = 0.0;
  bool clicked = false;
  bool converted = false;
  double z_true_prob = 0.0;
  Vector x;
  std::optional<Vector> x_prime;  // present iff clicked
};

/// A clicked record whose conversion label has been withheld. There is no
/// field for the label, so nothing downstream can read it.
struct UnlabeledRecord {
  std::uint64_t record_id = 0;
  std::uint64_t user_id = 0;
  std::optional<std::uint64_t> ad_id;
  std::uint64_t target_app = 0;
  Platform platform = Platform::Android;
  int os_version = 0;
  bool opted_in = false;
  double click_time = 0.0;
  Vector x;
  std::optional<Vector> x_prime;
};

UnlabeledRecord withhold_label(const LogRecord& r);

enum class SettingKind { NonPPCT, AndroidOnly, AndroidPlusIosLe13, OptInOnly, PostRankingSignals };

std::string_view setting_name(SettingKind kind);
SettingKind parse_setting_kind(std::string_view s);

struct LabeledPartition {
  std::vector<LogRecord> hard;
  std::vector<UnlabeledRecord> unlabeled;
};

inline constexpr int kLastLegacyIosVersion = 13;

std::vector<LogRecord> generate_logs(const GenConfig& config);

/// Opts each iOS user in independently with probability `optin_rate`. A user's
/// draw is a fixed uniform keyed on (seed, user_id), so for a fixed seed the
/// opted-in set grows monotonically with the rate.
std::vector<LogRecord> assign_optin(std::vector<LogRecord> records, double optin_rate,
                                    std::uint64_t seed);

/// Splits the clicked subset into hard-labeled and label-withheld records.
/// Opt-in flags must already reflect the setting's rate.
LabeledPartition partition_labels(std::span<const LogRecord> records, SettingKind setting);

/// Whether a clicked record keeps its individual label under `setting`.
bool keeps_hard_label(const LogRecord& r, SettingKind setting);

}  // namespace ppct
