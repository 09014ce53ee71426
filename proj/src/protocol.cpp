#include "ppct/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ppct {
namespace {

constexpr std::uint64_t kDelayStream = 0x444c4159;    // "DLAY"
constexpr std::uint64_t kShuffleStream = 0x53484646;  // "SHFF"
constexpr std::uint64_t kNoiseStream = 0x4e4f4953;    // "NOIS"

}  // namespace

GroupToken::GroupToken(unsigned value, unsigned bits) : value_(value), bits_(bits) {
  if (bits < 1 || bits > kMaxTokenBits) throw ConfigError("bits", "must lie in [1, 8]");
  if (value >= (1u << bits))
    throw ConfigError("token", "value " + std::to_string(value) + " does not fit in " +
                                   std::to_string(bits) + " bits");
}

std::string_view grouping_name(GroupingPolicy p) {
  switch (p) {
    case GroupingPolicy::RoundRobin: return "RoundRobin";
    case GroupingPolicy::HashOfAd: return "HashOfAd";
    case GroupingPolicy::Cohort: return "Cohort";
  }
  return "?";
}

GroupingPolicy parse_grouping(std::string_view s) {
  for (auto p : {GroupingPolicy::RoundRobin, GroupingPolicy::HashOfAd, GroupingPolicy::Cohort})
    if (grouping_name(p) == s) return p;
  throw ConfigError("grouping", "unknown grouping policy '" + std::string(s) + "'");
}

void ProtocolConfig::validate() const {
  if (bits < 1 || bits > kMaxTokenBits) throw ConfigError("bits", "must lie in [1, 8]");
  if (!std::isfinite(delay_min_h) || delay_min_h < 0.0)
    throw ConfigError("delay_min_h", "must be finite and >= 0");
  if (!std::isfinite(delay_max_h) || delay_max_h < delay_min_h)
    throw ConfigError("delay_max_h", "must be finite and >= delay_min_h");
  if (!std::isfinite(window_h) || window_h <= 0.0)
    throw ConfigError("window_h", "must be finite and > 0 (windows tile the horizon)");
  if (!std::isfinite(count_noise_stddev) || count_noise_stddev < 0.0)
    throw ConfigError("count_noise_stddev", "must be finite and >= 0");
}

TokenAssigner::TokenAssigner(GroupingPolicy policy, unsigned bits) : policy_(policy), bits_(bits) {
  if (bits < 1 || bits > kMaxTokenBits) throw ConfigError("bits", "must lie in [1, 8]");
}

GroupToken TokenAssigner::assign(const LogRecord& record) {
  if (!record.clicked)
    throw DataError("record " + std::to_string(record.record_id) + " was not clicked");
  const unsigned cap = 1u << bits_;
  switch (policy_) {
    case GroupingPolicy::RoundRobin: {
      unsigned& next = next_[record.target_app];
      const unsigned v = next;
      next = (next + 1) % cap;
      return GroupToken(v, bits_);
    }
    case GroupingPolicy::HashOfAd:
      if (!record.ad_id)
        throw ConfigError("grouping", "HashOfAd policy needs the ad id of record " +
                                          std::to_string(record.record_id));
      return GroupToken(static_cast<unsigned>(splitmix64(*record.ad_id) % cap), bits_);
    case GroupingPolicy::Cohort:
      if (record.x.size() == 0)
        throw ConfigError("grouping", "Cohort policy needs ranking features on record " +
                                          std::to_string(record.record_id));
      return GroupToken(record.x[0] >= 0.0 ? 1u : 0u, bits_);
  }
  return GroupToken(0, bits_);
}

std::vector<TokenizedClick> assign_group_tokens(std::span<const LogRecord> clicks,
                                                GroupingPolicy policy, unsigned bits) {
  TokenAssigner assigner(policy, bits);
  std::vector<TokenizedClick> out;
  out.reserve(clicks.size());
  for (const auto& r : clicks) {
    out.push_back({r.record_id, r.target_app, assigner.assign(r), r.click_time, r.converted});
  }
  return out;
}

std::vector<TracedCallback> simulate_callbacks(std::span<const TokenizedClick> clicks,
                                               const ProtocolConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, kDelayStream));
  std::uniform_real_distribution<double> delay(config.delay_min_h, config.delay_max_h);
  std::vector<TracedCallback> out;
  for (const auto& c : clicks) {
    if (!c.converted) continue;
    const double d = config.delay_max_h > config.delay_min_h ? delay(rng) : config.delay_min_h;
    out.push_back({{c.target_app, c.token, c.click_time + d}, c.record_id, c.click_time});
  }
  return out;
}

std::vector<ConversionCallback> emit_callbacks(std::span<const TokenizedClick> clicks,
                                               const ProtocolConfig& config, std::uint64_t seed) {
  const auto traced = simulate_callbacks(clicks, config, seed);
  std::vector<ConversionCallback> out;
  out.reserve(traced.size());
  for (const auto& t : traced) out.push_back(t.callback);
  Rng rng(derive_seed(seed, kShuffleStream));
  std::shuffle(out.begin(), out.end(), rng);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.report_time < b.report_time; });
  return out;
}

std::int64_t window_index(double t, double window_h) {
  return static_cast<std::int64_t>(std::floor(t / window_h));
}

std::vector<GroupLabel> aggregate_group_labels(std::span<const TokenizedClick> clicks,
                                               std::span<const ConversionCallback> callbacks,
                                               const ProtocolConfig& config) {
  config.validate();
  const double w = config.window_h;
  std::map<GroupKey, GroupLabel> groups;
  for (const auto& c : clicks) {
    const GroupKey key{c.target_app, c.token.value(), window_index(c.click_time, w)};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) {
      it->second.target_app = c.target_app;
      it->second.token = c.token;
      it->second.window_start = static_cast<double>(key.window) * w;
      it->second.window_end = static_cast<double>(key.window + 1) * w;
      it->second.window = key.window;
    }
    ++it->second.click_count;
  }
  for (const auto& cb : callbacks) {
    const GroupKey key{cb.target_app, cb.token.value(), window_index(cb.report_time, w)};
    if (auto it = groups.find(key); it != groups.end()) ++it->second.conversions;
  }
  std::vector<GroupLabel> out;
  out.reserve(groups.size());
  for (auto& [key, g] : groups) out.push_back(g);
  return out;
}

std::vector<GroupLabel> apply_suppression(std::vector<GroupLabel> groups, unsigned k) {
  for (auto& g : groups) {
    if (g.click_count < k) {
      g.suppressed = true;
      g.conversions = 0;
    }
  }
  return groups;
}

std::vector<GroupLabel> add_count_noise(std::vector<GroupLabel> groups, double stddev,
                                        std::uint64_t seed) {
  if (stddev <= 0.0) return groups;
  Rng rng(derive_seed(seed, kNoiseStream));
  std::normal_distribution<double> noise(0.0, stddev);
  for (auto& g : groups) {
    if (g.suppressed) continue;
    const double noisy = static_cast<double>(g.conversions) + std::round(noise(rng));
    g.conversions = static_cast<std::uint64_t>(std::max(0.0, noisy));
  }
  return groups;
}

std::unordered_map<std::uint64_t, GroupKey> group_membership(
    std::span<const TokenizedClick> clicks, double window_h) {
  std::unordered_map<std::uint64_t, GroupKey> out;
  out.reserve(clicks.size());
  for (const auto& c : clicks)
    out.emplace(c.record_id, GroupKey{c.target_app, c.token.value(), window_index(c.click_time, window_h)});
  return out;
}

std::size_t count_boundary_straddlers(std::span<const TracedCallback> traced, double window_h) {
  return static_cast<std::size_t>(std::count_if(traced.begin(), traced.end(), [&](const auto& t) {
    return window_index(t.click_time, window_h) != window_index(t.callback.report_time, window_h);
  }));
}

ProtocolRun run_protocol(std::span<const LogRecord> clicks, const ProtocolConfig& config,
                         std::uint64_t seed) {
  config.validate();
  ProtocolRun run;
  run.clicks = assign_group_tokens(clicks, config.grouping, config.bits);
  run.callbacks = emit_callbacks(run.clicks, config, seed);
  run.groups = aggregate_group_labels(run.clicks, run.callbacks, config);
  run.groups = apply_suppression(std::move(run.groups), config.suppression_k);
  run.groups = add_count_noise(std::move(run.groups), config.count_noise_stddev, seed);
  return run;
}

}  // namespace ppct
