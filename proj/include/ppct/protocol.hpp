#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ppct/datagen.hpp"

namespace ppct {

inline constexpr unsigned kMaxTokenBits = 8;

/// A few-bit value chosen on the source side at click time.
class GroupToken {
 public:
  GroupToken() = default;
  /// Throws ConfigError if bits is outside [1, 8] or value >= 2^bits.
  GroupToken(unsigned value, unsigned bits);

  unsigned value() const { return value_; }
  unsigned bits() const { return bits_; }
  unsigned capacity() const { return 1u << bits_; }

  friend bool operator==(const GroupToken&, const GroupToken&) = default;

 private:
  unsigned value_ = 0;
  unsigned bits_ = 5;
};

enum class GroupingPolicy { RoundRobin, HashOfAd, Cohort };

std::string_view grouping_name(GroupingPolicy p);
GroupingPolicy parse_grouping(std::string_view s);

struct ProtocolConfig {
  unsigned bits = 5;
  double delay_min_h = 24.0;
  double delay_max_h = 48.0;
  double window_h = 168.0;
  unsigned suppression_k = 10;
  GroupingPolicy grouping = GroupingPolicy::RoundRobin;
  /// Std-dev of rounded Gaussian noise added to reported counts; 0 disables it.
  double count_noise_stddev = 0.0;

  void validate() const;
};

/// Round-robin counters are per target app; one assigner must own a stream
/// of clicks (it is not thread-safe).
class TokenAssigner {
 public:
  TokenAssigner(GroupingPolicy policy, unsigned bits);

  /// Throws DataError for an unclicked record, ConfigError when the policy
  /// needs metadata the record lacks.
  GroupToken assign(const LogRecord& record);

 private:
  GroupingPolicy policy_;
  unsigned bits_;
  std::map<std::uint64_t, unsigned> next_;
};

/// Simulator-side view of a click after token assignment.
struct TokenizedClick {
  std::uint64_t record_id = 0;
  std::uint64_t target_app = 0;
  GroupToken token;
  double click_time = 0.0;
  bool converted = false;
};

std::vector<TokenizedClick> assign_group_tokens(std::span<const LogRecord> clicks,
                                                GroupingPolicy policy, unsigned bits);

/// What the target app reports. Deliberately no record, user or feature fields.
struct ConversionCallback {
  std::uint64_t target_app = 0;
  GroupToken token;
  double report_time = 0.0;
};

/// Ground-truth pairing of a callback with its click. Never leaves the simulator.
struct TracedCallback {
  ConversionCallback callback;
  std::uint64_t record_id = 0;
  double click_time = 0.0;
};

/// One callback per converted click, delayed by Uniform[delay_min_h, delay_max_h].
/// Output follows click order.
std::vector<TracedCallback> simulate_callbacks(std::span<const TokenizedClick> clicks,
                                               const ProtocolConfig& config, std::uint64_t seed);

/// Anonymous callback stream: sorted by report_time with ties shuffled.
std::vector<ConversionCallback> emit_callbacks(std::span<const TokenizedClick> clicks,
                                               const ProtocolConfig& config, std::uint64_t seed);

struct GroupKey {
  std::uint64_t target_app = 0;
  unsigned token = 0;
  std::int64_t window = 0;

  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct GroupKeyHash {
  std::size_t operator()(const GroupKey& k) const {
    return splitmix64(k.target_app * 0x100000001b3ULL ^ (std::uint64_t{k.token} << 40) ^
                      static_cast<std::uint64_t>(k.window));
  }
};

struct GroupLabel {
  std::uint64_t target_app = 0;
  GroupToken token;
  double window_start = 0.0;
  double window_end = 0.0;
  std::int64_t window = 0;  // index of [window_start, window_end); -1 for pooled groups
  std::uint64_t click_count = 0;
  std::uint64_t conversions = 0;
  bool suppressed = false;

  GroupKey key() const { return {target_app, token.value(), window}; }
};

std::int64_t window_index(double t, double window_h);

/// One label per (target_app, token, window) holding at least one click.
/// Conversions are attributed to the window containing their report time;
/// callbacks that land in a bucket with no clicks are dropped.
std::vector<GroupLabel> aggregate_group_labels(std::span<const TokenizedClick> clicks,
                                               std::span<const ConversionCallback> callbacks,
                                               const ProtocolConfig& config);

/// Groups with click_count < k are flagged and their conversions zeroed.
std::vector<GroupLabel> apply_suppression(std::vector<GroupLabel> groups, unsigned k);

/// Optional platform noise on reported counts (disabled when stddev == 0).
std::vector<GroupLabel> add_count_noise(std::vector<GroupLabel> groups, double stddev,
                                        std::uint64_t seed);

/// Source-side bookkeeping: which group each of its clicks landed in.
std::unordered_map<std::uint64_t, GroupKey> group_membership(
    std::span<const TokenizedClick> clicks, double window_h);

/// Converted clicks whose report falls in a later window than the click.
std::size_t count_boundary_straddlers(std::span<const TracedCallback> traced, double window_h);

struct ProtocolRun {
  std::vector<TokenizedClick> clicks;
  std::vector<ConversionCallback> callbacks;
  std::vector<GroupLabel> groups;  // suppressed and (optionally) noised
};

/// Token assignment, callback emission, aggregation, suppression, noise.
ProtocolRun run_protocol(std::span<const LogRecord> clicks, const ProtocolConfig& config,
                         std::uint64_t seed);

}  // namespace ppct
