#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sigcast {

// Integer seconds everywhere: grid arithmetic stays exact.
using Timestamp = std::int64_t;
using Duration = std::int64_t;

constexpr Duration kSecond = 1;
constexpr Duration kMinute = 60;
constexpr Duration kHour = 3600;
constexpr Duration kDay = 86400;

class InvariantError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
class EmptyHistoryError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
class ConfigError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

constexpr int kEngagementDims = 4;  // likes, shares, comments, emoji

struct EngagementVector {
  std::array<std::int64_t, kEngagementDims> counts{};  // cumulative totals

  std::int64_t likes() const { return counts[0]; }
  std::int64_t shares() const { return counts[1]; }
  std::int64_t comments() const { return counts[2]; }
  std::int64_t emoji() const { return counts[3]; }

  void validate() const {
    for (auto c : counts)
      if (c < 0) throw InvariantError("engagement counts must be nonnegative");
  }
  bool operator==(const EngagementVector&) const = default;
};

struct Observation {
  Timestamp t = 0;
  EngagementVector e;
  bool operator==(const Observation&) const = default;
};

// Interval-censored sequence of cumulative engagement snapshots.
struct EngagementHistory {
  std::vector<Observation> obs;

  void validate() const;
  bool empty() const { return obs.empty(); }
  std::size_t size() const { return obs.size(); }
  // Cumulative counts at time t: last observation at or before t
  // (zero before the first observation).
  EngagementVector counts_at(Timestamp t) const;
  bool operator==(const EngagementHistory&) const = default;
};

struct Post {
  std::string post_id;
  Timestamp t0 = 0;
  std::string content_ref;  // opaque
  std::string user_ref;     // opaque
  std::string category;
  EngagementHistory history;

  void validate() const;
  bool operator==(const Post&) const = default;
};

// Regularly gridded attention series in [0, 100]. The grid is
// authoritative: lookups snap downward to the nearest grid point.
struct SignalTimeline {
  Duration grid_step = 10 * kMinute;
  Timestamp start = 0;
  std::vector<double> values;

  void validate() const;
  std::size_t size() const { return values.size(); }
  Timestamp time_at(std::size_t i) const {
    return start + static_cast<Timestamp>(i) * grid_step;
  }
  Timestamp end() const {
    return values.empty() ? start : time_at(values.size() - 1);
  }
  // Snap-down index of t; nullopt when t precedes the first grid point.
  std::optional<std::size_t> index_at(Timestamp t) const;
  // Value at the snap-down grid point. pad_value is returned for t before
  // the timeline; queries past the end hold the last value.
  double value_at(Timestamp t, double pad_value = 0.0) const;
  bool operator==(const SignalTimeline&) const = default;
};

struct ObservationWindow {
  Duration tau_obs = 2 * kDay;
  Duration dt = kDay;        // prediction step
  Duration horizon = 7 * kDay;

  void validate() const;
  int steps() const { return static_cast<int>(horizon / dt); }  // floor
};

// How the w lag samples are spread over the lag window tau_lag: either the
// w most recent grid points, or w samples strided tau_lag/w apart so the
// whole window is covered.
enum class LagMode { recent, strided };

struct LagSpec {
  Duration tau_lag = 24 * kHour;
  int w = 6;
  LagMode mode = LagMode::strided;
  bool zero_pad = true;  // pad before the timeline start instead of erroring

  Duration stride(Duration grid_step) const {
    return mode == LagMode::recent ? grid_step : tau_lag / w;
  }
  void validate(Duration grid_step) const;
};

struct LagFeature {
  std::vector<double> values;  // values[i] = g(anchor - (i+1)*stride)
  Timestamp anchor = 0;
};

// --- operations ---------------------------------------------------------

// Observations and signal points with t0 <= t <= t0 + tau_obs.
// Throws EmptyHistoryError for a post with no observations at all;
// a window that simply contains no events yields empty slices.
std::pair<EngagementHistory, SignalTimeline> slice_observed(const Post& post,
                                                            const SignalTimeline& signal,
                                                            const ObservationWindow& win);

LagFeature lag_features(const SignalTimeline& signal, Timestamp anchor,
                        const LagSpec& spec);

// [t0 + tau_obs + k*dt for k = 1..K]
std::vector<Timestamp> prediction_grid(Timestamp t0, const ObservationWindow& win);

// Per-dimension scales for log1p/max normalization; fit on the training
// split only.
struct NormStats {
  std::array<double, kEngagementDims> scale{1.0, 1.0, 1.0, 1.0};

  void validate() const {
    for (double s : scale)
      if (!(s > 0.0)) throw ConfigError("normalization scale must be positive");
  }
};

std::array<double, kEngagementDims> normalize_engagement(const EngagementVector& e,
                                                         const NormStats& stats);
EngagementVector denormalize_engagement(const std::array<double, kEngagementDims>& v,
                                        const NormStats& stats);
// Real-valued inverse (no rounding); used where fractional expected counts matter.
std::array<double, kEngagementDims> denormalize_real(
    const std::array<double, kEngagementDims>& v, const NormStats& stats);

}  // namespace sigcast
