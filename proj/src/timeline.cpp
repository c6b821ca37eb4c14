#include "sigcast/timeline.hpp"

#include <algorithm>
#include <cmath>

namespace sigcast {

void EngagementHistory::validate() const {
  for (std::size_t j = 0; j < obs.size(); ++j) {
    obs[j].e.validate();
    if (j > 0) {
      if (obs[j].t <= obs[j - 1].t) {
        throw InvariantError("history timestamps must be strictly increasing at entry " +
                             std::to_string(j));
      }
      for (int d = 0; d < kEngagementDims; ++d) {
        if (obs[j].e.counts[d] < obs[j - 1].e.counts[d]) {
          throw InvariantError("cumulative counts decreased at entry " + std::to_string(j) +
                               ", dimension " + std::to_string(d));
        }
      }
    }
  }
}

EngagementVector EngagementHistory::counts_at(Timestamp t) const {
  EngagementVector out{};
  for (const Observation& o : obs) {
    if (o.t > t) break;
    out = o.e;
  }
  return out;
}

void Post::validate() const {
  history.validate();
  for (const Observation& o : history.obs) {
    if (o.t < t0) throw InvariantError("post " + post_id + ": observation before t0");
  }
}

void SignalTimeline::validate() const {
  if (grid_step <= 0) throw InvariantError("signal grid step must be positive");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0) || !(values[i] <= 100.0) || !std::isfinite(values[i])) {
      throw InvariantError("signal value out of [0,100] at index " + std::to_string(i));
    }
  }
}

std::optional<std::size_t> SignalTimeline::index_at(Timestamp t) const {
  if (values.empty() || t < start) return std::nullopt;
  std::size_t i = static_cast<std::size_t>((t - start) / grid_step);
  return std::min(i, values.size() - 1);
}

double SignalTimeline::value_at(Timestamp t, double pad_value) const {
  auto i = index_at(t);
  return i ? values[*i] : pad_value;
}

void ObservationWindow::validate() const {
  if (tau_obs <= 0 || dt <= 0 || horizon <= 0) {
    throw InvariantError("observation window durations must be positive");
  }
}

void LagSpec::validate(Duration grid_step) const {
  if (w <= 0) throw ConfigError("lag width w must be positive");
  if (tau_lag <= 0) throw ConfigError("lag window must be positive");
  if (static_cast<Duration>(w) * grid_step > tau_lag) {
    throw ConfigError("lag window shorter than w grid steps");
  }
}

std::pair<EngagementHistory, SignalTimeline> slice_observed(const Post& post,
                                                            const SignalTimeline& signal,
                                                            const ObservationWindow& win) {
  win.validate();
  if (post.history.empty()) {
    throw EmptyHistoryError("post " + post.post_id + " has an empty history");
  }
  const Timestamp lo = post.t0;
  const Timestamp hi = post.t0 + win.tau_obs;

  EngagementHistory hist;
  for (const Observation& o : post.history.obs) {
    if (o.t >= lo && o.t <= hi) hist.obs.push_back(o);
  }

  SignalTimeline sig;
  sig.grid_step = signal.grid_step;
  if (!signal.values.empty()) {
    // first grid index >= lo, last <= hi (closed interval, endpoints on-grid)
    Timestamp delta = lo - signal.start;
    std::int64_t first = delta <= 0 ? 0 : (delta + signal.grid_step - 1) / signal.grid_step;
    std::int64_t last = (hi - signal.start) / signal.grid_step;
    last = std::min<std::int64_t>(last, static_cast<std::int64_t>(signal.size()) - 1);
    if (first <= last && hi >= signal.start) {
      sig.start = signal.time_at(static_cast<std::size_t>(first));
      sig.values.assign(signal.values.begin() + first, signal.values.begin() + last + 1);
    } else {
      sig.start = lo;
    }
  } else {
    sig.start = lo;
  }
  return {std::move(hist), std::move(sig)};
}

LagFeature lag_features(const SignalTimeline& signal, Timestamp anchor,
                        const LagSpec& spec) {
  spec.validate(signal.grid_step);
  const Duration stride = spec.stride(signal.grid_step);
  LagFeature f;
  f.anchor = anchor;
  f.values.resize(static_cast<std::size_t>(spec.w));
  for (int i = 0; i < spec.w; ++i) {
    const Timestamp t = anchor - static_cast<Duration>(i + 1) * stride;
    auto idx = signal.index_at(t);
    if (!idx) {
      if (!spec.zero_pad) {
        throw InvariantError("lag sample before timeline start and padding disabled");
      }
      f.values[static_cast<std::size_t>(i)] = 0.0;
    } else {
      f.values[static_cast<std::size_t>(i)] = signal.values[*idx];
    }
  }
  return f;
}

std::vector<Timestamp> prediction_grid(Timestamp t0, const ObservationWindow& win) {
  win.validate();
  std::vector<Timestamp> grid;
  const int k_max = win.steps();
  grid.reserve(static_cast<std::size_t>(std::max(k_max, 0)));
  for (int k = 1; k <= k_max; ++k) {
    grid.push_back(t0 + win.tau_obs + static_cast<Duration>(k) * win.dt);
  }
  return grid;
}

std::array<double, kEngagementDims> normalize_engagement(const EngagementVector& e,
                                                         const NormStats& stats) {
  stats.validate();
  std::array<double, kEngagementDims> out{};
  for (int d = 0; d < kEngagementDims; ++d) {
    out[static_cast<std::size_t>(d)] =
        std::log1p(static_cast<double>(e.counts[static_cast<std::size_t>(d)])) /
        stats.scale[static_cast<std::size_t>(d)];
  }
  return out;
}

std::array<double, kEngagementDims> denormalize_real(
    const std::array<double, kEngagementDims>& v, const NormStats& stats) {
  stats.validate();
  std::array<double, kEngagementDims> out{};
  for (int d = 0; d < kEngagementDims; ++d) {
    out[static_cast<std::size_t>(d)] =
        std::expm1(v[static_cast<std::size_t>(d)] * stats.scale[static_cast<std::size_t>(d)]);
  }
  return out;
}

EngagementVector denormalize_engagement(const std::array<double, kEngagementDims>& v,
                                        const NormStats& stats) {
  auto real = denormalize_real(v, stats);
  EngagementVector e;
  for (int d = 0; d < kEngagementDims; ++d) {
    e.counts[static_cast<std::size_t>(d)] =
        static_cast<std::int64_t>(std::llround(std::max(0.0, real[static_cast<std::size_t>(d)])));
  }
  return e;
}

}  // namespace sigcast
