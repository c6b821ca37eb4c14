#pragma once

#include <array>
#include <string>
#include <vector>

#include "sigcast/cf_spec.hpp"
#include "sigcast/model.hpp"

namespace sigcast {

struct AteEstimate {
  std::array<double, kEngagementDims> ate_per_metric{};
  double ate_normalized = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% percentile bootstrap
  int n_bootstrap = 0;
};

struct ScenarioCell {
  std::string name;
  AteEstimate estimate;
};

// Per-post causal contrast: rollout under the transformed signal minus
// rollout under the factual one, at the horizon end, de-normalized.
std::array<double, kEngagementDims> cf_effect(const JointModel& model, const Post& post,
                                              const SignalTimeline& signal,
                                              const CounterfactualSpec& spec,
                                              const ObservationWindow& win,
                                              const NormStats& norm);

// G-computation: average cf_effect over the post population, with a
// percentile bootstrap over post resamples. ate_scale holds the per-metric
// normalization divisors (training-split engagement standard deviations).
AteEstimate ate_gcomp(const JointModel& model, const std::vector<Post>& posts,
                      const SignalTimeline& signal, const CounterfactualSpec& spec,
                      const ObservationWindow& win, const NormStats& norm,
                      const std::array<double, kEngagementDims>& ate_scale,
                      int n_bootstrap, std::uint64_t bootstrap_seed, int threads = 1);

// Bootstrap machinery over precomputed per-post effects (also used for
// paired scenario contrasts).
AteEstimate ate_from_effects(const std::vector<std::array<double, kEngagementDims>>& effects,
                             const std::array<double, kEngagementDims>& ate_scale,
                             int n_bootstrap, std::uint64_t bootstrap_seed);

// The nine-cell scenario table: exposure deltas 0->20/20->40/40->60,
// timing shifts -5/-3/-1 days, durations 1/3/5 days.
std::vector<ScenarioCell> scenario_grid(const JointModel& model,
                                        const std::vector<Post>& posts,
                                        const SignalTimeline& signal,
                                        const ObservationWindow& win, const NormStats& norm,
                                        const std::array<double, kEngagementDims>& ate_scale,
                                        int n_bootstrap, std::uint64_t seed,
                                        int threads = 1);

}  // namespace sigcast
