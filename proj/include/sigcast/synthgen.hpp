#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sigcast/cf_spec.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast {

class SupercriticalError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Discrete-time self-exciting count process with an exogenous drive:
//   r(s) = mu + eta * g(s)/100 + sum_{u<s} n_u * phi * kappa^(s-u)
//   n_s ~ Poisson(r(s)),  marks i.i.d. multinomial over the 4 dimensions.
// Expectations are exact via the linear recursion in expected_counts, which
// is what makes this generator usable as a causal ground-truth oracle.
struct DgpParams {
  double mu = 0.4;        // base rate, events per step
  double eta = 2.0;       // gain on the normalized signal
  double phi = 0.3;       // self-excitation strength, < 1
  double kappa = 0.5;     // per-step geometric decay of excitation
  std::array<double, kEngagementDims> mark_probs{0.5, 0.2, 0.2, 0.1};
  int steps = 216;
  Duration step_len = kHour;

  void validate() const;
};

struct Spike {
  Duration offset = 0;  // from timeline start
  double amplitude = 60.0;
  Duration width = kDay;
};

struct SignalScenario {
  Timestamp start = 0;
  Duration grid_step = 10 * kMinute;
  std::size_t n_points = 0;
  double baseline = 8.0;
  double noise_scale = 0.0;
  std::vector<Spike> spikes;
  std::uint64_t seed = 0;
};

// Rectangular spikes on a noisy baseline, clipped to [0, 100].
// Deterministic given the scenario seed.
SignalTimeline gen_signal(const SignalScenario& scenario);

struct CascadeId {
  std::string post_id;
  std::string user_ref = "src_0";
  std::string category = "synthetic";
  Timestamp t0 = 0;
  Duration snapshot_every = kHour;
};

// One simulated post. Randomness is keyed by (seed, step, draw) so events
// before step s never depend on anything at steps >= s.
Post gen_cascade(const SignalTimeline& signal, const DgpParams& p, std::uint64_t seed,
                 const CascadeId& id);

struct ExpectedCounts {
  std::vector<double> per_step;    // expected new events per step
  std::vector<double> cumulative;  // running totals

  double cumulative_dim(const DgpParams& p, std::size_t step, int d) const {
    return cumulative[step] * p.mark_probs[static_cast<std::size_t>(d)];
  }
};

// Exact expectation of gen_cascade totals under the same signal alignment.
ExpectedCounts expected_counts(const SignalTimeline& signal, Timestamp t0,
                               const DgpParams& p);

// Analytic causal effect of a transformation for one post alignment:
// expected cumulative counts at horizon end under the transformed signal
// minus under the factual one, per engagement dimension.
std::array<double, kEngagementDims> true_ate(const SignalTimeline& signal,
                                             const CounterfactualSpec& cf,
                                             const DgpParams& p,
                                             const ObservationWindow& win, Timestamp t0);

struct SourceInfo {
  std::string user_ref;
  double eta = 0.0;
  int n_posts = 0;
};

struct Dataset {
  SignalTimeline signal;
  std::vector<Post> posts;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  DgpParams dgp;
  ObservationWindow window;
  double treat_threshold = 50.0;      // A(t) = 1 when g(t) >= threshold
  std::vector<SourceInfo> sources;    // one entry when all posts share a source

  std::vector<Post> split(const std::vector<std::size_t>& idx) const;
  double source_eta(const std::string& user_ref) const;
};

struct DatasetConfig {
  int n_posts = 100;
  SignalScenario scenario;
  DgpParams dgp;
  ObservationWindow window;
  std::uint64_t seed = 1;
  Duration t0_margin = kDay;      // gap between timeline start and first t0
  Duration t0_spread = 20 * kDay; // posts staggered uniformly over this span
  Duration snapshot_every = kHour;
  double treat_threshold = 50.0;
  // Multi-source mode: per-source signal gains (geometric ladder) with
  // post counts decorrelated from the gains. Empty -> single source.
  int n_sources = 1;
  double eta_lo = 0.0, eta_hi = 0.0;  // ladder endpoints when n_sources > 1
};

// Reproducible dataset with a 70/15/15 split by seeded shuffle.
Dataset make_dataset(const DatasetConfig& cfg);

// Mean analytic effect over a post population (same alignment logic as the
// model-based estimator uses).
std::array<double, kEngagementDims> oracle_ate(const Dataset& ds,
                                               const CounterfactualSpec& cf);

// Per-metric standard deviation of horizon-end cumulative counts over the
// training split; the divisor shared by estimated and oracle normalized ATEs.
std::array<double, kEngagementDims> ate_normalization(const Dataset& ds);

double normalized_ate(const std::array<double, kEngagementDims>& per_metric,
                      const std::array<double, kEngagementDims>& scale);

}  // namespace sigcast
