#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sigcast/tape.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast {

// Parameters of the treatment-intensity model. The latent at step s is
//   beta0 + daily_profile[hour(s)] + treat_amp * sum_{u<s, A(u)=1} treat_decay^(s-u)
//         + outcome_amp * sum_{u<s} outcome_decay^(s-u) * w(u)
//         + sum_k alpha[k] * g(t_s - (k+1)*stride)
// and the intensity is the squared latent clamped to [0,1], directly usable
// as a Bernoulli probability. w(u) is the L1 engagement increment at step u
// normalized by the training-set mean increment.
struct IntensityParams {
  double beta0 = 0.1;
  std::array<double, 24> daily_profile{};  // learnable time-of-day baseline
  double treat_amp = 0.2;
  double treat_decay = 0.5;    // in (0,1)
  double outcome_amp = 0.1;
  double outcome_decay = 0.5;  // in (0,1)
  std::vector<double> alpha{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};  // lag coefficients

  void validate() const;
};

struct TreatmentSeries {
  std::vector<std::uint8_t> a;  // {0,1} per step

  void validate() const;
};

// Evaluation context: the discrete step grid, the driving signal with its
// lag sampling, and per-step normalized outcome magnitudes.
struct IntensityContext {
  Timestamp t0 = 0;
  Duration step_len = kHour;
  int steps = 0;
  const SignalTimeline* signal = nullptr;  // may be null (no signal term)
  LagSpec lag;
  std::vector<double> outcome_weight;  // length steps; zeros when absent

  Timestamp time_at(int s) const { return t0 + static_cast<Duration>(s) * step_len; }
};

// square-then-clamp shared with the sequence models' intensity head
double lambda_star(double latent);

// Weighted sum of the w lag samples of the signal at time t.
double g_signal(const SignalTimeline& signal, Timestamp t,
                const std::vector<double>& alpha, const LagSpec& lag);

class IntensityModel {
 public:
  explicit IntensityModel(IntensityParams params);

  const IntensityParams& params() const { return params_; }
  IntensityParams& params() { return params_; }

  // Latent and intensity at step s given treatments strictly before s.
  double latent_at(int s, const IntensityContext& ctx, const TreatmentSeries& past) const;
  double lambda_at(int s, const IntensityContext& ctx, const TreatmentSeries& past) const;
  // Full series under a fixed (already realized) treatment path.
  std::vector<double> lambda_series(const IntensityContext& ctx,
                                    const TreatmentSeries& treatments) const;

  // Differentiable path: parameters bound as tape leaves.
  struct ParamVars {
    Var beta0, profile, treat_amp, treat_decay, outcome_amp, outcome_decay, alpha;
  };
  ParamVars bind(Tape& tape) const;
  Var lambda_series_var(Tape& tape, const ParamVars& pv, const IntensityContext& ctx,
                        const TreatmentSeries& treatments) const;

 private:
  IntensityParams params_;
};

// Independent Bernoulli draws from a fixed probability series.
TreatmentSeries sample_treatments(const std::vector<double>& lambda, std::uint64_t seed);
// Autoregressive sampling: the intensity at step s uses the treatments
// already drawn at steps < s.
TreatmentSeries sample_treatments(const IntensityModel& model, const IntensityContext& ctx,
                                  std::uint64_t seed);

double bce_intensity(const std::vector<double>& lambda, const TreatmentSeries& a_true);

}  // namespace sigcast
