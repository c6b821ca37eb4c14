#include "sigcast/intensity.hpp"

#include <algorithm>
#include <cmath>

#include "sigcast/rng.hpp"

namespace sigcast {

namespace {

int hour_bin(Timestamp t) {
  const Timestamp day = ((t % kDay) + kDay) % kDay;
  return static_cast<int>(day / kHour);
}

}  // namespace

void IntensityParams::validate() const {
  if (!(treat_decay > 0.0) || treat_decay >= 1.0 || !(outcome_decay > 0.0) ||
      outcome_decay >= 1.0) {
    throw InvariantError("decay coefficients must lie in (0,1)");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(beta0) || !finite(treat_amp) || !finite(outcome_amp)) {
    throw InvariantError("intensity parameters must be finite");
  }
  for (double v : daily_profile)
    if (!finite(v)) throw InvariantError("daily profile must be finite");
  for (double v : alpha)
    if (!finite(v)) throw InvariantError("alpha must be finite");
}

void TreatmentSeries::validate() const {
  for (std::uint8_t v : a)
    if (v > 1) throw InvariantError("treatment indicators must be 0 or 1");
}

double lambda_star(double latent) {
  return std::min(latent * latent, 1.0);
}

double g_signal(const SignalTimeline& signal, Timestamp t, const std::vector<double>& alpha,
                const LagSpec& lag) {
  LagSpec spec = lag;
  spec.w = static_cast<int>(alpha.size());
  const LagFeature f = lag_features(signal, t, spec);
  double s = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) s += alpha[k] * f.values[k];
  return s;
}

IntensityModel::IntensityModel(IntensityParams params) : params_(std::move(params)) {
  params_.validate();
}

double IntensityModel::latent_at(int s, const IntensityContext& ctx,
                                 const TreatmentSeries& past) const {
  const IntensityParams& p = params_;
  double treat_kernel = 0.0;
  double outcome_kernel = 0.0;
  for (int u = 0; u < s; ++u) {
    const double decay_pow = static_cast<double>(s - u);
    if (u < static_cast<int>(past.a.size()) && past.a[static_cast<std::size_t>(u)]) {
      treat_kernel += std::pow(p.treat_decay, decay_pow);
    }
    if (u < static_cast<int>(ctx.outcome_weight.size())) {
      outcome_kernel +=
          std::pow(p.outcome_decay, decay_pow) * ctx.outcome_weight[static_cast<std::size_t>(u)];
    }
  }
  double latent = p.beta0 + p.daily_profile[static_cast<std::size_t>(hour_bin(ctx.time_at(s)))] +
                  p.treat_amp * treat_kernel + p.outcome_amp * outcome_kernel;
  if (ctx.signal != nullptr) {
    latent += g_signal(*ctx.signal, ctx.time_at(s), p.alpha, ctx.lag);
  }
  return latent;
}

double IntensityModel::lambda_at(int s, const IntensityContext& ctx,
                                 const TreatmentSeries& past) const {
  return lambda_star(latent_at(s, ctx, past));
}

std::vector<double> IntensityModel::lambda_series(const IntensityContext& ctx,
                                                  const TreatmentSeries& treatments) const {
  std::vector<double> out(static_cast<std::size_t>(ctx.steps));
  // kernel sums via the geometric recursions; only strictly-past terms enter
  double treat_kernel = 0.0, outcome_kernel = 0.0;
  const IntensityParams& p = params_;
  for (int s = 0; s < ctx.steps; ++s) {
    if (s > 0) {
      const double a_prev = (s - 1) < static_cast<int>(treatments.a.size()) &&
                                    treatments.a[static_cast<std::size_t>(s - 1)]
                                ? 1.0
                                : 0.0;
      const double w_prev = (s - 1) < static_cast<int>(ctx.outcome_weight.size())
                                ? ctx.outcome_weight[static_cast<std::size_t>(s - 1)]
                                : 0.0;
      treat_kernel = p.treat_decay * (treat_kernel + a_prev);
      outcome_kernel = p.outcome_decay * (outcome_kernel + w_prev);
    }
    double latent = p.beta0 +
                    p.daily_profile[static_cast<std::size_t>(hour_bin(ctx.time_at(s)))] +
                    p.treat_amp * treat_kernel + p.outcome_amp * outcome_kernel;
    if (ctx.signal != nullptr) {
      latent += g_signal(*ctx.signal, ctx.time_at(s), p.alpha, ctx.lag);
    }
    out[static_cast<std::size_t>(s)] = lambda_star(latent);
  }
  return out;
}

IntensityModel::ParamVars IntensityModel::bind(Tape& tape) const {
  const IntensityParams& p = params_;
  ParamVars pv;
  pv.beta0 = tape.leaf(Tensor::scalar(p.beta0));
  pv.profile = tape.leaf(
      Tensor({24}, std::vector<double>(p.daily_profile.begin(), p.daily_profile.end())));
  pv.treat_amp = tape.leaf(Tensor::scalar(p.treat_amp));
  pv.treat_decay = tape.leaf(Tensor::scalar(p.treat_decay));
  pv.outcome_amp = tape.leaf(Tensor::scalar(p.outcome_amp));
  pv.outcome_decay = tape.leaf(Tensor::scalar(p.outcome_decay));
  pv.alpha = tape.leaf(Tensor({static_cast<int>(p.alpha.size())}, p.alpha));
  return pv;
}

Var IntensityModel::lambda_series_var(Tape& tape, const ParamVars& pv,
                                      const IntensityContext& ctx,
                                      const TreatmentSeries& treatments) const {
  const Var zero = tape.constant(Tensor::scalar(0.0));
  Var treat_kernel = zero;
  Var outcome_kernel = zero;
  std::vector<Var> lambdas;
  lambdas.reserve(static_cast<std::size_t>(ctx.steps));
  for (int s = 0; s < ctx.steps; ++s) {
    if (s > 0) {
      const bool a_prev = (s - 1) < static_cast<int>(treatments.a.size()) &&
                          treatments.a[static_cast<std::size_t>(s - 1)];
      const double w_prev = (s - 1) < static_cast<int>(ctx.outcome_weight.size())
                                ? ctx.outcome_weight[static_cast<std::size_t>(s - 1)]
                                : 0.0;
      treat_kernel = tape.mul(pv.treat_decay,
                              a_prev ? tape.add_const(treat_kernel, 1.0) : treat_kernel);
      outcome_kernel = tape.mul(pv.outcome_decay, tape.add_const(outcome_kernel, w_prev));
    }
    Var latent = tape.add(pv.beta0,
                          tape.slice1d(pv.profile, hour_bin(ctx.time_at(s)), 1));
    latent = tape.add(latent, tape.mul(pv.treat_amp, treat_kernel));
    latent = tape.add(latent, tape.mul(pv.outcome_amp, outcome_kernel));
    if (ctx.signal != nullptr) {
      LagSpec spec = ctx.lag;
      spec.w = static_cast<int>(params_.alpha.size());
      const LagFeature f = lag_features(*ctx.signal, ctx.time_at(s), spec);
      Var lagv = tape.constant(Tensor({static_cast<int>(f.values.size())}, f.values));
      latent = tape.add(latent, tape.sum(tape.mul(pv.alpha, lagv)));
    }
    lambdas.push_back(tape.square_clamp01(latent));
  }
  return tape.concat1d(lambdas);
}

TreatmentSeries sample_treatments(const std::vector<double>& lambda, std::uint64_t seed) {
  TreatmentSeries out;
  out.a.resize(lambda.size());
  for (std::size_t s = 0; s < lambda.size(); ++s) {
    if (!(lambda[s] >= 0.0) || !(lambda[s] <= 1.0)) {
      throw ContractError("sample_treatments: lambda out of [0,1] at step " +
                          std::to_string(s));
    }
    out.a[s] = rng::bernoulli(rng::key({seed, 0x54524541ULL, s}), lambda[s]) ? 1 : 0;
  }
  return out;
}

TreatmentSeries sample_treatments(const IntensityModel& model, const IntensityContext& ctx,
                                  std::uint64_t seed) {
  TreatmentSeries out;
  out.a.resize(static_cast<std::size_t>(ctx.steps));
  TreatmentSeries past;
  for (int s = 0; s < ctx.steps; ++s) {
    const double lam = model.lambda_at(s, ctx, past);
    const bool hit = rng::bernoulli(rng::key({seed, 0x54524541ULL,
                                              static_cast<std::uint64_t>(s)}),
                                    lam);
    out.a[static_cast<std::size_t>(s)] = hit ? 1 : 0;
    past.a.push_back(out.a[static_cast<std::size_t>(s)]);
  }
  return out;
}

double bce_intensity(const std::vector<double>& lambda, const TreatmentSeries& a_true) {
  if (lambda.size() != a_true.a.size()) {
    throw ShapeError("bce_intensity: series lengths differ (" +
                     std::to_string(lambda.size()) + " vs " +
                     std::to_string(a_true.a.size()) + ")");
  }
  if (lambda.empty()) throw ShapeError("bce_intensity: empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double p = std::clamp(lambda[i], Tape::kBceEps, 1.0 - Tape::kBceEps);
    const double y = a_true.a[i] ? 1.0 : 0.0;
    s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return s / static_cast<double>(lambda.size());
}

}  // namespace sigcast
