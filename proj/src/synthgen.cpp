#include "sigcast/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "sigcast/rng.hpp"

namespace sigcast {

namespace {

constexpr std::uint64_t kEventTag = 0x4556454eULL;
constexpr std::uint64_t kMarkTag = 0x4d41524bULL;
constexpr std::uint64_t kNoiseTag = 0x4e4f4953ULL;

int draw_mark(std::uint64_t key, const std::array<double, kEngagementDims>& probs) {
  const double u = rng::uniform01(key);
  double cum = 0.0;
  for (int d = 0; d < kEngagementDims; ++d) {
    cum += probs[static_cast<std::size_t>(d)];
    if (u < cum) return d;
  }
  return kEngagementDims - 1;
}

}  // namespace

void DgpParams::validate() const {
  if (!(mu >= 0.0) || !(eta >= 0.0)) throw InvariantError("mu and eta must be nonnegative");
  if (!(phi >= 0.0) || phi >= 1.0) {
    throw SupercriticalError("phi must lie in [0,1); got " + std::to_string(phi));
  }
  if (!(kappa > 0.0) || kappa > 1.0) throw InvariantError("kappa must lie in (0,1]");
  double sum = 0.0;
  for (double m : mark_probs) {
    if (m < 0.0) throw InvariantError("mark probabilities must be nonnegative");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvariantError("mark probabilities must sum to 1");
  if (steps < 1 || step_len <= 0) throw InvariantError("steps and step_len must be positive");
}

SignalTimeline gen_signal(const SignalScenario& scenario) {
  SignalTimeline sig;
  sig.grid_step = scenario.grid_step;
  sig.start = scenario.start;
  sig.values.resize(scenario.n_points);
  for (std::size_t i = 0; i < scenario.n_points; ++i) {
    const Duration offset = static_cast<Duration>(i) * scenario.grid_step;
    double v = scenario.baseline;
    for (const Spike& s : scenario.spikes) {
      if (offset >= s.offset && offset < s.offset + s.width) v += s.amplitude;
    }
    if (scenario.noise_scale > 0.0) {
      v += scenario.noise_scale *
           rng::normal(rng::key({scenario.seed, kNoiseTag, static_cast<std::uint64_t>(i)}));
    }
    sig.values[i] = std::clamp(v, 0.0, 100.0);
  }
  sig.validate();
  return sig;
}

Post gen_cascade(const SignalTimeline& signal, const DgpParams& p, std::uint64_t seed,
                 const CascadeId& id) {
  p.validate();
  Post post;
  post.post_id = id.post_id;
  post.t0 = id.t0;
  post.content_ref = "content/" + id.post_id;
  post.user_ref = id.user_ref;
  post.category = id.category;

  // Simulate per-step counts; a step's events belong to its closing time,
  // so a snapshot at T covers exactly the steps completed by T.
  std::vector<std::array<std::int64_t, kEngagementDims>> cum_by_step(
      static_cast<std::size_t>(p.steps));
  std::array<std::int64_t, kEngagementDims> cum{};
  double excitation = 0.0;  // sum over past events of phi * kappa^(s-u)
  for (int s = 0; s < p.steps; ++s) {
    const Timestamp step_start = id.t0 + static_cast<Duration>(s) * p.step_len;
    // signal value posted at the start of the step drives events within it
    const double g = signal.value_at(step_start, 0.0);
    const double rate = p.mu + p.eta * g / 100.0 + excitation;
    const int n = rng::poisson(rng::key({seed, kEventTag, static_cast<std::uint64_t>(s)}),
                               rate);
    for (int e = 0; e < n; ++e) {
      const int d = draw_mark(rng::key({seed, kMarkTag, static_cast<std::uint64_t>(s),
                                        static_cast<std::uint64_t>(e)}),
                              p.mark_probs);
      ++cum[static_cast<std::size_t>(d)];
    }
    excitation = p.kappa * (excitation + p.phi * static_cast<double>(n));
    cum_by_step[static_cast<std::size_t>(s)] = cum;
  }

  post.history.obs.push_back({id.t0, EngagementVector{}});
  const Timestamp end = id.t0 + static_cast<Duration>(p.steps) * p.step_len;
  for (Timestamp t = id.t0 + id.snapshot_every; t <= end; t += id.snapshot_every) {
    const std::int64_t complete = (t - id.t0) / p.step_len;
    EngagementVector e;
    if (complete >= 1) e.counts = cum_by_step[static_cast<std::size_t>(complete - 1)];
    post.history.obs.push_back({t, e});
  }
  post.validate();
  return post;
}

ExpectedCounts expected_counts(const SignalTimeline& signal, Timestamp t0,
                               const DgpParams& p) {
  if (p.phi >= 1.0) {
    throw SupercriticalError("phi must be < 1 for finite expected cascades");
  }
  ExpectedCounts out;
  out.per_step.resize(static_cast<std::size_t>(p.steps));
  out.cumulative.resize(static_cast<std::size_t>(p.steps));
  double excitation = 0.0;  // sum over past steps of phi * kappa^(s-u) * E[n(u)]
  double running = 0.0;
  for (int s = 0; s < p.steps; ++s) {
    const Timestamp step_start = t0 + static_cast<Duration>(s) * p.step_len;
    const double g = signal.value_at(step_start, 0.0);
    const double e = p.mu + p.eta * g / 100.0 + excitation;
    out.per_step[static_cast<std::size_t>(s)] = e;
    running += e;
    out.cumulative[static_cast<std::size_t>(s)] = running;
    excitation = p.kappa * (excitation + p.phi * e);
  }
  return out;
}

std::array<double, kEngagementDims> true_ate(const SignalTimeline& signal,
                                             const CounterfactualSpec& cf,
                                             const DgpParams& p,
                                             const ObservationWindow& win, Timestamp t0) {
  const CounterfactualSpec anchored = cf.anchored(t0, win);
  const SignalTimeline transformed = apply_cf(signal, anchored);
  const ExpectedCounts base = expected_counts(signal, t0, p);
  const ExpectedCounts alt = expected_counts(transformed, t0, p);
  const std::size_t last = base.cumulative.size() - 1;
  const double delta = alt.cumulative[last] - base.cumulative[last];
  std::array<double, kEngagementDims> out{};
  for (int d = 0; d < kEngagementDims; ++d) {
    out[static_cast<std::size_t>(d)] = delta * p.mark_probs[static_cast<std::size_t>(d)];
  }
  return out;
}

std::vector<Post> Dataset::split(const std::vector<std::size_t>& idx) const {
  std::vector<Post> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(posts[i]);
  return out;
}

double Dataset::source_eta(const std::string& user_ref) const {
  for (const SourceInfo& s : sources)
    if (s.user_ref == user_ref) return s.eta;
  throw ConfigError("unknown source " + user_ref);
}

Dataset make_dataset(const DatasetConfig& cfg) {
  if (cfg.n_posts < 1) throw ConfigError("n_posts must be >= 1");
  cfg.dgp.validate();
  cfg.window.validate();

  Dataset ds;
  ds.signal = gen_signal(cfg.scenario);
  ds.dgp = cfg.dgp;
  ds.window = cfg.window;
  ds.treat_threshold = cfg.treat_threshold;

  const Duration needed = cfg.window.tau_obs + cfg.window.horizon;
  if (cfg.dgp.steps * cfg.dgp.step_len < needed) {
    throw ConfigError("dgp steps do not cover the observation window plus horizon");
  }

  // Per-source signal gains: geometric ladder when spread out, uniform
  // otherwise; post counts shuffled so they carry no gain information.
  std::vector<double> etas;
  std::vector<int> counts;
  const int n_sources = std::max(1, cfg.n_sources);
  if (n_sources == 1) {
    etas.push_back(cfg.dgp.eta);
    counts.push_back(cfg.n_posts);
  } else {
    for (int k = 0; k < n_sources; ++k) {
      const double f = static_cast<double>(k) / (n_sources - 1);
      etas.push_back(cfg.eta_lo * std::pow(cfg.eta_hi / std::max(cfg.eta_lo, 1e-9), f));
    }
    const int base = cfg.n_posts / n_sources;
    int rem = cfg.n_posts % n_sources;
    for (int k = 0; k < n_sources; ++k) counts.push_back(base + (k < rem-- ? 1 : 0));
    // vary counts (+/- up to base/2) and shuffle them independently of eta
    rng::Stream cs(rng::key({cfg.seed, rng::hash_str("source_counts")}));
    int moved = 0;
    for (int k = 0; k < n_sources; ++k) {
      const int max_shift = std::max(0, base / 2);
      if (max_shift == 0) break;
      int shift = static_cast<int>(cs.next_below(static_cast<std::uint64_t>(max_shift) + 1));
      if (counts[static_cast<std::size_t>(k)] - shift >= 1 && moved + shift <= base) {
        counts[static_cast<std::size_t>(k)] -= shift;
        moved += shift;
      }
    }
    counts[0] += moved;  // keep the total fixed
    rng::shuffle(counts, cs);
  }

  for (int k = 0; k < n_sources; ++k) {
    ds.sources.push_back({"src_" + std::to_string(k), etas[static_cast<std::size_t>(k)],
                          counts[static_cast<std::size_t>(k)]});
  }

  const Timestamp first_t0 = ds.signal.start + cfg.t0_margin;
  const Timestamp last_end = ds.signal.end();
  int index = 0;
  for (int k = 0; k < n_sources; ++k) {
    DgpParams dgp = cfg.dgp;
    dgp.eta = etas[static_cast<std::size_t>(k)];
    for (int j = 0; j < counts[static_cast<std::size_t>(k)]; ++j, ++index) {
      const std::uint64_t post_key =
          rng::key({cfg.seed, rng::hash_str("post"), static_cast<std::uint64_t>(index)});
      const Duration offset = static_cast<Duration>(
          rng::uniform01(rng::key({post_key, rng::hash_str("t0")})) *
          static_cast<double>(cfg.t0_spread / kHour)) * kHour;
      CascadeId id;
      id.post_id = "p" + std::to_string(index);
      id.user_ref = "src_" + std::to_string(k);
      id.t0 = first_t0 + offset;
      id.snapshot_every = cfg.snapshot_every;
      if (id.t0 + needed > last_end) {
        throw ConfigError("signal timeline too short for post windows");
      }
      ds.posts.push_back(gen_cascade(ds.signal, dgp, post_key, id));
    }
  }

  // 70/15/15 split by seeded shuffle: floor train, floor val, remainder test.
  std::vector<std::size_t> order(ds.posts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Stream ss(rng::key({cfg.seed, rng::hash_str("split")}));
  rng::shuffle(order, ss);
  const std::size_t n = order.size();
  const std::size_t n_train = static_cast<std::size_t>(0.7 * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(0.15 * static_cast<double>(n));
  ds.train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                    order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                     order.end());
  return ds;
}

std::array<double, kEngagementDims> oracle_ate(const Dataset& ds,
                                               const CounterfactualSpec& cf) {
  std::array<double, kEngagementDims> acc{};
  for (const Post& post : ds.posts) {
    DgpParams dgp = ds.dgp;
    dgp.eta = ds.source_eta(post.user_ref);
    const auto delta = true_ate(ds.signal, cf, dgp, ds.window, post.t0);
    for (int d = 0; d < kEngagementDims; ++d)
      acc[static_cast<std::size_t>(d)] += delta[static_cast<std::size_t>(d)];
  }
  for (double& v : acc) v /= static_cast<double>(ds.posts.size());
  return acc;
}

std::array<double, kEngagementDims> ate_normalization(const Dataset& ds) {
  std::array<double, kEngagementDims> mean{}, var{};
  const auto& idx = ds.train_idx.empty() ? ds.test_idx : ds.train_idx;
  if (idx.empty()) throw ConfigError("ate_normalization needs a nonempty split");
  for (std::size_t i : idx) {
    const Post& p = ds.posts[i];
    const Timestamp horizon_end = p.t0 + ds.window.tau_obs + ds.window.horizon;
    const EngagementVector e = p.history.counts_at(horizon_end);
    for (int d = 0; d < kEngagementDims; ++d)
      mean[static_cast<std::size_t>(d)] += static_cast<double>(e.counts[static_cast<std::size_t>(d)]);
  }
  for (double& m : mean) m /= static_cast<double>(idx.size());
  for (std::size_t i : idx) {
    const Post& p = ds.posts[i];
    const Timestamp horizon_end = p.t0 + ds.window.tau_obs + ds.window.horizon;
    const EngagementVector e = p.history.counts_at(horizon_end);
    for (int d = 0; d < kEngagementDims; ++d) {
      const double diff = static_cast<double>(e.counts[static_cast<std::size_t>(d)]) -
                          mean[static_cast<std::size_t>(d)];
      var[static_cast<std::size_t>(d)] += diff * diff;
    }
  }
  std::array<double, kEngagementDims> out{};
  for (int d = 0; d < kEngagementDims; ++d) {
    out[static_cast<std::size_t>(d)] =
        std::max(std::sqrt(var[static_cast<std::size_t>(d)] / static_cast<double>(idx.size())),
                 1e-9);
  }
  return out;
}

double normalized_ate(const std::array<double, kEngagementDims>& per_metric,
                      const std::array<double, kEngagementDims>& scale) {
  double s = 0.0;
  for (int d = 0; d < kEngagementDims; ++d)
    s += per_metric[static_cast<std::size_t>(d)] / scale[static_cast<std::size_t>(d)];
  return s / kEngagementDims;
}

}  // namespace sigcast
