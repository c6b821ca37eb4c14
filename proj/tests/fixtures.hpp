#pragma once

// Shared synthetic-data fixtures for the test suites.

#include "sigcast/synthgen.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast::testfix {

inline SignalScenario spiky_scenario(double noise = 2.0, double span_days = 32.0) {
  SignalScenario sc;
  sc.start = 1600000000;
  sc.grid_step = 10 * kMinute;
  sc.n_points = static_cast<std::size_t>(
      static_cast<Duration>(span_days * kDay) / sc.grid_step + 1);
  sc.baseline = 8.0;
  sc.noise_scale = noise;
  sc.seed = 2024;
  // staggered spikes so different posts see different alignments
  const double days[] = {3.0, 6.5, 10.0, 13.25, 17.0, 20.5, 24.0, 27.5};
  const double amps[] = {70.0, 55.0, 85.0, 62.0, 78.0, 58.0, 80.0, 66.0};
  const double widths[] = {1.2, 0.8, 1.5, 0.6, 1.0, 1.4, 0.9, 1.1};
  for (int i = 0; i < 8; ++i) {
    sc.spikes.push_back({static_cast<Duration>(days[i] * kDay), amps[i],
                         static_cast<Duration>(widths[i] * kDay)});
  }
  return sc;
}

inline DatasetConfig toy_config(int n_posts, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.n_posts = n_posts;
  cfg.scenario = spiky_scenario();
  cfg.dgp.mu = 0.4;
  cfg.dgp.eta = 2.5;
  cfg.dgp.phi = 0.3;
  cfg.dgp.kappa = 0.5;
  cfg.dgp.step_len = kHour;
  cfg.window.tau_obs = 2 * kDay;
  cfg.window.dt = kDay;
  cfg.window.horizon = 7 * kDay;
  cfg.dgp.steps =
      static_cast<int>((cfg.window.tau_obs + cfg.window.horizon) / cfg.dgp.step_len);
  cfg.seed = seed;
  cfg.t0_margin = 2 * kDay;
  cfg.t0_spread = 20 * kDay;
  return cfg;
}

}  // namespace sigcast::testfix
