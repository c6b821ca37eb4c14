#include "sigcast/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sigcast::rng {

double normal(std::uint64_t k) noexcept {
  // Box-Muller on two decorrelated uniforms derived from the same key.
  double u1 = uniform01(combine(k, 0x9d2c5680a1f382c3ULL));
  double u2 = uniform01(combine(k, 0x5851f42d4c957f2dULL));
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int poisson(std::uint64_t k, double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw std::invalid_argument("poisson: mean must be finite and nonnegative");
  }
  if (mean == 0.0) return 0;
  // Inversion by sequential CDF walk; exact and fast for the small
  // per-step means used here. Stable up to mean ~ 700 in double.
  double u = uniform01(k);
  double p = std::exp(-mean);
  double cdf = p;
  int n = 0;
  while (u > cdf) {
    ++n;
    p *= mean / static_cast<double>(n);
    cdf += p;
    if (n > 100000) break;  // unreachable for sane means; guards u ~ 1 roundoff
  }
  return n;
}

bool bernoulli(std::uint64_t k, double p) noexcept {
  return uniform01(k) < p;
}

}  // namespace sigcast::rng
