#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

// Counter-based randomness. Every draw is a pure function of a 64-bit key,
// so independent substreams (per post, per step, per bootstrap replicate)
// can be derived by hashing identifiers together instead of sharing
// sequential generator state. Regenerating with the same keys reproduces
// the same draws regardless of evaluation order.

namespace sigcast::rng {

// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix(h ^ mix(v));
}

constexpr std::uint64_t key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x8c8e913f0a3c11d7ULL;
  for (std::uint64_t p : parts) h = combine(h, p);
  return h;
}

// FNV-1a, for deriving keys from identifiers like post ids or stream names.
constexpr std::uint64_t hash_str(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform double in [0, 1): top 53 bits of the mixed key.
constexpr double uniform01(std::uint64_t k) noexcept {
  return static_cast<double>(mix(k) >> 11) * 0x1.0p-53;
}

double normal(std::uint64_t k) noexcept;          // standard normal, Box-Muller
int poisson(std::uint64_t k, double mean);        // inversion; mean must be finite, >= 0
bool bernoulli(std::uint64_t k, double p) noexcept;

// Sequential stream for shuffles and bootstrap draws where a natural
// counter does not exist. Still a pure function of the seed.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) noexcept : state_(mix(seed)) {}
  std::uint64_t next_u64() noexcept {
    state_ = combine(state_, 0x2545f4914f6cdd1dULL);
    return mix(state_);
  }
  double next_uniform01() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  // Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here:
  // n is tiny relative to 2^64, bias is < 2^-40 for n < 2^24.
  std::uint64_t next_below(std::uint64_t n) noexcept { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Deterministic Fisher-Yates (std::shuffle leaves the draw sequence
// implementation-defined, this does not).
template <typename Vec>
void shuffle(Vec& v, Stream& s) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(s.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace sigcast::rng
