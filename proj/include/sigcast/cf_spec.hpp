#pragma once

#include <cstdint>
#include <string>

#include "sigcast/timeline.hpp"

namespace sigcast {

// A realized signal transformation: exposure dropout, timing shift, or
// duration change. The transformation acts on the intervention window
// (window_start, window_end], the contiguous post-observation segment;
// everything outside it is preserved.
struct CounterfactualSpec {
  enum class Kind { exposure, timing_shift, duration };

  Kind kind = Kind::exposure;
  double rate = 1.0;             // exposure: fraction of grid values retained
  Duration shift = 0;            // timing: signed seconds, negative = earlier
  Duration duration = 0;         // duration: target elevated-segment length
  std::uint64_t rng_seed = 0;    // exposure dropout stream

  // Anchors, set per post before applying.
  Timestamp window_start = 0;
  Timestamp window_end = 0;

  static CounterfactualSpec exposure(double rate, std::uint64_t rng_seed = 0);
  static CounterfactualSpec timing(Duration shift);
  static CounterfactualSpec duration_of(Duration duration);

  CounterfactualSpec anchored(Timestamp t0, const ObservationWindow& win) const;
  void validate() const;
  std::string label() const;
};

// Apply the transformation. Grid structure and length are always preserved.
SignalTimeline apply_cf(const SignalTimeline& signal, const CounterfactualSpec& spec);

// Length of the elevated segment at the start of the intervention window:
// the run of grid points from the window onset to the last point exceeding
// the pre-onset rest level. Zero when nothing exceeds it.
Duration observed_intervention_duration(const SignalTimeline& signal,
                                        Timestamp window_start, Timestamp window_end);

}  // namespace sigcast
