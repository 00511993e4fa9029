#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "emgcaps/session.hpp"

namespace emg::synth {

// Deterministic synthetic HD-sEMG-like generator. Each class drives a
// class-specific oscillatory signature through a spatial Gaussian over the
// grid (so a localized channel cluster carries most of the evidence),
// modulated by a rise-plateau envelope, with independent additive noise
// per repetition.
struct SynthSpec {
  std::size_t n_classes = 8;
  double sample_rate_hz = 200.0;
  double repetition_s = 1.6;  // recording length per repetition
  double rise_s = 0.3;        // envelope rise time
  double spatial_width = 1.3; // Gaussian width in grid units
  double noise_level = 0.25;  // additive noise amplitude
  std::uint64_t seed = 1;
  int subject_id = 1;
  // grid-0 activation centers (row, col); grid 1 uses the mirrored point.
  // Empty = auto-placed, pairwise distinct.
  std::vector<std::array<double, 2>> centers;

  std::size_t samples() const;
  void validate() const;
};

// 5 repetitions per class, canonical RecordingSession layout.
std::vector<RecordingSession> generate(const SynthSpec& spec);

// Mean inter-class distance of spatial RMS maps divided by mean
// intra-class distance; > 1 means classes are separable by construction.
double separability_ratio(const std::vector<RecordingSession>& sessions);

}  // namespace emg::synth
