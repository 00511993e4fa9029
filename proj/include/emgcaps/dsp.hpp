#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "emgcaps/session.hpp"

namespace emg::dsp {

// Second-order sections of a digital IIR filter (overall gain folded into
// the first section's numerator).
struct BiquadCascade {
  struct Section {
    double b0, b1, b2;  // numerator
    double a1, a2;      // denominator (a0 == 1)
  };
  std::vector<Section> sections;
  int order = 0;           // analog prototype order
  double low_hz = 0.0;
  double high_hz = 0.0;
  double sample_rate_hz = 0.0;

  // Frequency response at digital frequency f (Hz).
  std::complex<double> response(double f_hz) const;
  double magnitude_db(double f_hz) const;
  bool stable() const;
};

// Digital Butterworth band-pass via analog prototype + band transform +
// bilinear transform with edge prewarping. Band edges land at -3 dB.
BiquadCascade design_butterworth_bandpass(int order, double low_hz, double high_hz,
                                          double sample_rate_hz);

// Causal single pass through the cascade (zero initial conditions).
std::vector<double> filter(const std::vector<double>& x, const BiquadCascade& f);

// Zero-phase forward-backward filtering with odd-reflection edge padding.
// Output length equals input length.
std::vector<double> filtfilt(const std::vector<double>& x, const BiquadCascade& f);

// Contiguous segment of round(duration_s * fs) samples from onset_index.
RecordingSession extract_transient(const RecordingSession& session,
                                   double duration_s, std::size_t onset_index);

// In-place band-pass of every channel of a transient segment.
void bandpass_session(RecordingSession& session, const BiquadCascade& f);

// Per-channel z-score over the segment. Zero-variance channels are zeroed
// and reported back as dead.
std::vector<std::size_t> zscore(RecordingSession& session);

// Elementwise absolute value.
void rectify(RecordingSession& session);

struct WindowParams {
  double window_s = 0.200;
  double step_s = 0.010;
};

// Sliding windows over the 6x6 patch at (row_offset, col_offset) of both
// grids. L = round(window_s*fs), S = round(step_s*fs),
// count = floor((T - L)/S) + 1.
std::vector<WindowSample> slide_windows(const RecordingSession& session,
                                        const WindowParams& params,
                                        int row_offset = 0, int col_offset = 0);

// Full fixed-order chain: transient -> band-pass -> z-score -> rectify.
// Windowing is separate so shift augmentation can extract several patches.
RecordingSession preprocess(const RecordingSession& raw, const BiquadCascade& f,
                            double transient_s = 1.2, std::size_t onset_index = 0);

}  // namespace emg::dsp
