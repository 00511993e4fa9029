#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emgcaps/tensor.hpp"

namespace emg {

// Preprocessing stage marker; the chain order is fixed and each step
// checks its predecessor ran.
enum class Stage : int {
  kRaw = 0,
  kTransient = 1,
  kFiltered = 2,
  kNormalized = 3,
  kRectified = 4,
};

inline constexpr std::size_t kGrids = 2;
inline constexpr std::size_t kGridRows = 8;
inline constexpr std::size_t kGridCols = 8;
inline constexpr std::size_t kChannels = kGrids * kGridRows * kGridCols;
inline constexpr std::size_t kPatchRows = 6;
inline constexpr std::size_t kPatchCols = 6;

// One subject/gesture/repetition: two 8x8 grids of time series.
// Layout: data[((g*8 + r)*8 + c)*T + t], per-channel contiguous.
struct RecordingSession {
  int subject_id = 0;
  int gesture_label = 0;  // in [0, n_classes)
  int repetition = 1;     // in [1, 5]
  double sample_rate_hz = 2048.0;
  std::size_t samples = 0;  // T
  std::vector<double> data;
  Stage stage = Stage::kRaw;

  double* channel(std::size_t g, std::size_t r, std::size_t c) {
    return data.data() + ((g * kGridRows + r) * kGridCols + c) * samples;
  }
  const double* channel(std::size_t g, std::size_t r, std::size_t c) const {
    return data.data() + ((g * kGridRows + r) * kGridCols + c) * samples;
  }

  void validate() const {
    if (data.size() != kChannels * samples)
      throw InputError("RecordingSession: data size " +
                       std::to_string(data.size()) + " != 128 * T");
    if (repetition < 1 || repetition > 5)
      throw InputError("RecordingSession: repetition out of [1,5]");
  }
};

// Where a training window came from.
struct Provenance {
  int subject_id = 0;
  int repetition = 1;
  int shift_row = 0;
  int shift_col = 0;
  int mask_id = -1;  // -1 = clean (no dropout mask applied)
};

// One model input: (2, L, 6, 6) float tensor plus label and provenance.
struct WindowSample {
  std::size_t window_len = 0;  // L
  std::vector<float> data;     // row-major (2, L, 6, 6)
  int gesture_label = 0;
  Provenance provenance;

  std::size_t size() const { return kGrids * window_len * kPatchRows * kPatchCols; }
  float& at(std::size_t g, std::size_t t, std::size_t r, std::size_t c) {
    return data[((g * window_len + t) * kPatchRows + r) * kPatchCols + c];
  }
  float at(std::size_t g, std::size_t t, std::size_t r, std::size_t c) const {
    return data[((g * window_len + t) * kPatchRows + r) * kPatchCols + c];
  }
};

}  // namespace emg
