#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "emgcaps/rng.hpp"
#include "emgcaps/session.hpp"

namespace emg::augment {

// Concentric rings of the 6x6 patch: perimeter (20), next ring (12),
// center 2x2 (4).
inline constexpr std::array<std::size_t, 3> kRingSizes{20, 12, 4};

int ring_of_cell(std::size_t row, std::size_t col);  // 0 = outer

// 6x6 Boolean dropout mask, true = dropped.
struct DropoutMask {
  std::array<bool, kPatchRows * kPatchCols> cells{};
  double nominal_rate = 0.0;
  std::array<std::size_t, 3> ring_drop_counts{0, 0, 0};
  int mask_id = -1;
  std::uint64_t seed = 0;

  bool dropped(std::size_t row, std::size_t col) const {
    return cells[row * kPatchCols + col];
  }
  std::size_t total_dropped() const;
  bool operator==(const DropoutMask& other) const { return cells == other.cells; }
};

// round(rate * ring_size) with ties rounded up
std::size_t ring_drop_count(double rate, std::size_t ring_size);

// Drop round(rate*size) cells per ring, uniformly at random within the
// ring. Deterministic given the seed.
DropoutMask generate_mask(double rate, std::uint64_t seed);

enum class GridPolicy {
  kShared,       // one mask applied identically to both grids
  kIndependent,  // separate mask per grid (second derived from seed+1)
};

// Zero the masked channels across the whole window, both grids per policy.
// Idempotent; stamps mask_id into provenance.
std::vector<WindowSample> apply_mask(const std::vector<WindowSample>& samples,
                                     const DropoutMask& mask,
                                     GridPolicy policy = GridPolicy::kShared);

struct ShiftOffset {
  int row = 0;
  int col = 0;  // each in [0, 2]
};

// The 9 = (8-6+1)^2 stride-one placements of a 6x6 patch in an 8x8 grid.
std::vector<ShiftOffset> enumerate_shifts();

// Extract all 9 patches from one 8x8xT grid (row-major, t fastest).
std::vector<std::vector<double>> extract_shift_patches(
    const std::vector<double>& grid, std::size_t t);

struct AugmentationPlan {
  std::vector<double> rates;      // e.g. {0.10} or {0.10, 0.25, 0.50, 0.75}
  std::size_t masks_per_rate = 6;
  bool include_clean_duplicate = true;
  std::uint64_t master_seed = 1;
};

struct AugmentedSet {
  std::vector<WindowSample> samples;
  std::vector<DropoutMask> masks;  // every mask used, ids matching provenance
};

// Materialize the augmented training set: per rate, masks_per_rate distinct
// masks each applied to the full base set, plus one clean duplicate when
// requested. Single rate with 6 masks + clean = the seven-fold expansion.
AugmentedSet build_augmented_set(const std::vector<WindowSample>& base,
                                 const AugmentationPlan& plan);

// JSON round-trip: {mask_id, rate, seed, cells: 36 booleans row-major}
std::string mask_to_json(const DropoutMask& mask);
DropoutMask mask_from_json(const std::string& json_text);

}  // namespace emg::augment
