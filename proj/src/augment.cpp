#include "emgcaps/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace emg::augment {

int ring_of_cell(std::size_t row, std::size_t col) {
  const std::size_t d = std::min({row, col, kPatchRows - 1 - row, kPatchCols - 1 - col});
  return int(std::min<std::size_t>(d, 2));
}

std::size_t DropoutMask::total_dropped() const {
  return std::size_t(std::count(cells.begin(), cells.end(), true));
}

std::size_t ring_drop_count(double rate, std::size_t ring_size) {
  // round to nearest, ties up
  return std::size_t(std::floor(rate * double(ring_size) + 0.5));
}

DropoutMask generate_mask(double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("generate_mask: rate must be in [0,1), got " +
                      std::to_string(rate));
  DropoutMask mask;
  mask.nominal_rate = rate;
  mask.seed = seed;
  if (rate == 0.0) return mask;

  std::array<std::vector<std::size_t>, 3> ring_cells;
  for (std::size_t r = 0; r < kPatchRows; ++r)
    for (std::size_t c = 0; c < kPatchCols; ++c)
      ring_cells[ring_of_cell(r, c)].push_back(r * kPatchCols + c);

  Rng rng(seed);
  for (int ring = 0; ring < 3; ++ring) {
    const std::size_t k = ring_drop_count(rate, kRingSizes[ring]);
    mask.ring_drop_counts[ring] = k;
    auto& cells = ring_cells[ring];
    rng.shuffle(cells);
    for (std::size_t i = 0; i < k; ++i) mask.cells[cells[i]] = true;
  }
  return mask;
}

std::vector<WindowSample> apply_mask(const std::vector<WindowSample>& samples,
                                     const DropoutMask& mask, GridPolicy policy) {
  const DropoutMask second =
      policy == GridPolicy::kIndependent
          ? generate_mask(mask.nominal_rate, mask.seed + 1)
          : mask;
  std::vector<WindowSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.data.size() != s.size())
      throw InputError("apply_mask: sample is not a (2,L,6,6) patch");
    WindowSample masked = s;
    masked.provenance.mask_id = mask.mask_id;
    for (std::size_t r = 0; r < kPatchRows; ++r)
      for (std::size_t c = 0; c < kPatchCols; ++c) {
        const bool drop0 = mask.dropped(r, c);
        const bool drop1 = second.dropped(r, c);
        if (!drop0 && !drop1) continue;
        for (std::size_t t = 0; t < masked.window_len; ++t) {
          if (drop0) masked.at(0, t, r, c) = 0.0f;
          if (drop1) masked.at(1, t, r, c) = 0.0f;
        }
      }
    out.push_back(std::move(masked));
  }
  return out;
}

std::vector<ShiftOffset> enumerate_shifts() {
  std::vector<ShiftOffset> offsets;
  for (int r = 0; r <= int(kGridRows - kPatchRows); ++r)
    for (int c = 0; c <= int(kGridCols - kPatchCols); ++c)
      offsets.push_back({r, c});
  return offsets;
}

std::vector<std::vector<double>> extract_shift_patches(
    const std::vector<double>& grid, std::size_t t) {
  if (grid.size() != kGridRows * kGridCols * t)
    throw InputError("extract_shift_patches: expected 8x8xT grid");
  std::vector<std::vector<double>> patches;
  for (const auto& off : enumerate_shifts()) {
    std::vector<double> patch(kPatchRows * kPatchCols * t);
    for (std::size_t r = 0; r < kPatchRows; ++r)
      for (std::size_t c = 0; c < kPatchCols; ++c)
        std::copy_n(grid.begin() + ((off.row + r) * kGridCols + off.col + c) * t, t,
                    patch.begin() + (r * kPatchCols + c) * t);
    patches.push_back(std::move(patch));
  }
  return patches;
}

AugmentedSet build_augmented_set(const std::vector<WindowSample>& base,
                                 const AugmentationPlan& plan) {
  if (plan.masks_per_rate == 0)
    throw ConfigError("build_augmented_set: masks_per_rate must be positive");
  AugmentedSet out;
  int next_id = 0;
  Rng seeder(plan.master_seed);
  for (double rate : plan.rates) {
    if (rate == 0.0) continue;  // the clean duplicate stands in for rate 0
    for (std::size_t m = 0; m < plan.masks_per_rate; ++m) {
      std::uint64_t seed = seeder.next_u64();
      DropoutMask mask = generate_mask(rate, seed);
      // duplicates are regenerated with the next seed
      while (std::any_of(out.masks.begin(), out.masks.end(),
                         [&](const DropoutMask& m2) { return m2 == mask; })) {
        seed += 1;
        mask = generate_mask(rate, seed);
      }
      mask.mask_id = next_id++;
      auto masked = apply_mask(base, mask);
      out.masks.push_back(mask);
      out.samples.insert(out.samples.end(), masked.begin(), masked.end());
    }
  }
  if (plan.include_clean_duplicate || out.samples.empty())
    out.samples.insert(out.samples.end(), base.begin(), base.end());
  return out;
}

std::string mask_to_json(const DropoutMask& mask) {
  nlohmann::json j;
  j["mask_id"] = mask.mask_id;
  j["rate"] = mask.nominal_rate;
  j["seed"] = mask.seed;
  j["cells"] = std::vector<bool>(mask.cells.begin(), mask.cells.end());
  return j.dump();
}

DropoutMask mask_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  DropoutMask mask;
  mask.mask_id = j.at("mask_id").get<int>();
  mask.nominal_rate = j.at("rate").get<double>();
  mask.seed = j.at("seed").get<std::uint64_t>();
  auto cells = j.at("cells").get<std::vector<bool>>();
  if (cells.size() != mask.cells.size())
    throw InputError("mask_from_json: expected 36 cells, got " +
                     std::to_string(cells.size()));
  std::copy(cells.begin(), cells.end(), mask.cells.begin());
  for (std::size_t r = 0; r < kPatchRows; ++r)
    for (std::size_t c = 0; c < kPatchCols; ++c)
      if (mask.dropped(r, c)) ++mask.ring_drop_counts[ring_of_cell(r, c)];
  return mask;
}

}  // namespace emg::augment
