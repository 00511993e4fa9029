#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emgcaps/augment.hpp"
#include "emgcaps/session.hpp"
#include "emgcaps/trainer.hpp"

namespace emg::stats {

// Two-sided Mann-Whitney-Wilcoxon p-value. Exact enumeration for tie-free
// pooled samples of size <= 16; otherwise normal approximation with tie and
// continuity corrections. When `u_a` is given the U statistic of `a` is
// copied out.
double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                      double* u_a = nullptr);

// p' = min(1, m * p)
double bonferroni(double p, std::size_t family_size);

// Bands over corrected p, closed on the significant side:
// **** <= 0.0001 < *** <= 0.001 < ** <= 0.01 < * <= 0.05 < ns
std::string marker(double p);

struct SignificanceCell {
  double p_raw = 1.0;
  double p_corrected = 1.0;
  std::string marker = "ns";
};

SignificanceCell significance(const std::vector<double>& a,
                              const std::vector<double>& b,
                              std::size_t family_size);

// One accuracy distribution: a model/strategy evaluated at one test
// dropout rate, one value per (subject, mask) unit.
struct AccuracyDistribution {
  std::string model_id;
  std::string strategy;
  double rate = 0.0;
  std::vector<double> values;
  std::vector<std::uint64_t> mask_seeds;

  double mean() const;
};

struct MarkerRow {
  std::string strategy;
  std::vector<SignificanceCell> cells;  // one per nonzero rate, ascending
};

// Compare each strategy's nonzero-rate distributions against its own
// 0%-dropout distribution.
std::vector<MarkerRow> compute_cells(
    const std::vector<AccuracyDistribution>& distributions,
    std::size_t family_size);

struct ReportMeta {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string unit = "subject x mask";
  std::size_t family_size = 4;
};

struct Report {
  std::string accuracy_matrix;  // aligned text, one strategy per row
  std::string accuracy_csv;     // same means, RFC-4180
  std::string marker_matrix;    // text marker rows
  std::string marker_csv;
  std::string raw_csv;          // every distribution value with provenance
  std::string plot_csv;         // x = rate, one series per strategy
  std::string summary_json;
};

Report render_report(const std::vector<AccuracyDistribution>& distributions,
                     const std::vector<MarkerRow>& cells, const ReportMeta& meta);

inline Report render_report(const std::vector<AccuracyDistribution>& distributions,
                            const ReportMeta& meta) {
  return render_report(distributions, compute_cells(distributions, meta.family_size),
                       meta);
}

void write_report(const Report& report, const std::string& dir);

// Derive the n pairwise-distinct evaluation mask seeds for one rate. Every
// seed is checked against the training-mask seed list; a collision violates
// the train/test mask separation protocol.
std::vector<augment::DropoutMask> evaluation_masks(
    double rate, std::size_t n_masks, std::uint64_t seed,
    const std::vector<std::uint64_t>& training_mask_seeds);

// Accuracy distribution of `model` on `test_set` at one dropout rate:
// per-subject accuracy at rate 0, per subject x mask otherwise.
template <class Model>
AccuracyDistribution evaluate_under_dropout(
    Model& model, const std::vector<WindowSample>& test_set, double rate,
    std::size_t n_masks, std::uint64_t seed,
    const std::vector<std::uint64_t>& training_mask_seeds,
    const std::string& strategy = "model") {
  if (test_set.empty()) throw UsageError("evaluate_under_dropout: empty test set");
  std::map<int, std::vector<WindowSample>> by_subject;
  for (const auto& s : test_set) by_subject[s.provenance.subject_id].push_back(s);

  AccuracyDistribution dist;
  dist.strategy = strategy;
  dist.rate = rate;
  if (rate == 0.0) {
    for (auto& [subject, windows] : by_subject)
      dist.values.push_back(train::evaluate(model, windows));
    return dist;
  }
  const auto masks = evaluation_masks(rate, n_masks, seed, training_mask_seeds);
  for (const auto& mask : masks) {
    dist.mask_seeds.push_back(mask.seed);
    for (auto& [subject, windows] : by_subject) {
      auto masked = augment::apply_mask(windows, mask);
      dist.values.push_back(train::evaluate(model, masked));
    }
  }
  return dist;
}

}  // namespace emg::stats
