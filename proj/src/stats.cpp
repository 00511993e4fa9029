#include "emgcaps/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "emgcaps/dataio.hpp"

namespace emg::stats {

namespace {

// midrank-based U statistic of sample a
double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) {
      if (x > y)
        u += 1.0;
      else if (x == y)
        u += 0.5;
    }
  return u;
}

bool has_ties(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  return std::adjacent_find(pooled.begin(), pooled.end()) != pooled.end();
}

// Arrangement counts of the tie-free U distribution via the classic
// recurrence N(u; n, m) = N(u - m; n - 1, m) + N(u; n, m - 1).
std::vector<double> u_distribution(std::size_t n, std::size_t m) {
  std::vector<std::vector<std::vector<double>>> memo(
      n + 1, std::vector<std::vector<double>>(m + 1));
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; j <= m; ++j) {
      auto& row = memo[i][j];
      row.assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        row[0] = 1.0;
        continue;
      }
      for (std::size_t u = 0; u <= i * j; ++u) {
        double v = 0.0;
        if (u >= j && u - j <= (i - 1) * j) v += memo[i - 1][j][u - j];
        if (u <= i * (j - 1)) v += memo[i][j - 1][u];
        row[u] = v;
      }
    }
  return memo[n][m];
}

double normal_sf(double z) {  // P(Z >= z)
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string fmt_rate(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g%%", r * 100.0);
  return buf;
}

}  // namespace

double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                      double* u_a) {
  if (a.empty() || b.empty())
    throw InputError("mann_whitney_u: samples must be non-empty");
  const std::size_t n = a.size(), m = b.size();
  const double u = u_statistic(a, b);
  if (u_a) *u_a = u;

  if (n + m <= 16 && !has_ties(a, b)) {
    const auto f = u_distribution(n, m);
    double total = 0.0, le = 0.0, ge = 0.0;
    const std::size_t ui = std::size_t(std::llround(u));
    for (std::size_t k = 0; k < f.size(); ++k) {
      total += f[k];
      if (k <= ui) le += f[k];
      if (k >= ui) ge += f[k];
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / total);
  }

  // normal approximation with tie correction and continuity correction
  const double nn = double(n), mm = double(m), big_n = nn + mm;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = double(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var =
      nn * mm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) return 1.0;  // all pooled values identical
  const double z = std::max(0.0, std::abs(u - nn * mm / 2.0) - 0.5) /
                   std::sqrt(var);
  return std::min(1.0, 2.0 * normal_sf(z));
}

double bonferroni(double p, std::size_t family_size) {
  return std::min(1.0, double(family_size) * p);
}

std::string marker(double p) {
  if (p <= 0.0001) return "****";
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  return "ns";
}

SignificanceCell significance(const std::vector<double>& a,
                              const std::vector<double>& b,
                              std::size_t family_size) {
  SignificanceCell cell;
  cell.p_raw = mann_whitney_u(a, b);
  cell.p_corrected = bonferroni(cell.p_raw, family_size);
  cell.marker = marker(cell.p_corrected);
  return cell;
}

double AccuracyDistribution::mean() const {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / double(values.size());
}

namespace {

struct Grouped {
  std::vector<std::string> strategies;  // first-seen order
  std::vector<double> rates;            // ascending
  // dist[strategy index][rate index]
  std::vector<std::vector<const AccuracyDistribution*>> at;
};

Grouped group(const std::vector<AccuracyDistribution>& dists) {
  if (dists.empty()) throw InputError("report: no distributions given");
  Grouped g;
  std::set<double> rate_set;
  for (const auto& d : dists) {
    rate_set.insert(d.rate);
    if (std::find(g.strategies.begin(), g.strategies.end(), d.strategy) ==
        g.strategies.end())
      g.strategies.push_back(d.strategy);
  }
  g.rates.assign(rate_set.begin(), rate_set.end());
  g.at.assign(g.strategies.size(),
              std::vector<const AccuracyDistribution*>(g.rates.size(), nullptr));
  for (const auto& d : dists) {
    const std::size_t si = std::size_t(
        std::find(g.strategies.begin(), g.strategies.end(), d.strategy) -
        g.strategies.begin());
    const std::size_t ri = std::size_t(
        std::find(g.rates.begin(), g.rates.end(), d.rate) - g.rates.begin());
    if (g.at[si][ri])
      throw InputError("report: duplicate distribution for strategy \"" +
                       d.strategy + "\" at rate " + std::to_string(d.rate));
    g.at[si][ri] = &d;
  }
  return g;
}

}  // namespace

std::vector<MarkerRow> compute_cells(
    const std::vector<AccuracyDistribution>& distributions,
    std::size_t family_size) {
  const Grouped g = group(distributions);
  std::vector<MarkerRow> rows;
  for (std::size_t si = 0; si < g.strategies.size(); ++si) {
    MarkerRow row;
    row.strategy = g.strategies[si];
    const AccuracyDistribution* ref = nullptr;
    for (std::size_t ri = 0; ri < g.rates.size(); ++ri)
      if (g.rates[ri] == 0.0) ref = g.at[si][ri];
    if (!ref)
      throw InputError("report: strategy \"" + row.strategy +
                       "\" has no 0%-dropout reference distribution");
    for (std::size_t ri = 0; ri < g.rates.size(); ++ri) {
      if (g.rates[ri] == 0.0) continue;
      const auto* d = g.at[si][ri];
      if (!d)
        throw InputError("report: strategy \"" + row.strategy +
                         "\" is missing rate " + std::to_string(g.rates[ri]));
      row.cells.push_back(significance(ref->values, d->values, family_size));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Report render_report(const std::vector<AccuracyDistribution>& distributions,
                     const std::vector<MarkerRow>& cells, const ReportMeta& meta) {
  const Grouped g = group(distributions);
  Report rep;

  // (a) mean-accuracy matrix, text and CSV
  {
    std::ostringstream text, csv;
    csv << "strategy";
    for (double r : g.rates) csv << "," << fmt_rate(r);
    csv << "\r\n";
    for (std::size_t si = 0; si < g.strategies.size(); ++si) {
      text << g.strategies[si] << ":";
      csv << csv_quote(g.strategies[si]);
      for (std::size_t ri = 0; ri < g.rates.size(); ++ri) {
        if (!g.at[si][ri])
          throw InputError("report: strategy \"" + g.strategies[si] +
                           "\" is missing rate " + std::to_string(g.rates[ri]));
        const std::string v = fmt3(g.at[si][ri]->mean());
        text << " " << v;
        csv << "," << v;
      }
      text << "\n";
      csv << "\r\n";
    }
    rep.accuracy_matrix = text.str();
    rep.accuracy_csv = csv.str();
  }

  // (b) significance markers, text and CSV
  {
    std::ostringstream text, csv;
    csv << "strategy";
    for (double r : g.rates)
      if (r != 0.0) csv << "," << fmt_rate(r);
    csv << "\r\n";
    for (const auto& row : cells) {
      text << row.strategy << ":";
      csv << csv_quote(row.strategy);
      for (const auto& c : row.cells) {
        text << " " << c.marker;
        csv << "," << c.marker;
      }
      text << "\n";
      csv << "\r\n";
    }
    rep.marker_matrix = text.str();
    rep.marker_csv = csv.str();
  }

  // (c) raw per-distribution values
  {
    std::ostringstream csv;
    csv << "strategy,rate,index,accuracy\r\n";
    for (const auto& d : distributions)
      for (std::size_t i = 0; i < d.values.size(); ++i)
        csv << csv_quote(d.strategy) << "," << d.rate << "," << i << ","
            << d.values[i] << "\r\n";
    rep.raw_csv = csv.str();
  }

  // (d) plot data: x = dropout rate, one mean series per strategy
  {
    std::ostringstream csv;
    csv << "rate";
    for (const auto& s : g.strategies) csv << "," << csv_quote(s);
    csv << "\r\n";
    for (std::size_t ri = 0; ri < g.rates.size(); ++ri) {
      csv << g.rates[ri];
      for (std::size_t si = 0; si < g.strategies.size(); ++si)
        csv << "," << (g.at[si][ri] ? fmt3(g.at[si][ri]->mean()) : "");
      csv << "\r\n";
    }
    rep.plot_csv = csv.str();
  }

  // JSON summary with full provenance
  {
    nlohmann::json j;
    j["seed"] = meta.seed;
    j["config_hash"] = meta.config_hash;
    j["unit"] = meta.unit;
    j["family_size"] = meta.family_size;
    j["rates"] = g.rates;
    j["strategies"] = g.strategies;
    nlohmann::json jd = nlohmann::json::array();
    for (const auto& d : distributions) {
      nlohmann::json e;
      e["model_id"] = d.model_id;
      e["strategy"] = d.strategy;
      e["rate"] = d.rate;
      e["mean"] = d.mean();
      e["count"] = d.values.size();
      e["mask_seeds"] = d.mask_seeds;
      jd.push_back(e);
    }
    j["distributions"] = jd;
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& row : cells) {
      nlohmann::json e;
      e["strategy"] = row.strategy;
      nlohmann::json cs = nlohmann::json::array();
      for (const auto& c : row.cells)
        cs.push_back({{"p_raw", c.p_raw},
                      {"p_corrected", c.p_corrected},
                      {"marker", c.marker}});
      e["cells"] = cs;
      jc.push_back(e);
    }
    j["significance"] = jc;
    rep.summary_json = j.dump(2);
  }
  return rep;
}

void write_report(const Report& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  dataio::write_file(dir + "/accuracy_matrix.txt", report.accuracy_matrix);
  dataio::write_file(dir + "/accuracy_matrix.csv", report.accuracy_csv);
  dataio::write_file(dir + "/markers.txt", report.marker_matrix);
  dataio::write_file(dir + "/markers.csv", report.marker_csv);
  dataio::write_file(dir + "/raw_values.csv", report.raw_csv);
  dataio::write_file(dir + "/plot_data.csv", report.plot_csv);
  dataio::write_file(dir + "/summary.json", report.summary_json);
}

std::vector<augment::DropoutMask> evaluation_masks(
    double rate, std::size_t n_masks, std::uint64_t seed,
    const std::vector<std::uint64_t>& training_mask_seeds) {
  std::set<std::uint64_t> forbidden(training_mask_seeds.begin(),
                                    training_mask_seeds.end());
  std::vector<augment::DropoutMask> masks;
  Rng master(seed);
  while (masks.size() < n_masks) {
    std::uint64_t s = master.next_u64();
    if (forbidden.count(s))
      throw UsageError(
          "evaluation mask seed " + std::to_string(s) +
          " collides with a training mask seed; train/test mask separation "
          "violated");
    auto mask = augment::generate_mask(rate, s);
    bool dup = false;
    for (const auto& m : masks) dup = dup || m == mask;
    if (dup) continue;  // draw a fresh seed from the master stream
    mask.mask_id = int(masks.size());
    masks.push_back(std::move(mask));
  }
  return masks;
}

}  // namespace emg::stats
