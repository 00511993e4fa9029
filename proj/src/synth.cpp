#include "emgcaps/synth.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "emgcaps/rng.hpp"

namespace emg::synth {

std::size_t SynthSpec::samples() const {
  return std::size_t(std::llround(repetition_s * sample_rate_hz));
}

namespace {

std::vector<std::array<double, 2>> default_centers(std::size_t n_classes) {
  // spread over the grid interior on a coarse lattice
  static const std::array<std::array<double, 2>, 12> lattice{{
      {1.5, 1.5}, {1.5, 5.5}, {5.5, 1.5}, {5.5, 5.5},
      {3.5, 3.5}, {1.5, 3.5}, {5.5, 3.5}, {3.5, 1.5},
      {3.5, 5.5}, {2.5, 2.5}, {4.5, 4.5}, {2.5, 4.5},
  }};
  std::vector<std::array<double, 2>> centers;
  for (std::size_t k = 0; k < n_classes; ++k)
    centers.push_back(lattice[k % lattice.size()]);
  return centers;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (spatial_width <= 0.0) throw ConfigError("synth: spatial width must be positive");
  if (noise_level < 0.0) throw ConfigError("synth: noise level must be >= 0");
  const std::size_t window = std::size_t(std::llround(0.2 * sample_rate_hz));
  if (samples() < window)
    throw ConfigError("synth: repetition of " + std::to_string(samples()) +
                      " samples shorter than one 200 ms window");
  auto c = centers.empty() ? default_centers(n_classes) : centers;
  if (c.size() != n_classes)
    throw ConfigError("synth: need one activation center per class");
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j)
      if (c[i] == c[j])
        throw ConfigError("synth: classes " + std::to_string(i) + " and " +
                          std::to_string(j) + " share an activation center");
}

std::vector<RecordingSession> generate(const SynthSpec& spec) {
  spec.validate();
  const auto centers = spec.centers.empty() ? default_centers(spec.n_classes)
                                            : spec.centers;
  const std::size_t t_len = spec.samples();
  const double fs = spec.sample_rate_hz;
  const double pi = std::numbers::pi;

  std::vector<RecordingSession> out;
  Rng master(spec.seed);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    // class-specific oscillatory signature, deterministic across repetitions
    Rng class_rng = master.fork(k + 1);
    // class frequencies sit inside the 10-500 Hz style band at any fs:
    // spaced fractions of Nyquist, jittered per seed
    const double nyq = fs / 2.0;
    const double span = 0.60 / double(spec.n_classes);
    const double f1 = nyq * (0.24 + span * double(k) + 0.01 * class_rng.uniform());
    const double f2 = nyq * (0.28 + span * double(k) + 0.01 * class_rng.uniform());
    const double phase1 = 2.0 * pi * class_rng.uniform();
    const double phase2 = 2.0 * pi * class_rng.uniform();
    std::vector<double> signature(t_len);
    for (std::size_t ti = 0; ti < t_len; ++ti) {
      const double tt = double(ti) / fs;
      signature[ti] = std::sin(2.0 * pi * f1 * tt + phase1) +
                      0.6 * std::sin(2.0 * pi * f2 * tt + phase2);
    }

    for (int rep = 1; rep <= 5; ++rep) {
      RecordingSession s;
      s.subject_id = spec.subject_id;
      s.gesture_label = int(k);
      s.repetition = rep;
      s.sample_rate_hz = fs;
      s.samples = t_len;
      s.data.assign(kChannels * t_len, 0.0);
      Rng rep_rng = master.fork((k + 1) * 100 + std::uint64_t(rep));
      for (std::size_t g = 0; g < kGrids; ++g)
        for (std::size_t r = 0; r < kGridRows; ++r)
          for (std::size_t c = 0; c < kGridCols; ++c) {
            // grid 1 sees the mirrored activation pattern
            const double cr = g == 0 ? centers[k][0] : 7.0 - centers[k][0];
            const double cc = g == 0 ? centers[k][1] : 7.0 - centers[k][1];
            const double d2 = (double(r) - cr) * (double(r) - cr) +
                              (double(c) - cc) * (double(c) - cc);
            const double amp =
                std::exp(-d2 / (2.0 * spec.spatial_width * spec.spatial_width));
            double* ch = s.channel(g, r, c);
            for (std::size_t ti = 0; ti < t_len; ++ti) {
              const double tt = double(ti) / fs;
              const double env = spec.rise_s > 0.0
                                     ? std::min(1.0, tt / spec.rise_s)
                                     : 1.0;
              ch[ti] = amp * env * signature[ti] +
                       spec.noise_level * rep_rng.normal();
            }
          }
      out.push_back(std::move(s));
    }
  }
  return out;
}

double separability_ratio(const std::vector<RecordingSession>& sessions) {
  // channel-RMS map per session
  std::map<int, std::vector<std::vector<double>>> maps;
  for (const auto& s : sessions) {
    std::vector<double> rms(kChannels);
    for (std::size_t c = 0; c < kChannels; ++c) {
      double e = 0.0;
      const double* x = s.data.data() + c * s.samples;
      for (std::size_t ti = 0; ti < s.samples; ++ti) e += x[ti] * x[ti];
      rms[c] = std::sqrt(e / double(s.samples));
    }
    maps[s.gesture_label].push_back(std::move(rms));
  }
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d2);
  };
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (auto it = maps.begin(); it != maps.end(); ++it) {
    const auto& a = it->second;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) {
        intra += dist(a[i], a[j]);
        ++n_intra;
      }
    for (auto jt = std::next(it); jt != maps.end(); ++jt)
      for (const auto& x : a)
        for (const auto& y : jt->second) {
          inter += dist(x, y);
          ++n_inter;
        }
  }
  if (n_intra == 0 || n_inter == 0) return 0.0;
  return (inter / double(n_inter)) / (intra / double(n_intra));
}

}  // namespace emg::synth
