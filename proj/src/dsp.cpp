#include "emgcaps/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace emg::dsp {

using cplx = std::complex<double>;

std::complex<double> BiquadCascade::response(double f_hz) const {
  const double w = 2.0 * std::numbers::pi * f_hz / sample_rate_hz;
  const cplx z1 = std::exp(cplx(0.0, -w));  // z^-1
  const cplx z2 = z1 * z1;
  cplx h(1.0, 0.0);
  for (const auto& s : sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

double BiquadCascade::magnitude_db(double f_hz) const {
  return 20.0 * std::log10(std::abs(response(f_hz)));
}

bool BiquadCascade::stable() const {
  for (const auto& s : sections) {
    // poles of z^2 + a1 z + a2 inside unit circle <=> |a2| < 1 and |a1| < 1 + a2
    if (std::abs(s.a2) >= 1.0 || std::abs(s.a1) >= 1.0 + s.a2) return false;
  }
  return true;
}

BiquadCascade design_butterworth_bandpass(int order, double low_hz, double high_hz,
                                          double sample_rate_hz) {
  if (order < 1) throw ConfigError("butterworth: order must be positive");
  if (!(0.0 < low_hz && low_hz < high_hz && high_hz < sample_rate_hz / 2.0))
    throw ConfigError("butterworth: need 0 < low < high < fs/2, got " +
                      std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                      " at fs " + std::to_string(sample_rate_hz));

  const double pi = std::numbers::pi;
  const double c = 2.0 * sample_rate_hz;  // bilinear constant
  // Prewarp so the digital band edges land exactly on the analog design edges.
  const double w1 = c * std::tan(pi * low_hz / sample_rate_hz);
  const double w2 = c * std::tan(pi * high_hz / sample_rate_hz);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // Analog low-pass prototype poles on the left unit semicircle.
  std::vector<cplx> proto;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * (2.0 * k + order + 1.0) / (2.0 * order);
    proto.emplace_back(std::cos(theta), std::sin(theta));
  }

  // Low-pass -> band-pass: each prototype pole p yields the two roots of
  // s^2 - (bw*p) s + w0^2 = 0.
  std::vector<cplx> analog_poles;
  for (const cplx& p : proto) {
    const cplx bp = bw * p;
    const cplx disc = std::sqrt(bp * bp - 4.0 * w0 * w0);
    analog_poles.push_back((bp + disc) / 2.0);
    analog_poles.push_back((bp - disc) / 2.0);
  }

  // Bilinear transform.
  std::vector<cplx> z_poles;
  for (const cplx& s : analog_poles) z_poles.push_back((c + s) / (c - s));

  // Group into conjugate pairs (the prototype is complex-conjugate
  // symmetric, so every pole has its mate in the list).
  std::vector<cplx> pairs;
  std::vector<bool> used(z_poles.size(), false);
  for (std::size_t i = 0; i < z_poles.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    std::size_t best = i;
    double best_d = 1e300;
    for (std::size_t j = i + 1; j < z_poles.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(z_poles[j] - std::conj(z_poles[i]));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == i) throw NumericError("butterworth: unpaired pole");
    used[best] = true;
    pairs.push_back(z_poles[i]);
  }

  // N zeros at z=+1 and N at z=-1; one of each per biquad gives numerator
  // (1 - z^-2) per section. Gain normalized at the digital center frequency.
  BiquadCascade cascade;
  cascade.order = order;
  cascade.low_hz = low_hz;
  cascade.high_hz = high_hz;
  cascade.sample_rate_hz = sample_rate_hz;
  for (const cplx& p : pairs) {
    BiquadCascade::Section s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    cascade.sections.push_back(s);
  }
  const double f_center =
      sample_rate_hz / pi * std::atan(w0 / c);  // digital image of w0
  const double mag = std::abs(cascade.response(f_center));
  if (!(mag > 0.0) || !std::isfinite(mag))
    throw NumericError("butterworth: degenerate center-frequency response");
  cascade.sections[0].b0 /= mag;
  cascade.sections[0].b1 /= mag;
  cascade.sections[0].b2 /= mag;
  if (!cascade.stable()) throw NumericError("butterworth: unstable section");
  return cascade;
}

namespace {

// Direct form II transposed, zero initial state.
void run_sections(std::vector<double>& x, const BiquadCascade& f) {
  for (const auto& s : f.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace

std::vector<double> filter(const std::vector<double>& x, const BiquadCascade& f) {
  std::vector<double> y = x;
  run_sections(y, f);
  return y;
}

std::vector<double> filtfilt(const std::vector<double>& x, const BiquadCascade& f) {
  const std::size_t min_len = 3 * static_cast<std::size_t>(2 * f.sections.size());
  if (x.size() <= min_len)
    throw InputError("filtfilt: signal length " + std::to_string(x.size()) +
                     " too short for order-" + std::to_string(2 * f.sections.size()) +
                     " filter");
  // The low band edge can sit very close to the unit circle, so transients
  // decay slowly; pad generously when the signal allows it.
  const std::size_t padlen = std::min(x.size() - 1, std::size_t(1024));
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * padlen);
  // odd reflection about the end points
  for (std::size_t i = 0; i < padlen; ++i)
    ext.push_back(2.0 * x.front() - x[padlen - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < padlen; ++i)
    ext.push_back(2.0 * x.back() - x[x.size() - 2 - i]);

  run_sections(ext, f);
  std::reverse(ext.begin(), ext.end());
  run_sections(ext, f);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + padlen, ext.begin() + padlen + x.size());
}

RecordingSession extract_transient(const RecordingSession& session,
                                   double duration_s, std::size_t onset_index) {
  session.validate();
  const std::size_t len =
      static_cast<std::size_t>(std::llround(duration_s * session.sample_rate_hz));
  if (onset_index + len > session.samples)
    throw InputError("extract_transient: onset " + std::to_string(onset_index) +
                     " + length " + std::to_string(len) + " exceeds recording of " +
                     std::to_string(session.samples) + " samples");
  RecordingSession out = session;
  out.samples = len;
  out.data.resize(kChannels * len);
  for (std::size_t ch = 0; ch < kChannels; ++ch)
    std::copy_n(session.data.begin() + ch * session.samples + onset_index, len,
                out.data.begin() + ch * len);
  out.stage = Stage::kTransient;
  return out;
}

void bandpass_session(RecordingSession& session, const BiquadCascade& f) {
  if (session.stage != Stage::kTransient)
    throw UsageError("bandpass_session: expects a transient segment (pipeline order)");
  std::vector<double> ch(session.samples);
#pragma omp parallel for schedule(static) firstprivate(ch)
  for (long long c = 0; c < (long long)kChannels; ++c) {
    ch.assign(session.data.begin() + c * session.samples,
              session.data.begin() + (c + 1) * session.samples);
    auto y = filtfilt(ch, f);
    std::copy(y.begin(), y.end(), session.data.begin() + c * session.samples);
  }
  session.stage = Stage::kFiltered;
}

std::vector<std::size_t> zscore(RecordingSession& session) {
  if (session.stage != Stage::kFiltered)
    throw UsageError("zscore: expects band-passed data (pipeline order)");
  std::vector<std::size_t> dead;
  const std::size_t t = session.samples;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double* x = session.data.data() + c * t;
    double mu = 0.0;
    for (std::size_t i = 0; i < t; ++i) mu += x[i];
    mu /= double(t);
    double var = 0.0;
    for (std::size_t i = 0; i < t; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= double(t);
    if (var <= 0.0) {
      std::fill(x, x + t, 0.0);  // dead channel
      dead.push_back(c);
      continue;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < t; ++i) x[i] = (x[i] - mu) * inv_sd;
  }
  session.stage = Stage::kNormalized;
  return dead;
}

void rectify(RecordingSession& session) {
  if (session.stage != Stage::kNormalized)
    throw UsageError("rectify: expects z-scored data (pipeline order)");
  for (double& v : session.data) v = std::abs(v);
  session.stage = Stage::kRectified;
}

std::vector<WindowSample> slide_windows(const RecordingSession& session,
                                        const WindowParams& params,
                                        int row_offset, int col_offset) {
  if (session.stage != Stage::kRectified)
    throw UsageError("slide_windows: expects rectified data (pipeline order)");
  if (row_offset < 0 || col_offset < 0 ||
      row_offset + kPatchRows > kGridRows || col_offset + kPatchCols > kGridCols)
    throw InputError("slide_windows: 6x6 patch offset out of the 8x8 grid");
  const std::size_t len =
      static_cast<std::size_t>(std::llround(params.window_s * session.sample_rate_hz));
  const std::size_t step =
      static_cast<std::size_t>(std::llround(params.step_s * session.sample_rate_hz));
  if (len == 0 || step == 0)
    throw ConfigError("slide_windows: window/step round to zero samples");
  if (session.samples < len)
    throw InputError("slide_windows: segment of " + std::to_string(session.samples) +
                     " samples shorter than window of " + std::to_string(len));
  const std::size_t count = (session.samples - len) / step + 1;

  std::vector<WindowSample> out(count);
  for (std::size_t wi = 0; wi < count; ++wi) {
    WindowSample& ws = out[wi];
    ws.window_len = len;
    ws.data.resize(kGrids * len * kPatchRows * kPatchCols);
    ws.gesture_label = session.gesture_label;
    ws.provenance.subject_id = session.subject_id;
    ws.provenance.repetition = session.repetition;
    ws.provenance.shift_row = row_offset;
    ws.provenance.shift_col = col_offset;
    const std::size_t start = wi * step;
    for (std::size_t g = 0; g < kGrids; ++g)
      for (std::size_t r = 0; r < kPatchRows; ++r)
        for (std::size_t c = 0; c < kPatchCols; ++c) {
          const double* src =
              session.channel(g, r + row_offset, c + col_offset) + start;
          for (std::size_t t = 0; t < len; ++t)
            ws.at(g, t, r, c) = static_cast<float>(src[t]);
        }
  }
  return out;
}

RecordingSession preprocess(const RecordingSession& raw, const BiquadCascade& f,
                            double transient_s, std::size_t onset_index) {
  RecordingSession s = extract_transient(raw, transient_s, onset_index);
  bandpass_session(s, f);
  zscore(s);
  rectify(s);
  return s;
}

}  // namespace emg::dsp
