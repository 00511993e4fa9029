// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Criterion 1 is informational (full-scale table numbers
// need the original 19-subject recordings and multi-hour budgets; the
// criteria below pin the reproducible properties instead).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "emgcaps/augment.hpp"
#include "emgcaps/checkpoint.hpp"
#include "emgcaps/dsp.hpp"
#include "emgcaps/models.hpp"
#include "emgcaps/stats.hpp"
#include "emgcaps/synth.hpp"
#include "emgcaps/trainer.hpp"
#include "oracles.hpp"

using namespace emg;

namespace {

int failures = 0;

void criterion(int number, const std::string& what,
               const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string error;
  try {
    body();
  } catch (const std::exception& e) {
    error = e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (error.empty()) {
    std::printf("PASS criterion %2d: %s (%.1fs)\n", number, what.c_str(), secs);
  } else {
    std::printf("FAIL criterion %2d: %s (%.1fs)\n    %s\n", number, what.c_str(),
                secs, error.c_str());
    ++failures;
  }
  std::fflush(stdout);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

// ---- criterion 5 helper: analytic vs central-difference gradients ----------

void check_grad(const std::function<Tensor<double>(Tensor<double>&)>& build,
                std::vector<double> x0, const Shape& shape, double tol,
                const std::string& what) {
  auto x = Tensor<double>::from(shape, x0, true);
  auto loss = build(x);
  loss.backward();
  const auto analytic = x.grad();
  const auto numeric = oracle::finite_diff(
      [&](const std::vector<double>& v) {
        NoGradGuard ng;
        auto xx = Tensor<double>::from(shape, v);
        return build(xx).item();
      },
      x0);
  const double err = oracle::max_rel_error(analytic, numeric);
  require(err < tol, what + ": gradient error " + std::to_string(err));
}

// ---- criterion 9/11 shared pipeline pieces ---------------------------------

struct DeskData {
  std::vector<WindowSample> train, test;
};

DeskData make_desk_data(std::uint64_t seed) {
  synth::SynthSpec spec;
  spec.sample_rate_hz = 100.0;
  spec.seed = seed;
  auto sessions = synth::generate(spec);
  const auto filt = dsp::design_butterworth_bandpass(4, 10.0, 45.0, 100.0);
  dsp::WindowParams wp{0.2, 0.05};
  std::vector<WindowSample> windows;
  for (const auto& s : sessions) {
    auto clean = dsp::preprocess(s, filt, 1.2);
    auto w = dsp::slide_windows(clean, wp, 1, 1);
    windows.insert(windows.end(), w.begin(), w.end());
  }
  auto split = train::split_by_repetition(windows, {1, 3, 4}, {2, 5});
  return {std::move(split.train), std::move(split.test)};
}

}  // namespace

int main() {
  std::printf(
      "INFO criterion  1: full-scale table reproduction is out of scope "
      "(19 subjects, 65 gestures, multi-hour budgets); the criteria below "
      "pin the reproducible properties\n");

  criterion(2, "ring-proportional mask arithmetic", [] {
    const struct {
      double rate;
      std::array<std::size_t, 3> rings;
      std::size_t total;
    } cases[] = {{0.25, {5, 3, 1}, 9}, {0.50, {10, 6, 2}, 18},
                 {0.75, {15, 9, 3}, 27}};
    for (const auto& cs : cases)
      for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto m = augment::generate_mask(cs.rate, seed);
        require(m.ring_drop_counts == cs.rings,
                "ring counts off at rate " + std::to_string(cs.rate));
        require(m.total_dropped() == cs.total,
                "total off at rate " + std::to_string(cs.rate));
      }
  });

  criterion(3, "seven-fold single-rate expansion", [] {
    std::vector<WindowSample> base(100);
    for (std::size_t i = 0; i < base.size(); ++i) {
      base[i].window_len = 4;
      base[i].data.assign(base[i].size(), float(i));
      base[i].gesture_label = int(i % 8);
    }
    augment::AugmentationPlan plan;
    plan.rates = {0.50};
    plan.masks_per_rate = 6;
    auto set = augment::build_augmented_set(base, plan);
    require(set.samples.size() == 700, "expected 700 samples, got " +
                                           std::to_string(set.samples.size()));
    require(set.masks.size() == 6, "expected 6 masks");
  });

  criterion(4, "nine shifted 6x6 patches vs index-slice oracle", [] {
    const std::size_t t = 5;
    std::vector<double> grid(8 * 8 * t);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = double(i) * 0.25;
    auto patches = augment::extract_shift_patches(grid, t);
    auto shifts = augment::enumerate_shifts();
    require(patches.size() == 9 && shifts.size() == 9, "expected 9 patches");
    std::set<std::vector<double>> distinct(patches.begin(), patches.end());
    require(distinct.size() == 9, "patches are not distinct");
    for (std::size_t s = 0; s < 9; ++s)
      for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 6; ++c)
          for (std::size_t ti = 0; ti < t; ++ti) {
            const double want =
                grid[((r + std::size_t(shifts[s].row)) * 8 + c +
                      std::size_t(shifts[s].col)) *
                         t +
                     ti];
            require(patches[s][(r * 6 + c) * t + ti] == want,
                    "patch mismatch at shift " + std::to_string(s));
          }
  });

  criterion(5, "finite-difference gradients, ops and end-to-end capsnet", [] {
    Rng rng(7);
    auto randv = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.normal() * 0.5;
      return v;
    };

    // individual differentiable ops, scalar-loss probes
    check_grad(
        [](Tensor<double>& x) {
          auto w = Tensor<double>::from({2, 1, 2, 2, 2},
                                        {.1, -.2, .3, .4, -.1, .2, -.3, .1,
                                         .2, .2, -.1, .4, .1, -.2, .3, -.4});
          auto b = Tensor<double>::from({2}, {.05, -.05});
          Conv3dSpec spec{.in_channels = 1, .out_channels = 2, .kernel = {2, 2, 2},
                          .dilation = {2, 1, 1}};
          return sum_all(mul(conv3d(x, w, b, spec), conv3d(x, w, b, spec)));
        },
        randv(1 * 1 * 5 * 3 * 3), {1, 1, 5, 3, 3}, 1e-4, "conv3d");
    check_grad(
        [](Tensor<double>& x) {
          auto w = Tensor<double>::from({3, 2}, {.1, -.2, .3, .4, -.5, .6});
          auto b = Tensor<double>::from({2}, {.01, -.02});
          return softmax_cross_entropy(dense(x, w, b), {1, 0});
        },
        randv(6), {2, 3}, 1e-4, "dense+softmax-cross-entropy");
    check_grad(
        [](Tensor<double>& x) {
          return sum_all(mul(relu(x), softmax(x, 1)));
        },
        randv(8), {2, 4}, 1e-4, "relu+softmax");
    check_grad(
        [](Tensor<double>& x) {
          auto v = squash(x);
          return sum_all(mul(capsule_lengths(v), capsule_lengths(v)));
        },
        randv(2 * 3 * 4), {2, 3, 4}, 1e-4, "squash+lengths");
    check_grad(
        [](Tensor<double>& x) {
          auto reshaped = reshape(x, {1, 3, 2, 2});
          return margin_loss(capsule_lengths(
                                 models::routing_by_agreement(reshaped, 3)),
                             {1});
        },
        randv(12), {12}, 1e-4, "routing+margin-loss");

    // tiny end-to-end capsnet, probing a subset of input coordinates
    models::CapsNetSpec spec = models::CapsNetSpec::desk_scale(20, 3);
    spec.conv_features = {4, 4, 6, 6};
    spec.conv_dropout = 0.0;
    models::CapsNet<double> model(spec, 3);
    const Shape xshape{2, 2, 20, 6, 6};
    const auto x0 = randv(numel(xshape));
    const std::vector<int> labels{0, 2};
    auto eval_loss = [&](const std::vector<double>& v) {
      for (auto& bn : model.bn_states())
        bn = BatchNormState<double>(bn.running_mean.size());
      Rng r(1);
      auto xx = Tensor<double>::from(xshape, v);
      return model.loss(xx, labels, Mode::kTrain, r).item();
    };
    {
      for (auto& bn : model.bn_states())
        bn = BatchNormState<double>(bn.running_mean.size());
      Rng r(1);
      auto xx = Tensor<double>::from(xshape, x0, true);
      auto loss = model.loss(xx, labels, Mode::kTrain, r);
      loss.backward();
      const auto& g = xx.grad();
      Rng pick(5);
      const double eps = 1e-5;
      for (int probe = 0; probe < 30; ++probe) {
        const std::size_t i = pick.below(x0.size());
        auto v = x0;
        v[i] = x0[i] + eps;
        const double up = eval_loss(v);
        v[i] = x0[i] - eps;
        const double dn = eval_loss(v);
        const double fd = (up - dn) / (2 * eps);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
        require(std::abs(fd - g[i]) / denom < 1e-3,
                "end-to-end gradient error at input coordinate " +
                    std::to_string(i));
      }
    }
  });

  criterion(6, "routing and squash invariants vs reference oracle", [] {
    Rng rng(4);
    // squash: norm in (0,1), direction preserved
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> v(5);
      for (auto& x : v) x = rng.normal() * std::pow(10.0, double(trial % 5) - 2);
      auto s = squash(Tensor<double>::from({1, 1, 5}, v));
      double n_in = 0, n_out = 0, dot = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        n_in += v[i] * v[i];
        n_out += s.value()[i] * s.value()[i];
        dot += v[i] * s.value()[i];
      }
      require(n_out < 1.0 && (n_in == 0.0 || n_out > 0.0), "squash norm range");
      require(dot >= 0.0, "squash flipped direction");
    }
    // routing vs step-by-step oracle, <= 4 capsules; couplings row-sums 1
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t in_caps = 1 + rng.below(4), out_caps = 1 + rng.below(4),
                        dim = 2 + rng.below(3);
      std::vector<double> u(in_caps * out_caps * dim);
      for (auto& x : u) x = rng.normal();
      std::vector<std::vector<double>> couplings;
      auto v = models::routing_by_agreement(
          Tensor<double>::from({1, in_caps, out_caps, dim}, u), 3, &couplings);
      require(couplings.size() == 3, "expected couplings per iteration");
      for (const auto& c : couplings)
        for (std::size_t i = 0; i < in_caps; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < out_caps; ++j) row += c[i * out_caps + j];
          require(std::abs(row - 1.0) < 1e-12, "coupling row sum != 1");
        }
      const auto ref = oracle::routing_reference(u, in_caps, out_caps, dim, 3);
      for (std::size_t i = 0; i < ref.size(); ++i)
        require(std::abs(v.value()[i] - ref[i]) < 1e-6,
                "routing disagrees with reference oracle");
    }
  });

  criterion(7, "butterworth band-pass frequency response", [] {
    const auto f = dsp::design_butterworth_bandpass(4, 10.0, 500.0, 2048.0);
    require(f.stable(), "unstable filter");
    require(std::abs(f.magnitude_db(10.0) - (-3.0103)) < 0.5,
            "low edge not at -3 dB");
    require(std::abs(f.magnitude_db(500.0) - (-3.0103)) < 0.5,
            "high edge not at -3 dB");
    require(f.magnitude_db(100.0) - f.magnitude_db(1.0) >= 20.0,
            "less than 20 dB attenuation at 1 Hz");
  });

  criterion(8, "mann-whitney vs exhaustive enumeration; markers; bonferroni", [] {
    Rng rng(31);
    auto u_of = [](const std::vector<double>& a, const std::vector<double>& b) {
      double u = 0;
      for (double x : a)
        for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
      return u;
    };
    for (std::size_t n = 1; n <= 11; ++n)
      for (std::size_t m = 1; n + m <= 12; ++m) {
        std::vector<double> pooled(n + m);
        for (std::size_t i = 0; i < pooled.size(); ++i)
          pooled[i] = double(i) + 0.4 * rng.uniform();
        rng.shuffle(pooled);
        std::vector<double> a(pooled.begin(), pooled.begin() + std::ptrdiff_t(n));
        std::vector<double> b(pooled.begin() + std::ptrdiff_t(n), pooled.end());
        const double u_obs = u_of(a, b);
        std::size_t count = 0, le = 0, ge = 0;
        for (std::size_t mask = 0; mask < (std::size_t(1) << (n + m)); ++mask) {
          if (std::size_t(__builtin_popcountll(mask)) != n) continue;
          std::vector<double> xs, ys;
          for (std::size_t i = 0; i < n + m; ++i)
            (mask >> i & 1 ? xs : ys).push_back(pooled[i]);
          const double u = u_of(xs, ys);
          ++count;
          le += u <= u_obs;
          ge += u >= u_obs;
        }
        const double oracle_p =
            std::min(1.0, 2.0 * double(std::min(le, ge)) / double(count));
        require(std::abs(stats::mann_whitney_u(a, b) - oracle_p) < 1e-12,
                "p mismatch at n=" + std::to_string(n) + " m=" +
                    std::to_string(m));
      }
    const std::pair<double, const char*> bands[] = {
        {0.00005, "****"}, {0.0001, "****"}, {0.0005, "***"}, {0.001, "***"},
        {0.005, "**"},     {0.01, "**"},     {0.03, "*"},     {0.05, "*"},
        {0.2, "ns"}};
    for (const auto& [p, want] : bands)
      require(stats::marker(p) == want, "marker band at p=" + std::to_string(p));
    require(stats::bonferroni(0.5, 4) == 1.0, "bonferroni clamp");
    require(std::abs(stats::bonferroni(0.01, 4) - 0.04) < 1e-15,
            "bonferroni product");
  });

  criterion(9, "desk-scale dropout-robustness trend (trains two capsnets)", [] {
    auto data = make_desk_data(11);

    augment::AugmentationPlan plan;
    plan.rates = {0.10, 0.25, 0.50, 0.75};
    plan.masks_per_rate = 3;
    plan.master_seed = 21;
    auto aug = augment::build_augmented_set(data.train, plan);
    std::vector<std::uint64_t> train_seeds;
    for (const auto& m : aug.masks) train_seeds.push_back(m.seed);

    // similar optimizer-step budgets: the augmented set is 13x larger
    train::TrainConfig tc_base, tc_comb;
    tc_base.epochs = 16;
    tc_comb.epochs = 8;
    for (auto* tc : {&tc_base, &tc_comb}) {
      tc->batch_size = 32;
      tc->learning_rate = 0.01;
      tc->track_accuracy = false;
    }

    const auto spec = models::CapsNetSpec::desk_scale(20, 8);
    models::CapsNet<double> baseline(spec, 1), combined(spec, 1);
    train::train(baseline, data.train, tc_base);
    train::train(combined, aug.samples, tc_comb);

    const std::vector<double> rates{0.0, 0.10, 0.25, 0.50, 0.75};
    std::vector<double> acc_base, acc_comb;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      acc_base.push_back(stats::evaluate_under_dropout(baseline, data.test,
                                                       rates[i], 10, 5000 + i,
                                                       train_seeds, "baseline")
                             .mean());
      acc_comb.push_back(stats::evaluate_under_dropout(combined, data.test,
                                                       rates[i], 10, 5000 + i,
                                                       train_seeds, "combined")
                             .mean());
    }
    std::ostringstream os;
    os << "accuracies baseline/combined:";
    for (std::size_t i = 0; i < rates.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), " %g%%: %.3f/%.3f", rates[i] * 100,
                    acc_base[i], acc_comb[i]);
      os << buf;
    }
    std::printf("     %s\n", os.str().c_str());

    require(acc_base[0] - acc_base[3] >= 0.30,
            "(i) baseline drop at 50% is " +
                std::to_string(acc_base[0] - acc_base[3]) + ", need >= 0.30");
    require(acc_comb[0] - acc_comb[3] <= 0.15,
            "(ii) combined drop at 50% is " +
                std::to_string(acc_comb[0] - acc_comb[3]) + ", need <= 0.15");
    for (std::size_t i = 1; i < rates.size(); ++i)
      require(acc_comb[i] > acc_base[i],
              "(iii) combined does not beat baseline at rate " +
                  std::to_string(rates[i]));
    for (std::size_t i = 1; i < rates.size(); ++i) {
      require(acc_base[i] <= acc_base[i - 1] + 0.03,
              "(iv) baseline not monotone at rate " + std::to_string(rates[i]));
      require(acc_comb[i] <= acc_comb[i - 1] + 0.03,
              "(iv) combined not monotone at rate " + std::to_string(rates[i]));
    }
  });

  criterion(10, "report fidelity on published table values", [] {
    const std::vector<double> rates{0.0, 0.10, 0.25, 0.50, 0.75};
    const std::vector<std::pair<std::string, std::vector<double>>> rows{
        {"0% Augmentation", {0.794, 0.423, 0.204, 0.081, 0.040}},
        {"10% Augmentation", {0.787, 0.733, 0.541, 0.192, 0.062}},
        {"25% Augmentation", {0.763, 0.729, 0.602, 0.251, 0.076}},
        {"50% Augmentation", {0.714, 0.695, 0.655, 0.442, 0.137}},
        {"75% Augmentation", {0.607, 0.565, 0.505, 0.397, 0.244}},
        {"Combined", {0.747, 0.732, 0.698, 0.565, 0.307}}};
    std::vector<stats::AccuracyDistribution> dists;
    for (const auto& [label, values] : rows)
      for (std::size_t j = 0; j < rates.size(); ++j) {
        stats::AccuracyDistribution d;
        d.strategy = label;
        d.rate = rates[j];
        d.values = {values[j]};
        dists.push_back(std::move(d));
      }
    stats::MarkerRow combined_row;
    combined_row.strategy = "Combined";
    for (double p : {1.0, 1.0, 0.0001, 0.00002}) {
      stats::SignificanceCell c;
      c.p_corrected = p;
      c.marker = stats::marker(p);
      combined_row.cells.push_back(c);
    }
    auto rep = stats::render_report(dists, {combined_row}, stats::ReportMeta{});
    require(rep.accuracy_matrix.find("0.794 0.423 0.204 0.081 0.040") !=
                std::string::npos,
            "published accuracy row not reproduced byte-exactly");
    require(rep.marker_matrix.find("ns ns **** ****") != std::string::npos,
            "published marker row not reproduced byte-exactly");
  });

  criterion(11, "bitwise determinism of the full pipeline", [] {
    auto run_once = [](std::string* checkpoint_bytes, std::string* report_text,
                       std::vector<double>* dist_values) {
      auto data = make_desk_data(3);
      // small budget: determinism is about bits, not accuracy
      data.train.resize(128);
      augment::AugmentationPlan plan;
      plan.rates = {0.50};
      plan.masks_per_rate = 2;
      plan.master_seed = 9;
      auto aug = augment::build_augmented_set(data.train, plan);
      std::vector<std::uint64_t> train_seeds;
      for (const auto& m : aug.masks) train_seeds.push_back(m.seed);

      train::TrainConfig tc;
      tc.epochs = 2;
      tc.batch_size = 32;
      tc.learning_rate = 0.01;
      tc.track_accuracy = false;
      models::CapsNet<double> model(models::CapsNetSpec::desk_scale(20, 8), 1);
      train::train(model, aug.samples, tc);

      const auto tmp = std::filesystem::temp_directory_path() /
                       "emgcaps_acceptance_det.ckpt";
      dataio::save_checkpoint(tmp.string(), dataio::checkpoint_of(model));
      *checkpoint_bytes = dataio::read_file(tmp.string());
      std::filesystem::remove(tmp);

      std::vector<stats::AccuracyDistribution> dists;
      for (double rate : {0.0, 0.50}) {
        dists.push_back(stats::evaluate_under_dropout(
            model, data.test, rate, 5, 4242, train_seeds, "combined"));
        for (double v : dists.back().values) dist_values->push_back(v);
      }
      auto rep = stats::render_report(dists, stats::ReportMeta{3, 0});
      *report_text = rep.accuracy_matrix + rep.marker_matrix + rep.raw_csv +
                     rep.plot_csv + rep.summary_json;
    };
    std::string ckpt_a, ckpt_b, rep_a, rep_b;
    std::vector<double> vals_a, vals_b;
    run_once(&ckpt_a, &rep_a, &vals_a);
    run_once(&ckpt_b, &rep_b, &vals_b);
    require(!ckpt_a.empty() && ckpt_a == ckpt_b, "checkpoints differ");
    require(vals_a == vals_b, "accuracy distributions differ");
    require(!rep_a.empty() && rep_a == rep_b, "reports differ");
  });

  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
