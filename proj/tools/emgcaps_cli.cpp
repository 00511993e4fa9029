// Pipeline driver: synth -> preprocess -> augment -> train -> eval/report.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emgcaps/augment.hpp"
#include "emgcaps/checkpoint.hpp"
#include "emgcaps/dataio.hpp"
#include "emgcaps/dsp.hpp"
#include "emgcaps/models.hpp"
#include "emgcaps/stats.hpp"
#include "emgcaps/synth.hpp"
#include "emgcaps/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emg;

namespace {

constexpr const char* kAppVersion = "1.0.0";

// Relative outputs land under $EMGCAPS_OUT when set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("EMGCAPS_OUT");
  if (!root || path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const dataio::Config& cfg, const json& extra = json::object()) {
  json m;
  m["command"] = command;
  m["config_hash"] = cfg.hash();
  m["config"] = json::parse(cfg.canonical_json());
  m["seed"] = cfg.seed;
  m["versions"] = {{"app", kAppVersion}, {"format", dataio::kFormatVersion}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  fs::path p(out_path);
  const std::string manifest_path =
      fs::is_directory(p) || !p.has_extension()
          ? (p / "manifest.json").string()
          : (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
  if (!fs::path(manifest_path).parent_path().empty())
    fs::create_directories(fs::path(manifest_path).parent_path());
  dataio::write_file(manifest_path, m.dump(2));
}

dataio::Config load_cfg(const std::string& config_path, std::uint64_t* seed_override) {
  dataio::Config cfg =
      config_path.empty() ? dataio::Config{} : dataio::load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}

std::string rec_base(const std::string& dir, const RecordingSession& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "rec_s%02d_g%02d_r%d", s.subject_id,
                s.gesture_label, s.repetition);
  return (fs::path(dir) / buf).string();
}

std::vector<RecordingSession> import_dir(const std::string& dir) {
  std::vector<std::string> bases;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto p = e.path();
    if (p.extension() == ".json" && p.stem().string().rfind("rec_", 0) == 0)
      bases.push_back((p.parent_path() / p.stem()).string());
  }
  if (bases.empty())
    throw InputError("no rec_*.json recordings found in " + dir);
  std::sort(bases.begin(), bases.end());
  std::vector<RecordingSession> sessions;
  for (const auto& b : bases) sessions.push_back(dataio::import_recording(b));
  return sessions;
}

std::vector<WindowSample> preprocess_all(const std::vector<RecordingSession>& raw,
                                         const dataio::Config& cfg,
                                         bool all_shifts) {
  const auto filt = dsp::design_butterworth_bandpass(
      cfg.bandpass_order, cfg.bandpass_low_hz, cfg.bandpass_high_hz,
      cfg.sample_rate_hz);
  dsp::WindowParams wp{cfg.window_s, cfg.step_s};
  std::vector<WindowSample> windows;
  for (const auto& session : raw) {
    auto clean = dsp::preprocess(session, filt, cfg.transient_s);
    if (all_shifts) {
      for (const auto& off : augment::enumerate_shifts()) {
        auto w = dsp::slide_windows(clean, wp, off.row, off.col);
        windows.insert(windows.end(), w.begin(), w.end());
      }
    } else {
      // centered patch
      auto w = dsp::slide_windows(clean, wp, 1, 1);
      windows.insert(windows.end(), w.begin(), w.end());
    }
  }
  return windows;
}

models::Cnn3dSpec cnn_spec_for(std::size_t window_len, std::size_t n_classes) {
  if (window_len >= 410) {
    auto spec = models::Cnn3dSpec::paper();
    spec.input.time = window_len;
    spec.n_classes = n_classes;
    return spec;
  }
  models::Cnn3dSpec spec;
  spec.input.time = window_len;
  spec.head_kernel = {7, 2, 2};
  spec.head_filters = {8, 16};
  spec.tail_kernel = {4, 2, 2};
  spec.tail_filters = 32;
  spec.dense_sizes = {64};
  spec.n_classes = n_classes;
  return spec;
}

models::CapsNetSpec caps_spec_for(std::size_t window_len, std::size_t n_classes) {
  if (window_len >= 410) {
    auto spec = models::CapsNetSpec::paper();
    spec.input.time = window_len;
    spec.n_classes = n_classes;
    return spec;
  }
  return models::CapsNetSpec::desk_scale(window_len, n_classes);
}

std::size_t window_len_of(const std::vector<WindowSample>& samples) {
  if (samples.empty()) throw InputError("window dataset is empty");
  return samples[0].window_len;
}

train::TrainConfig train_cfg_of(const dataio::Config& cfg) {
  train::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = cfg.seed;
  return tc;
}

// train + checkpoint for either architecture
void run_training(const dataio::Config& cfg,
                  const std::vector<WindowSample>& train_set,
                  const std::string& ckpt_path, const std::string& history_path) {
  const std::size_t l = window_len_of(train_set);
  const auto tc = train_cfg_of(cfg);
  train::History hist;
  if (cfg.model == "capsnet") {
    models::CapsNet<double> model(caps_spec_for(l, cfg.n_classes), cfg.seed);
    hist = train::train(model, train_set, tc);
    dataio::save_checkpoint(ckpt_path, dataio::checkpoint_of(model));
  } else {
    models::Cnn3d<double> model(cnn_spec_for(l, cfg.n_classes), cfg.seed);
    hist = train::train(model, train_set, tc);
    dataio::save_checkpoint(ckpt_path, dataio::checkpoint_of(model));
  }
  if (!history_path.empty()) dataio::write_file(history_path, hist.csv());
  if (!hist.epochs.empty())
    std::cout << "final train loss " << hist.epochs.back().loss << ", accuracy "
              << hist.epochs.back().accuracy << "\n";
}

double as_rate(double r) { return r > 1.0 ? r / 100.0 : r; }

json dist_to_json(const stats::AccuracyDistribution& d) {
  return {{"model_id", d.model_id}, {"strategy", d.strategy},   {"rate", d.rate},
          {"values", d.values},     {"mask_seeds", d.mask_seeds}};
}

stats::AccuracyDistribution dist_from_json(const json& j) {
  stats::AccuracyDistribution d;
  d.model_id = j.value("model_id", "");
  d.strategy = j.at("strategy").get<std::string>();
  d.rate = j.at("rate").get<double>();
  d.values = j.at("values").get<std::vector<double>>();
  if (j.contains("mask_seeds"))
    d.mask_seeds = j["mask_seeds"].get<std::vector<std::uint64_t>>();
  return d;
}

int run_selftest() {
  // fast cross-module sanity sweep; the full suites live in the test binaries
  auto check = [](bool ok, const std::string& what) {
    std::cout << (ok ? "ok" : "FAIL") << ": " << what << "\n";
    if (!ok) throw NumericError("selftest failed: " + what);
  };

  auto m50 = augment::generate_mask(0.50, 7);
  check(m50.total_dropped() == 18 && m50.ring_drop_counts == std::array<std::size_t, 3>{10, 6, 2},
        "mask arithmetic at 50%");
  check(augment::enumerate_shifts().size() == 9, "nine electrode shifts");

  const double p = stats::mann_whitney_u({1, 2, 3}, {4, 5, 6});
  check(std::abs(p - 0.1) < 1e-12, "exact Mann-Whitney p = 0.1");

  auto filt = dsp::design_butterworth_bandpass(4, 10, 500, 2048);
  check(std::abs(filt.magnitude_db(10) + 3.0103) < 0.5 &&
            std::abs(filt.magnitude_db(500) + 3.0103) < 0.5,
        "band edges at -3 dB");

  // finite-difference check on a tiny dense layer
  Rng rng(1);
  auto w = Tensor<double>::from({3, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6}, true);
  auto b = Tensor<double>::from({2}, {0.05, -0.05}, true);
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, -1, 0.5, 2});
  auto loss = softmax_cross_entropy(dense(x, w, b), {0, 1});
  loss.backward();
  const double eps = 1e-6;
  bool grads_ok = true;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w.value()[i];
    w.value()[i] = saved + eps;
    const double up = softmax_cross_entropy(dense(x, w, b), {0, 1}).item();
    w.value()[i] = saved - eps;
    const double dn = softmax_cross_entropy(dense(x, w, b), {0, 1}).item();
    w.value()[i] = saved;
    const double fd = (up - dn) / (2 * eps);
    grads_ok = grads_ok && std::abs(fd - w.grad()[i]) < 1e-6;
  }
  check(grads_ok, "dense-layer gradients vs finite differences");

  std::cout << "selftest passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HD-sEMG gesture decoding pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kAppVersion);

  std::string config_path, in_path, out_path, ckpt_path, history_path,
      masks_out, strategy = "model", train_seeds_path;
  std::uint64_t seed = 0;
  bool have_seed = false, all_shifts = false;
  std::vector<double> rates;
  std::size_t n_masks = 30;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { have_seed = true; });
  };

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(c_synth);
  c_synth->add_option("--out", out_path, "output directory")->required();

  auto* c_import = app.add_subcommand("import", "validate a recording directory");
  add_common(c_import);
  c_import->add_option("--in", in_path, "recording directory")->required();

  auto* c_pre = app.add_subcommand("preprocess", "filter, normalize, window");
  add_common(c_pre);
  c_pre->add_option("--in", in_path, "recording directory")->required();
  c_pre->add_option("--out", out_path, "window dataset file")->required();
  c_pre->add_flag("--all-shifts", all_shifts, "extract all 9 shifted patches");

  auto* c_aug = app.add_subcommand("augment", "apply dropout-mask augmentation");
  add_common(c_aug);
  c_aug->add_option("--in", in_path, "window dataset file")->required();
  c_aug->add_option("--out", out_path, "augmented window dataset file")->required();
  c_aug->add_option("--masks-out", masks_out, "mask JSON output file");

  auto* c_train = app.add_subcommand("train", "train a model");
  add_common(c_train);
  c_train->add_option("--in", in_path, "window dataset file")->required();
  c_train->add_option("--out", ckpt_path, "checkpoint output file")->required();
  c_train->add_option("--history", history_path, "per-epoch CSV output");

  auto* c_eval = app.add_subcommand("eval", "masked evaluation + report");
  add_common(c_eval);
  c_eval->add_option("--in", in_path, "window dataset file (test windows)")
      ->required();
  c_eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  c_eval->add_option("--out", out_path, "report directory")->required();
  c_eval->add_option("--rates", rates, "dropout rates (fractions or percent)")
      ->delimiter(',');
  c_eval->add_option("--masks", n_masks, "evaluation masks per rate");
  c_eval->add_option("--strategy", strategy, "row label for the report");
  c_eval->add_option("--train-mask-seeds", train_seeds_path,
                     "JSON list of training mask seeds (collision check)");

  auto* c_rep = app.add_subcommand("report", "re-render a report");
  add_common(c_rep);
  c_rep->add_option("--in", in_path, "distributions JSON file")->required();
  c_rep->add_option("--out", out_path, "report directory")->required();

  auto* c_self = app.add_subcommand("selftest", "run built-in sanity checks");
  add_common(c_self);

  try {
    app.parse(argc, argv);
    out_path = resolve_out(out_path);
    auto cfg = load_cfg(config_path, have_seed ? &seed : nullptr);

    if (c_synth->parsed()) {
      synth::SynthSpec spec;
      spec.n_classes = cfg.n_classes;
      spec.sample_rate_hz = cfg.sample_rate_hz;
      spec.seed = cfg.seed;
      auto sessions = synth::generate(spec);
      fs::create_directories(out_path);
      for (const auto& s : sessions)
        dataio::export_recording(s, rec_base(out_path, s));
      write_manifest(out_path, "synth",
                     cfg, {{"recordings", sessions.size()},
                           {"separability", synth::separability_ratio(sessions)}});
      std::cout << "wrote " << sessions.size() << " recordings to " << out_path
                << "\n";
    } else if (c_import->parsed()) {
      auto sessions = import_dir(in_path);
      std::cout << "validated " << sessions.size() << " recordings\n";
    } else if (c_pre->parsed()) {
      auto sessions = import_dir(in_path);
      auto windows = preprocess_all(sessions, cfg, all_shifts);
      dataio::export_windows(windows, out_path, cfg.hash());
      write_manifest(out_path, "preprocess",
                     cfg, {{"windows", windows.size()},
                           {"window_len", window_len_of(windows)},
                           {"all_shifts", all_shifts}});
      std::cout << "wrote " << windows.size() << " windows to " << out_path << "\n";
    } else if (c_aug->parsed()) {
      auto base = dataio::import_windows(in_path);
      augment::AugmentationPlan plan;
      plan.rates = cfg.augment_rates;
      plan.masks_per_rate = cfg.masks_per_rate;
      plan.master_seed = cfg.seed;
      auto set = augment::build_augmented_set(base.samples, plan);
      dataio::export_windows(set.samples, out_path, cfg.hash());
      json seeds = json::array(), masks = json::array();
      for (const auto& m : set.masks) {
        seeds.push_back(m.seed);
        masks.push_back(json::parse(augment::mask_to_json(m)));
      }
      if (!masks_out.empty())
        dataio::write_file(resolve_out(masks_out), masks.dump(2));
      write_manifest(out_path, "augment",
                     cfg, {{"base_windows", base.samples.size()},
                           {"augmented_windows", set.samples.size()},
                           {"mask_seeds", seeds}});
      std::cout << "expanded " << base.samples.size() << " -> "
                << set.samples.size() << " windows\n";
    } else if (c_train->parsed()) {
      ckpt_path = resolve_out(ckpt_path);
      auto data = dataio::import_windows(in_path);
      train::TrainConfig tc = train_cfg_of(cfg);
      auto split = train::split_by_repetition(data.samples, tc.train_reps,
                                              tc.test_reps);
      run_training(cfg, split.train, ckpt_path,
                   history_path.empty() ? "" : resolve_out(history_path));
      write_manifest(ckpt_path, "train",
                     cfg, {{"train_windows", split.train.size()},
                           {"test_windows", split.test.size()},
                           {"input_hash", data.config_hash}});
      std::cout << "checkpoint written to " << ckpt_path << "\n";
    } else if (c_eval->parsed()) {
      auto data = dataio::import_windows(in_path);
      train::TrainConfig tc = train_cfg_of(cfg);
      auto split = train::split_by_repetition(data.samples, tc.train_reps,
                                              tc.test_reps);
      if (split.test.empty()) throw InputError("no test windows in " + in_path);
      const std::size_t l = window_len_of(split.test);
      std::vector<double> use_rates;
      for (double r : rates.empty() ? cfg.eval_rates : rates)
        use_rates.push_back(as_rate(r));
      std::vector<std::uint64_t> train_seeds;
      if (!train_seeds_path.empty())
        train_seeds = json::parse(dataio::read_file(train_seeds_path))
                          .get<std::vector<std::uint64_t>>();

      std::vector<stats::AccuracyDistribution> dists;
      auto eval_model = [&](auto& model) {
        for (std::size_t i = 0; i < use_rates.size(); ++i)
          dists.push_back(stats::evaluate_under_dropout(
              model, split.test, use_rates[i], n_masks, cfg.seed + 1000 + i,
              train_seeds, strategy));
      };
      auto ckpt = dataio::load_checkpoint(resolve_out(ckpt_path));
      if (cfg.model == "capsnet") {
        models::CapsNet<double> model(caps_spec_for(l, cfg.n_classes), cfg.seed);
        dataio::restore_model(model, ckpt);
        eval_model(model);
      } else {
        models::Cnn3d<double> model(cnn_spec_for(l, cfg.n_classes), cfg.seed);
        dataio::restore_model(model, ckpt);
        eval_model(model);
      }
      stats::ReportMeta meta{cfg.seed, cfg.hash()};
      auto report = stats::render_report(dists, meta);
      stats::write_report(report, out_path);
      json jd = json::array();
      for (const auto& d : dists) jd.push_back(dist_to_json(d));
      dataio::write_file((fs::path(out_path) / "distributions.json").string(),
                         jd.dump(2));
      write_manifest(out_path, "eval",
                     cfg, {{"masks", n_masks}, {"rates", use_rates},
                           {"strategy", strategy}});
      std::cout << report.accuracy_matrix;
    } else if (c_rep->parsed()) {
      json jd = json::parse(dataio::read_file(in_path));
      std::vector<stats::AccuracyDistribution> dists;
      for (const auto& e : jd) dists.push_back(dist_from_json(e));
      stats::ReportMeta meta{cfg.seed, cfg.hash()};
      stats::write_report(stats::render_report(dists, meta), out_path);
      write_manifest(out_path, "report", cfg, {{"distributions", dists.size()}});
      std::cout << "report written to " << out_path << "\n";
    } else if (c_self->parsed()) {
      return run_selftest();
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
