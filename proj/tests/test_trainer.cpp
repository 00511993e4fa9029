#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emgcaps/trainer.hpp"

using namespace emg::train;
using emg::ConfigError;
using emg::NumericError;
using emg::Rng;
using emg::UsageError;
using emg::WindowSample;

namespace {

// Trivially separable toy windows: class k lights up grid cell (k, k),
// with mild noise elsewhere.
std::vector<WindowSample> toy_windows(std::size_t n_classes, std::size_t per_rep,
                                      std::size_t window_len,
                                      const std::vector<int>& reps,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WindowSample> out;
  for (int rep : reps)
    for (std::size_t k = 0; k < n_classes; ++k)
      for (std::size_t i = 0; i < per_rep; ++i) {
        WindowSample w;
        w.window_len = window_len;
        w.data.assign(w.size(), 0.0f);
        w.gesture_label = int(k);
        w.provenance.repetition = rep;
        w.provenance.subject_id = 1;
        for (auto& v : w.data) v = float(0.05 * rng.normal());
        for (std::size_t g = 0; g < emg::kGrids; ++g)
          for (std::size_t t = 0; t < window_len; ++t)
            w.at(g, t, k % emg::kPatchRows, k % emg::kPatchCols) += 1.0f;
        out.push_back(std::move(w));
      }
  return out;
}

emg::models::Cnn3dSpec tiny_cnn_spec(std::size_t time, std::size_t n_classes) {
  emg::models::Cnn3dSpec spec;
  spec.input.time = time;
  spec.head_kernel = {3, 2, 2};
  spec.head_filters = {4};
  spec.tail_kernel = {2, 2, 2};
  spec.tail_filters = 8;
  spec.dense_sizes = {16};
  spec.n_classes = n_classes;
  return spec;
}

}  // namespace

TEST_CASE("split by repetition partitions 3/2 and rejects overlap") {
  auto windows = toy_windows(2, 4, 8, {1, 2, 3, 4, 5}, 3);
  auto split = split_by_repetition(windows, {1, 3, 4}, {2, 5});
  CHECK(split.train.size() == 2 * 4 * 3);
  CHECK(split.test.size() == 2 * 4 * 2);
  for (const auto& s : split.train)
    CHECK((s.provenance.repetition == 1 || s.provenance.repetition == 3 ||
           s.provenance.repetition == 4));
  for (const auto& s : split.test)
    CHECK((s.provenance.repetition == 2 || s.provenance.repetition == 5));

  CHECK_THROWS_AS(split_by_repetition(windows, {1, 2}, {2, 5}), ConfigError);
  CHECK_THROWS_AS(split_by_repetition(windows, {}, {2}), ConfigError);
}

TEST_CASE("training set containing a held-out repetition is rejected") {
  auto windows = toy_windows(2, 2, 8, {1, 2}, 3);
  emg::models::Cnn3d<double> model(tiny_cnn_spec(8, 2), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.test_reps = {2, 5};
  CHECK_THROWS_AS(train(model, windows, cfg), UsageError);
}

TEST_CASE("batch size below 2 is rejected") {
  auto windows = toy_windows(2, 2, 8, {1}, 3);
  emg::models::Cnn3d<double> model(tiny_cnn_spec(8, 2), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train(model, windows, cfg), ConfigError);
}

TEST_CASE("zero epochs leaves the model at its initialization") {
  auto windows = toy_windows(2, 2, 8, {1}, 3);
  emg::models::Cnn3d<double> model(tiny_cnn_spec(8, 2), 7);
  emg::models::Cnn3d<double> fresh(tiny_cnn_spec(8, 2), 7);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto hist = train(model, windows, cfg);
  CHECK(hist.epochs.empty());
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    for (std::size_t j = 0; j < model.parameters()[i].size(); ++j)
      REQUIRE(model.parameters()[i].value()[j] == fresh.parameters()[i].value()[j]);
}

TEST_CASE("cnn reaches near-perfect accuracy on a separable toy set") {
  auto windows = toy_windows(3, 6, 8, {1, 3, 4}, 11);
  emg::models::Cnn3d<double> model(tiny_cnn_spec(8, 3), 1);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 9;
  cfg.learning_rate = 3e-3;
  auto hist = train(model, windows, cfg);
  REQUIRE(hist.epochs.size() == 15);
  CHECK(hist.epochs.back().accuracy >= 0.99);
  CHECK(hist.epochs.back().loss < hist.epochs.front().loss);

  auto held = toy_windows(3, 3, 8, {2, 5}, 99);
  CHECK(evaluate(model, held) >= 0.99);
}

TEST_CASE("capsnet trains on a separable toy set") {
  auto windows = toy_windows(2, 5, 20, {1, 3}, 5);
  auto spec = emg::models::CapsNetSpec::desk_scale(20, 2);
  emg::models::CapsNet<double> model(spec, 1);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 10;
  cfg.learning_rate = 5e-3;
  auto hist = train(model, windows, cfg);
  REQUIRE(hist.epochs.size() == 8);
  CHECK(hist.epochs.back().loss < hist.epochs.front().loss);
  CHECK(hist.epochs.back().accuracy >= 0.9);
}

TEST_CASE("same seed gives bitwise-identical trained parameters") {
  auto windows = toy_windows(2, 4, 8, {1, 3}, 21);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 42;

  emg::models::Cnn3d<double> a(tiny_cnn_spec(8, 2), 5);
  emg::models::Cnn3d<double> b(tiny_cnn_spec(8, 2), 5);
  auto ha = train(a, windows, cfg);
  auto hb = train(b, windows, cfg);
  REQUIRE(ha.epochs.size() == hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i)
    REQUIRE(ha.epochs[i].loss == hb.epochs[i].loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    for (std::size_t j = 0; j < a.parameters()[i].size(); ++j)
      REQUIRE(a.parameters()[i].value()[j] == b.parameters()[i].value()[j]);
}

TEST_CASE("history renders as CSV") {
  History h;
  h.epochs.push_back({0.5, 0.75});
  h.epochs.push_back({0.25, 0.875});
  const std::string csv = h.csv();
  CHECK(csv.substr(0, 20) == "epoch,loss,accuracy\n");
  CHECK(csv.find("1,0.5,0.75\n") != std::string::npos);
  CHECK(csv.find("2,0.25,0.875\n") != std::string::npos);
}
