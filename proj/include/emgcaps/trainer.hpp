#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "emgcaps/adam.hpp"
#include "emgcaps/models.hpp"
#include "emgcaps/session.hpp"
#include "emgcaps/tensor.hpp"

namespace emg::train {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  std::vector<int> train_reps{1, 3, 4};
  std::vector<int> test_reps{2, 5};
  bool track_accuracy = true;  // per-epoch full-pass accuracy in the history
};

struct Split {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
};

// Repetition-wise split; train and test repetition sets must be disjoint.
inline Split split_by_repetition(const std::vector<WindowSample>& samples,
                                 const std::vector<int>& train_reps,
                                 const std::vector<int>& test_reps) {
  std::set<int> tr(train_reps.begin(), train_reps.end());
  std::set<int> te(test_reps.begin(), test_reps.end());
  if (tr.empty() || te.empty())
    throw ConfigError("split: repetition sets must be non-empty");
  for (int r : tr)
    if (te.count(r))
      throw ConfigError("split: repetition " + std::to_string(r) +
                        " appears in both train and test sets");
  Split split;
  for (const auto& s : samples) {
    if (tr.count(s.provenance.repetition))
      split.train.push_back(s);
    else if (te.count(s.provenance.repetition))
      split.test.push_back(s);
  }
  return split;
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;

  std::string csv() const {
    std::ostringstream os;
    os << "epoch,loss,accuracy\n";
    for (std::size_t i = 0; i < epochs.size(); ++i)
      os << (i + 1) << "," << epochs[i].loss << "," << epochs[i].accuracy << "\n";
    return os.str();
  }
};

namespace detail {

template <class T>
Tensor<T> batch_tensor(const std::vector<WindowSample>& samples,
                       const std::vector<std::size_t>& idx, std::size_t begin,
                       std::size_t end, std::vector<int>* labels) {
  const std::size_t n = end - begin;
  const std::size_t l = samples[idx[begin]].window_len;
  std::vector<T> data;
  data.reserve(n * samples[idx[begin]].size());
  if (labels) labels->clear();
  for (std::size_t i = begin; i < end; ++i) {
    const auto& s = samples[idx[i]];
    if (s.window_len != l)
      throw InputError("batch: mixed window lengths " + std::to_string(l) +
                       " and " + std::to_string(s.window_len));
    for (float v : s.data) data.push_back(T(v));
    if (labels) labels->push_back(s.gesture_label);
  }
  return Tensor<T>::from({n, kGrids, l, kPatchRows, kPatchCols}, std::move(data));
}

template <class T>
Tensor<T> model_loss(models::Cnn3d<T>& m, const Tensor<T>& x,
                     const std::vector<int>& labels, Mode, Rng&) {
  return m.loss(x, labels);
}

template <class T>
Tensor<T> model_loss(models::CapsNet<T>& m, const Tensor<T>& x,
                     const std::vector<int>& labels, Mode mode, Rng& rng) {
  return m.loss(x, labels, mode, rng);
}

template <class T>
Tensor<T> model_forward(models::Cnn3d<T>& m, const Tensor<T>& x, Mode, Rng&) {
  return m.forward(x);
}

template <class T>
Tensor<T> model_forward(models::CapsNet<T>& m, const Tensor<T>& x, Mode mode,
                        Rng& rng) {
  return m.forward(x, mode, rng);
}

// fallback for custom model types exposing forward(x, mode, rng)
template <class Model, class T>
Tensor<T> model_forward(Model& m, const Tensor<T>& x, Mode mode, Rng& rng) {
  return m.forward(x, mode, rng);
}

template <class T>
std::size_t argmax_row(const std::vector<T>& v, std::size_t row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j)
    if (v[row * cols + j] > v[row * cols + best]) best = j;
  return best;
}

}  // namespace detail

// Held-out accuracy in inference mode, no tape.
template <class Model, class T = double>
double evaluate(Model& model, const std::vector<WindowSample>& samples,
                std::size_t batch_size = 32) {
  if (samples.empty()) throw UsageError("evaluate: empty sample set");
  NoGradGuard ng;
  Rng rng(0);  // unused in inference mode
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    std::vector<int> labels;
    auto x = detail::batch_tensor<T>(samples, idx, b, e, &labels);
    auto out = detail::model_forward(model, x, Mode::kInfer, rng);
    const std::size_t cols = out.shape()[1];
    for (std::size_t i = 0; i < labels.size(); ++i)
      correct += detail::argmax_row(out.value(), i, cols) ==
                 std::size_t(labels[i]);
  }
  return double(correct) / double(samples.size());
}

// Adam training loop with seeded per-epoch shuffling. Every sample is
// checked against the held-out repetition list before it can enter a batch.
// Aborts with NumericError if the loss leaves the finite range.
template <class Model, class T = double>
History train(Model& model, const std::vector<WindowSample>& train_set,
              const TrainConfig& cfg) {
  if (train_set.empty()) throw UsageError("train: empty training set");
  if (cfg.batch_size < 2)
    throw ConfigError("train: batch size must be >= 2 for batch statistics");
  std::set<int> held_out(cfg.test_reps.begin(), cfg.test_reps.end());
  for (const auto& s : train_set)
    if (held_out.count(s.provenance.repetition))
      throw UsageError("train: repetition " +
                       std::to_string(s.provenance.repetition) +
                       " is held out for testing but present in the training set");

  Rng rng(cfg.seed);
  AdamState<T> adam;
  AdamConfig<T> adam_cfg;
  adam_cfg.lr = T(cfg.learning_rate);

  std::vector<std::size_t> idx(train_set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  History hist;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.fork(epoch + 1);
    epoch_rng.shuffle(idx);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(idx.size(), b + cfg.batch_size);
      if (e - b < 2) continue;  // batch norm needs batch statistics
      std::vector<int> labels;
      auto x = detail::batch_tensor<T>(train_set, idx, b, e, &labels);
      auto loss = detail::model_loss(model, x, labels, Mode::kTrain, epoch_rng);
      const double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b / cfg.batch_size + 1));
      for (auto& p : model.parameters()) p.zero_grad();
      loss.backward();
      adam_step(model.parameters(), adam, adam_cfg);
      loss_sum += lv;
      ++loss_batches;
    }
    EpochStats stats;
    stats.loss = loss_batches ? loss_sum / double(loss_batches) : 0.0;
    stats.accuracy = cfg.track_accuracy
                         ? evaluate<Model, T>(model, train_set, cfg.batch_size)
                         : -1.0;
    hist.epochs.push_back(stats);
  }
  return hist;
}

}  // namespace emg::train
