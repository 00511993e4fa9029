#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emgcaps/models.hpp"
#include "oracles.hpp"

using namespace emg::models;
using emg::ConfigError;
using emg::Mode;
using emg::Rng;
using emg::Shape;
using Tensor = emg::Tensor<double>;

namespace {

double norm_of(const std::vector<double>& v, std::size_t off, std::size_t dim) {
  double n2 = 0;
  for (std::size_t i = 0; i < dim; ++i) n2 += v[off + i] * v[off + i];
  return std::sqrt(n2);
}

}  // namespace

TEST_CASE("squash: zero maps to zero, unit norm to 0.5, large norms saturate") {
  auto z = emg::squash(Tensor::zeros({1, 3}));
  for (double v : z.value()) CHECK(v == 0.0);

  auto s1 = emg::squash(Tensor::from({1, 2}, {1.0, 0.0}));
  CHECK(norm_of(s1.value(), 0, 2) == doctest::Approx(0.5));

  auto s10 = emg::squash(Tensor::from({1, 2}, {6.0, 8.0}));  // norm 10
  CHECK(norm_of(s10.value(), 0, 2) == doctest::Approx(100.0 / 101.0));
  // direction preserved
  CHECK(s10.value()[0] / s10.value()[1] == doctest::Approx(6.0 / 8.0));
}

TEST_CASE("squash: norm in (0,1) and strictly increasing in input norm") {
  Rng rng(6);
  double prev = 0.0;
  for (int i = 1; i <= 40; ++i) {
    const double n_in = 0.1 * i;
    auto s = emg::squash(Tensor::from({1, 2}, {n_in, 0.0}));
    const double n_out = norm_of(s.value(), 0, 2);
    CHECK(n_out > 0.0);
    CHECK(n_out < 1.0);
    CHECK(n_out > prev);
    prev = n_out;
  }
}

TEST_CASE("routing: single input capsule, one iteration") {
  // coupling softmax over J of zero logits is 1/J for each output capsule
  const std::size_t j = 3, d = 2;
  Rng rng(17);
  std::vector<double> u_hat(j * d);
  for (auto& v : u_hat) v = rng.normal();
  auto v = routing_by_agreement(Tensor::from({1, 1, j, d}, u_hat), 1);
  for (std::size_t jj = 0; jj < j; ++jj) {
    std::vector<double> scaled(d);
    for (std::size_t dd = 0; dd < d; ++dd) scaled[dd] = u_hat[jj * d + dd] / double(j);
    auto ref = emg::squash(Tensor::from({1, d}, scaled));
    for (std::size_t dd = 0; dd < d; ++dd)
      CHECK(v.value()[jj * d + dd] == doctest::Approx(ref.value()[dd]).epsilon(1e-9));
  }
}

TEST_CASE("routing: identical predictions keep coupling uniform (symmetry)") {
  const std::size_t i = 4, j = 2, d = 3;
  std::vector<double> u_hat(i * j * d);
  for (std::size_t ii = 0; ii < i; ++ii)
    for (std::size_t jj = 0; jj < j; ++jj)
      for (std::size_t dd = 0; dd < d; ++dd)
        u_hat[(ii * j + jj) * d + dd] = 0.3 * double(dd + 1);  // same for all i, j
  std::vector<std::vector<double>> couplings;
  routing_by_agreement(Tensor::from({1, i, j, d}, u_hat), 3, &couplings);
  REQUIRE(couplings.size() == 3);
  for (const auto& c : couplings)
    for (double v : c) CHECK(v == doctest::Approx(1.0 / double(j)).epsilon(1e-9));
}

TEST_CASE("routing: matches step-by-step reference oracle") {
  const std::size_t i = 3, j = 2, d = 2;
  Rng rng(23);
  std::vector<double> u_hat(i * j * d);
  for (auto& v : u_hat) v = rng.normal();
  auto v = routing_by_agreement(Tensor::from({1, i, j, d}, u_hat), 3);
  auto ref = oracle::routing_reference(u_hat, i, j, d, 3);
  for (std::size_t k = 0; k < ref.size(); ++k)
    CHECK(v.value()[k] == doctest::Approx(ref[k]).epsilon(1e-6));
}

TEST_CASE("routing: coupling rows sum to 1 at every iteration") {
  const std::size_t i = 4, j = 3, d = 2;
  Rng rng(29);
  std::vector<double> u_hat(i * j * d);
  for (auto& v : u_hat) v = rng.normal();
  std::vector<std::vector<double>> couplings;
  routing_by_agreement(Tensor::from({1, i, j, d}, u_hat), 4, &couplings);
  REQUIRE(couplings.size() == 4);
  for (const auto& c : couplings)
    for (std::size_t ii = 0; ii < i; ++ii) {
      double sum = 0;
      for (std::size_t jj = 0; jj < j; ++jj) sum += c[ii * j + jj];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("routing: iterations < 1 rejected") {
  CHECK_THROWS_AS(routing_by_agreement(Tensor::zeros({1, 2, 2, 2}), 0),
                  ConfigError);
}

TEST_CASE("capsule_lengths: norms per capsule, zero and one-hot cases") {
  auto zero = emg::capsule_lengths(Tensor::zeros({2, 8}));
  for (double v : zero.value()) CHECK(v == 0.0);

  std::vector<double> one_hot(8, 0.0);
  one_hot[0] = 0.6;
  auto c = emg::capsule_lengths(Tensor::from({1, 8}, one_hot));
  CHECK(c.value()[0] == doctest::Approx(0.6));

  Rng rng(31);
  std::vector<double> caps(5 * 3);
  for (auto& v : caps) v = rng.normal();
  auto lens = emg::capsule_lengths(Tensor::from({5, 3}, caps));
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(lens.value()[i] == doctest::Approx(norm_of(caps, i * 3, 3)).epsilon(1e-12));
}

TEST_CASE("margin_loss: perfect prediction costs zero, all-zero costs 0.81") {
  std::vector<double> good(3, 0.05);
  good[1] = 0.95;
  CHECK(emg::margin_loss(Tensor::from({1, 3}, good), {1}).item() == 0.0);

  CHECK(emg::margin_loss(Tensor::zeros({1, 3}), {1}).item() ==
        doctest::Approx(0.81));
}

TEST_CASE("margin_loss: matches the formula oracle on random confidences") {
  Rng rng(37);
  const std::size_t k = 5;
  std::vector<double> conf(k);
  for (auto& v : conf) v = rng.uniform();
  const int label = 2;
  double expected = 0.0;
  for (std::size_t ki = 0; ki < k; ++ki) {
    if ((int)ki == label)
      expected += std::pow(std::max(0.0, 0.9 - conf[ki]), 2);
    else
      expected += 0.5 * std::pow(std::max(0.0, conf[ki] - 0.1), 2);
  }
  CHECK(emg::margin_loss(Tensor::from({1, k}, conf), {label}).item() ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("prediction invariance: common positive scaling preserves argmax") {
  Rng rng(41);
  std::vector<double> v(65 * 8);
  for (auto& x : v) x = rng.normal();
  auto base = emg::capsule_lengths(emg::Tensor<double>::from({65, 8}, v));
  std::vector<double> scaled = v;
  for (auto& x : scaled) x *= 3.7;
  auto big = emg::capsule_lengths(emg::Tensor<double>::from({65, 8}, scaled));
  auto argmax = [](const std::vector<double>& a) {
    return std::max_element(a.begin(), a.end()) - a.begin();
  };
  CHECK(argmax(base.value()) == argmax(big.value()));
}

TEST_CASE("capsnet: paper-scale forward produces 65 confidences in [0,1)") {
  auto spec = CapsNetSpec::paper();
  CapsNet<float> model(spec, 1);
  CHECK(model.primary_capsules() == 4 * 119);
  Rng rng(2);
  std::vector<float> xv(2 * 410 * 6 * 6);
  for (auto& v : xv) v = float(std::abs(rng.normal()));
  emg::NoGradGuard ng;
  auto conf = model.forward(emg::Tensor<float>::from({1, 2, 410, 6, 6}, xv),
                            Mode::kInfer, rng);
  REQUIRE(conf.shape() == Shape{1, 65});
  for (float v : conf.value()) {
    CHECK(v >= 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("cnn3d: paper-scale assembly shape-checks and zero input is deterministic") {
  Cnn3d<float> model(Cnn3dSpec::paper(), 3);
  CHECK(model.parameter_count() > 0);
  emg::NoGradGuard ng;
  auto x = emg::Tensor<float>::zeros({1, 2, 410, 6, 6});
  auto a = model.forward(x);
  auto b = model.forward(x);
  REQUIRE(a.shape() == Shape{1, 65});
  CHECK(a.value() == b.value());
}

TEST_CASE("model assembly: impossible layer geometry names the offending layer") {
  Cnn3dSpec bad = Cnn3dSpec::paper();
  bad.input.time = 150;  // second 100-tap layer cannot fit
  try {
    Cnn3d<float> model(bad, 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
  }

  CapsNetSpec bad_caps = CapsNetSpec::paper();
  bad_caps.input.time = 100;  // dilation-64 layer cannot fit
  CHECK_THROWS_AS(CapsNet<float>(bad_caps, 1), ConfigError);
}

TEST_CASE("capsnet: desk-scale forward/backward completes with finite gradients") {
  auto spec = CapsNetSpec::desk_scale(64, 8);
  CapsNet<double> model(spec, 7);
  Rng rng(9);
  std::vector<double> xv(2 * 2 * 64 * 6 * 6);
  for (auto& v : xv) v = std::abs(rng.normal());
  auto x = emg::Tensor<double>::from({2, 2, 64, 6, 6}, xv);
  auto loss = model.loss(x, {1, 5}, Mode::kTrain, rng);
  CHECK(std::isfinite(loss.item()));
  loss.backward();
  for (auto& p : model.parameters())
    for (double g : p.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("capsnet: tiny end-to-end gradients match finite differences") {
  CapsNetSpec spec;
  spec.input = {2, 8, 6, 6};
  spec.conv_features = {4};
  spec.temporal_dilations = {1};
  spec.conv_dropout = 0.0;  // keep the loss a deterministic function
  spec.primary_channels = 2;
  spec.capsule_dim = 2;
  spec.n_classes = 2;
  spec.routing_iterations = 2;
  CapsNet<double> model(spec, 11);
  const std::vector<int> labels{0, 1};

  Rng data_rng(13);
  std::vector<double> xv(2 * 2 * 8 * 6 * 6);
  for (auto& v : xv) v = std::abs(data_rng.normal());

  auto fresh_states = model.bn_states();
  auto eval_loss = [&](const std::vector<double>& x_val) {
    emg::NoGradGuard ng;
    model.bn_states() = fresh_states;  // keep running stats out of the FD signal
    Rng rng(0);
    auto x = emg::Tensor<double>::from({2, 2, 8, 6, 6}, x_val);
    return model.loss(x, labels, Mode::kTrain, rng).item();
  };

  // analytic gradients w.r.t. the input
  model.bn_states() = fresh_states;
  Rng rng(0);
  auto x = emg::Tensor<double>::from({2, 2, 8, 6, 6}, xv, true);
  auto loss = model.loss(x, labels, Mode::kTrain, rng);
  loss.backward();
  auto input_grad = x.grad();

  // probe a subset of coordinates (full FD over 4608 inputs is slow)
  Rng pick(99);
  std::vector<double> xp = xv;
  for (int probe = 0; probe < 24; ++probe) {
    const std::size_t i = pick.below(xv.size());
    const double eps = 1e-5;
    xp[i] = xv[i] + eps;
    const double fp = eval_loss(xp);
    xp[i] = xv[i] - eps;
    const double fm = eval_loss(xp);
    xp[i] = xv[i];
    const double fd = (fp - fm) / (2 * eps);
    const double denom = std::max({std::abs(fd), std::abs(input_grad[i]), 1e-6});
    CHECK(std::abs(fd - input_grad[i]) / denom < 1e-3);
  }

  // and w.r.t. the routing weights
  auto& params = model.parameters();
  const auto& names = model.parameter_names();
  std::size_t widx = 0;
  while (names[widx] != "routing.w") ++widx;
  model.bn_states() = fresh_states;
  params[widx].zero_grad();
  Rng rng2(0);
  auto x2 = emg::Tensor<double>::from({2, 2, 8, 6, 6}, xv);
  model.loss(x2, labels, Mode::kTrain, rng2).backward();
  auto wgrad = params[widx].grad();
  for (int probe = 0; probe < 24; ++probe) {
    const std::size_t i = pick.below(params[widx].size());
    const double orig = params[widx].value()[i];
    const double eps = 1e-5;
    params[widx].value()[i] = orig + eps;
    const double fp = eval_loss(xv);
    params[widx].value()[i] = orig - eps;
    const double fm = eval_loss(xv);
    params[widx].value()[i] = orig;
    const double fd = (fp - fm) / (2 * eps);
    const double denom = std::max({std::abs(fd), std::abs(wgrad[i]), 1e-6});
    CHECK(std::abs(fd - wgrad[i]) / denom < 1e-3);
  }
}
