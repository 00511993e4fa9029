#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "emgcaps/conv3d.hpp"
#include "emgcaps/ops.hpp"
#include "emgcaps/rng.hpp"
#include "emgcaps/tensor.hpp"

namespace emg::models {

// Dynamic routing over predictions u_hat [N, in_caps, out_caps, dim]:
// logits start at zero; per iteration couple with softmax over out_caps,
// form weighted sums, squash, and reinforce logits by agreement. The whole
// procedure stays on the autograd tape.
// When `couplings` is given, the coupling coefficients of every iteration
// are copied out for inspection.
template <class T>
Tensor<T> routing_by_agreement(const Tensor<T>& u_hat, int iterations,
                               std::vector<std::vector<T>>* couplings = nullptr) {
  if (iterations < 1)
    throw ConfigError("routing_by_agreement: iterations must be >= 1");
  if (u_hat.shape().size() != 4)
    throw UsageError("routing_by_agreement: expects u_hat [N,I,J,D]");
  const std::size_t n = u_hat.shape()[0], in_caps = u_hat.shape()[1],
                    out_caps = u_hat.shape()[2], dim = u_hat.shape()[3];
  Tensor<T> logits = Tensor<T>::zeros({n, in_caps, out_caps});
  Tensor<T> v;
  for (int it = 0; it < iterations; ++it) {
    auto coupling = softmax(logits, 2);
    if (couplings) couplings->push_back(coupling.value());
    auto weighted = mul(expand_axis(coupling, 3, dim), u_hat);  // [N,I,J,D]
    v = squash(sum_axis(weighted, 1));                          // [N,J,D]
    if (it + 1 < iterations) {
      auto agreement = sum_axis(mul(u_hat, expand_axis(v, 1, in_caps)), 3);
      logits = add(logits, agreement);
    }
  }
  return v;
}

struct InputShape {
  std::size_t channels = 2;
  std::size_t time = 410;
  std::size_t rows = 6;
  std::size_t cols = 6;
};

namespace detail {

template <class T>
Tensor<T> init_weights(Shape shape, std::size_t fan_in, Rng& rng) {
  std::vector<T> v(numel(shape));
  const double scale = 1.0 / std::sqrt(double(fan_in));
  for (auto& x : v) x = T(rng.truncated_normal() * scale);
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 3D CNN baseline: five valid 3D convolutions and a two-hidden-layer dense
// classifier emitting class logits.
// ---------------------------------------------------------------------------

struct Cnn3dSpec {
  InputShape input;
  // four equal-kernel layers followed by one closing layer
  std::array<std::size_t, 3> head_kernel{100, 2, 2};
  std::vector<std::size_t> head_filters{8, 16, 32, 64};
  std::array<std::size_t, 3> tail_kernel{4, 2, 2};
  std::size_t tail_filters = 128;
  std::vector<std::size_t> dense_sizes{128, 96};
  std::size_t n_classes = 65;

  static Cnn3dSpec paper() { return {}; }

  std::string describe() const {
    std::ostringstream os;
    os << "cnn3d:c" << input.channels << "t" << input.time << "r" << input.rows
       << "c" << input.cols << ":k" << head_kernel[0] << "," << head_kernel[1]
       << "," << head_kernel[2] << ":f";
    for (auto f : head_filters) os << f << ",";
    os << ":tk" << tail_kernel[0] << "," << tail_kernel[1] << "," << tail_kernel[2]
       << ":tf" << tail_filters << ":d";
    for (auto d : dense_sizes) os << d << ",";
    os << ":classes" << n_classes;
    return os.str();
  }
};

template <class T>
class Cnn3d {
 public:
  Cnn3d(const Cnn3dSpec& spec, std::uint64_t seed) : spec_(spec) {
    Rng rng(seed);
    std::size_t c = spec.input.channels, t = spec.input.time, h = spec.input.rows,
                w = spec.input.cols;
    std::size_t layer = 0;
    auto add_conv = [&](std::size_t filters, std::array<std::size_t, 3> kernel) {
      Conv3dSpec cs{.in_channels = c, .out_channels = filters, .kernel = kernel};
      try {
        t = cs.out_extent(0, t);
        h = cs.out_extent(1, h);
        w = cs.out_extent(2, w);
      } catch (const ConfigError& e) {
        throw ConfigError("cnn3d conv layer " + std::to_string(layer + 1) + ": " +
                          e.what());
      }
      const std::size_t fan_in = c * kernel[0] * kernel[1] * kernel[2];
      add_param("conv" + std::to_string(layer + 1) + ".w",
                detail::init_weights<T>({filters, c, kernel[0], kernel[1], kernel[2]},
                                        fan_in, rng));
      add_param("conv" + std::to_string(layer + 1) + ".b",
                Tensor<T>::zeros({filters}, true));
      conv_specs_.push_back(cs);
      c = filters;
      ++layer;
    };
    for (std::size_t f : spec.head_filters) add_conv(f, spec.head_kernel);
    add_conv(spec.tail_filters, spec.tail_kernel);

    flat_dim_ = c * t * h * w;
    std::size_t d = flat_dim_;
    std::size_t di = 0;
    for (std::size_t out : spec.dense_sizes) {
      add_param("dense" + std::to_string(di + 1) + ".w",
                detail::init_weights<T>({d, out}, d, rng));
      add_param("dense" + std::to_string(di + 1) + ".b",
                Tensor<T>::zeros({out}, true));
      d = out;
      ++di;
    }
    add_param("out.w", detail::init_weights<T>({d, spec.n_classes}, d, rng));
    add_param("out.b", Tensor<T>::zeros({spec.n_classes}, true));
  }

  // Class logits [N, n_classes].
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape().size() != 5 || x.shape()[1] != spec_.input.channels)
      throw UsageError("cnn3d forward: expects [N," +
                       std::to_string(spec_.input.channels) + ",T,H,W]");
    Tensor<T> y = x;
    std::size_t pi = 0;
    for (const auto& cs : conv_specs_) {
      y = relu(conv3d(y, params_[pi], params_[pi + 1], cs));
      pi += 2;
    }
    y = reshape(y, {x.shape()[0], flat_dim_});
    for (std::size_t di = 0; di < spec_.dense_sizes.size(); ++di) {
      y = relu(dense(y, params_[pi], params_[pi + 1]));
      pi += 2;
    }
    return dense(y, params_[pi], params_[pi + 1]);
  }

  Tensor<T> loss(const Tensor<T>& x, const std::vector<int>& labels) {
    return softmax_cross_entropy(forward(x), labels);
  }

  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }
  const Cnn3dSpec& spec() const { return spec_; }
  std::uint64_t spec_hash() const { return detail::fnv1a(spec_.describe()); }

 private:
  void add_param(std::string name, Tensor<T> t) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(t));
  }
  Cnn3dSpec spec_;
  std::vector<Conv3dSpec> conv_specs_;
  std::size_t flat_dim_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
};

// ---------------------------------------------------------------------------
// 3D Dilated Efficient CapsNet: four dilated conv blocks
// (conv -> dropout -> batch norm -> relu), a primary-capsule convolution
// with squash, and a routed class-capsule layer read out as vector lengths.
// ---------------------------------------------------------------------------

struct CapsNetSpec {
  InputShape input;
  std::vector<std::size_t> conv_features{128, 128, 256, 256};
  std::array<std::size_t, 3> conv_kernel{3, 2, 2};
  std::vector<std::size_t> temporal_dilations{1, 4, 16, 64};  // per conv layer
  double conv_dropout = 0.5;
  std::size_t primary_channels = 4;
  std::size_t capsule_dim = 8;
  std::array<std::size_t, 3> primary_kernel{3, 1, 1};
  std::size_t primary_stride = 2;
  std::size_t n_classes = 65;
  int routing_iterations = 3;

  static CapsNetSpec paper() { return {}; }

  // Reduced configuration for quick experiments on synthetic data.
  static CapsNetSpec desk_scale(std::size_t time, std::size_t n_classes) {
    CapsNetSpec s;
    s.input.time = time;
    s.conv_features = {16, 16, 32, 32};
    s.temporal_dilations = {1, 1, 2, 4};
    s.conv_dropout = 0.2;  // 0.5 starves the reduced feature budget
    s.n_classes = n_classes;
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "capsnet:c" << input.channels << "t" << input.time << "r" << input.rows
       << "c" << input.cols << ":f";
    for (auto f : conv_features) os << f << ",";
    os << ":k" << conv_kernel[0] << "," << conv_kernel[1] << "," << conv_kernel[2]
       << ":dil";
    for (auto d : temporal_dilations) os << d << ",";
    os << ":drop" << conv_dropout << ":pc" << primary_channels << ":dim"
       << capsule_dim << ":pk" << primary_kernel[0] << ":ps" << primary_stride
       << ":classes" << n_classes << ":iters" << routing_iterations;
    return os.str();
  }
};

template <class T>
class CapsNet {
 public:
  CapsNet(const CapsNetSpec& spec, std::uint64_t seed) : spec_(spec) {
    Rng rng(seed);
    std::size_t c = spec.input.channels, t = spec.input.time, h = spec.input.rows,
                w = spec.input.cols;
    for (std::size_t layer = 0; layer < spec.conv_features.size(); ++layer) {
      const std::size_t f = spec.conv_features[layer];
      Conv3dSpec cs{.in_channels = c,
                    .out_channels = f,
                    .kernel = spec.conv_kernel,
                    .dilation = {spec.temporal_dilations[layer], 1, 1}};
      try {
        t = cs.out_extent(0, t);
        h = cs.out_extent(1, h);
        w = cs.out_extent(2, w);
      } catch (const ConfigError& e) {
        throw ConfigError("capsnet conv layer " + std::to_string(layer + 1) +
                          ": " + e.what());
      }
      const std::size_t fan_in = c * numel({spec.conv_kernel[0], spec.conv_kernel[1],
                                            spec.conv_kernel[2]});
      const std::string tag = "conv" + std::to_string(layer + 1);
      add_param(tag + ".w",
                detail::init_weights<T>(
                    {f, c, spec.conv_kernel[0], spec.conv_kernel[1], spec.conv_kernel[2]},
                    fan_in, rng));
      add_param(tag + ".b", Tensor<T>::zeros({f}, true));
      add_param(tag + ".bn.gamma", Tensor<T>::full({f}, T(1)));
      params_.back().set_requires_grad(true);
      add_param(tag + ".bn.beta", Tensor<T>::zeros({f}, true));
      bn_states_.emplace_back(f);
      conv_specs_.push_back(cs);
      c = f;
    }

    const std::size_t pc_filters = spec.primary_channels * spec.capsule_dim;
    primary_spec_ = Conv3dSpec{
        .in_channels = c,
        .out_channels = pc_filters,
        .kernel = spec.primary_kernel,
        .stride = {spec.primary_stride, spec.primary_stride, spec.primary_stride}};
    try {
      t = primary_spec_.out_extent(0, t);
      h = primary_spec_.out_extent(1, h);
      w = primary_spec_.out_extent(2, w);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("capsnet primary capsule layer: ") + e.what());
    }
    const std::size_t fan_in = c * numel({spec.primary_kernel[0],
                                          spec.primary_kernel[1], spec.primary_kernel[2]});
    add_param("primary.w",
              detail::init_weights<T>({pc_filters, c, spec.primary_kernel[0],
                                       spec.primary_kernel[1], spec.primary_kernel[2]},
                                      fan_in, rng));
    add_param("primary.b", Tensor<T>::zeros({pc_filters}, true));

    n_primary_caps_ = spec.primary_channels * t * h * w;
    add_param("routing.w",
              detail::init_weights<T>(
                  {n_primary_caps_, spec.n_classes, spec.capsule_dim, spec.capsule_dim},
                  spec.capsule_dim, rng));
  }

  // Per-class confidences in [0,1): capsule lengths after routing.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
    if (x.shape().size() != 5 || x.shape()[1] != spec_.input.channels)
      throw UsageError("capsnet forward: expects [N," +
                       std::to_string(spec_.input.channels) + ",T,H,W]");
    Tensor<T> y = x;
    std::size_t pi = 0;
    for (std::size_t layer = 0; layer < conv_specs_.size(); ++layer) {
      y = conv3d(y, params_[pi], params_[pi + 1], conv_specs_[layer]);
      y = dropout_reg(y, spec_.conv_dropout, mode, rng);
      y = batch_norm(y, params_[pi + 2], params_[pi + 3], bn_states_[layer], mode);
      y = relu(y);
      pi += 4;
    }
    y = conv3d(y, params_[pi], params_[pi + 1], primary_spec_);
    pi += 2;
    auto caps = squash(
        primary_caps_reshape(y, spec_.primary_channels, spec_.capsule_dim));
    auto u_hat = capsule_predict(caps, params_[pi]);
    auto v = routing_by_agreement(u_hat, spec_.routing_iterations);
    return capsule_lengths(v);
  }

  Tensor<T> loss(const Tensor<T>& x, const std::vector<int>& labels, Mode mode,
                 Rng& rng) {
    return margin_loss(forward(x, mode, rng), labels);
  }

  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::vector<BatchNormState<T>>& bn_states() { return bn_states_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }
  std::size_t primary_capsules() const { return n_primary_caps_; }
  const CapsNetSpec& spec() const { return spec_; }
  std::uint64_t spec_hash() const { return detail::fnv1a(spec_.describe()); }

 private:
  void add_param(std::string name, Tensor<T> t) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(t));
  }
  CapsNetSpec spec_;
  std::vector<Conv3dSpec> conv_specs_;
  Conv3dSpec primary_spec_;
  std::size_t n_primary_caps_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
  std::vector<BatchNormState<T>> bn_states_;
};

}  // namespace emg::models
