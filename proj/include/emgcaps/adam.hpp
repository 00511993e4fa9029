#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "emgcaps/tensor.hpp"

namespace emg {

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;  // first moments, one entry per parameter
  std::vector<std::vector<T>> v;  // second moments
  std::size_t step = 0;
};

template <class T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
};

// One bias-corrected Adam update over a parameter list; gradients are read
// from each tensor's grad buffer and left untouched.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), T(0));
      state.v[i].assign(params[i].size(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw UsageError("adam_step: state/parameter count mismatch");
  state.step += 1;
  const T bc1 = T(1) - std::pow(cfg.beta1, T(state.step));
  const T bc2 = T(1) - std::pow(cfg.beta2, T(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value();
    auto& g = params[i].grad();
    if (g.size() != p.size())
      throw UsageError("adam_step: gradient size mismatch on parameter " +
                       std::to_string(i));
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (T(1) - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (T(1) - cfg.beta2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace emg
