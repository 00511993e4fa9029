#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "emgcaps/rng.hpp"
#include "emgcaps/tensor.hpp"

namespace emg {

namespace detail {

inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer,
                       std::size_t& extent, std::size_t& inner) {
  if (axis >= s.size()) throw UsageError("axis out of range for " + shape_str(s));
  outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  extent = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (T x : v)
    if (!std::isfinite(double(x)))
      throw NumericError(std::string(op) + ": non-finite value in output");
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_node<T>(a.shape(), std::move(out), {a, b},
                              [pa, pb](auto& node) {
                                if (pa->requires_grad) pa->accumulate(node.grad);
                                if (pb->requires_grad) pb->accumulate(node.grad);
                              });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_node<T>(a.shape(), std::move(out), {a, b},
                              [pa, pb](auto& node) {
                                if (pa->requires_grad) pa->accumulate(node.grad);
                                if (pb->requires_grad) {
                                  auto& g = pb->grad_buf();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] -= node.grad[i];
                                }
                              });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_node<T>(a.shape(), std::move(out), {a, b},
                              [pa, pb](auto& node) {
                                if (pa->requires_grad) {
                                  auto& g = pa->grad_buf();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += node.grad[i] * pb->value[i];
                                }
                                if (pb->requires_grad) {
                                  auto& g = pb->grad_buf();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += node.grad[i] * pa->value[i];
                                }
                              });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  auto pa = a.impl();
  return detail::make_node<T>(a.shape(), std::move(out), {a},
                              [pa, c](auto& node) {
                                if (!pa->requires_grad) return;
                                auto& g = pa->grad_buf();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += node.grad[i] * c;
                              });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.value()) s += x;
  auto pa = a.impl();
  return detail::make_node<T>({1}, {s}, {a}, [pa](auto& node) {
    if (!pa->requires_grad) return;
    auto& g = pa->grad_buf();
    for (auto& gi : g) gi += node.grad[0];
  });
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  std::size_t outer, extent, inner;
  detail::split_axis(a.shape(), axis, outer, extent, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      const T* src = a.value().data() + (o * extent + e) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  auto pa = a.impl();
  return detail::make_node<T>(std::move(out_shape), std::move(out), {a},
                              [pa, outer, extent, inner](auto& node) {
                                if (!pa->requires_grad) return;
                                auto& g = pa->grad_buf();
                                for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t e = 0; e < extent; ++e) {
                                    T* dst = g.data() + (o * extent + e) * inner;
                                    const T* src = node.grad.data() + o * inner;
                                    for (std::size_t i = 0; i < inner; ++i)
                                      dst[i] += src[i];
                                  }
                              });
}

// Insert a broadcast axis of the given extent at `axis`.
template <class T>
Tensor<T> expand_axis(const Tensor<T>& a, std::size_t axis, std::size_t extent) {
  if (axis > a.shape().size()) throw UsageError("expand_axis: axis out of range");
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + axis, extent);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  std::size_t inner = a.size() / outer;
  std::vector<T> out(outer * extent * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      const T* src = a.value().data() + o * inner;
      T* dst = out.data() + (o * extent + e) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i];
    }
  auto pa = a.impl();
  return detail::make_node<T>(std::move(out_shape), std::move(out), {a},
                              [pa, outer, extent, inner](auto& node) {
                                if (!pa->requires_grad) return;
                                auto& g = pa->grad_buf();
                                for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t e = 0; e < extent; ++e) {
                                    T* dst = g.data() + o * inner;
                                    const T* src =
                                        node.grad.data() + (o * extent + e) * inner;
                                    for (std::size_t i = 0; i < inner; ++i)
                                      dst[i] += src[i];
                                  }
                              });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw UsageError("reshape: element count mismatch " + shape_str(a.shape()) +
                     " -> " + shape_str(new_shape));
  auto pa = a.impl();
  return detail::make_node<T>(std::move(new_shape), a.value(), {a},
                              [pa](auto& node) {
                                if (pa->requires_grad) pa->accumulate(node.grad);
                              });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  auto pa = a.impl();
  return detail::make_node<T>(a.shape(), std::move(out), {a},
                              [pa](auto& node) {
                                if (!pa->requires_grad) return;
                                auto& g = pa->grad_buf();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  if (pa->value[i] > T(0)) g[i] += node.grad[i];
                              });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  std::size_t outer, extent, inner;
  detail::split_axis(a.shape(), axis, outer, extent, inner);
  std::vector<T> out(a.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T mx = a.value()[(o * extent) * inner + i];
      for (std::size_t e = 1; e < extent; ++e)
        mx = std::max(mx, a.value()[(o * extent + e) * inner + i]);
      T sum = 0;
      for (std::size_t e = 0; e < extent; ++e) {
        T v = std::exp(a.value()[(o * extent + e) * inner + i] - mx);
        out[(o * extent + e) * inner + i] = v;
        sum += v;
      }
      for (std::size_t e = 0; e < extent; ++e)
        out[(o * extent + e) * inner + i] /= sum;
    }
  auto pa = a.impl();
  return detail::make_node<T>(
      a.shape(), std::move(out), {a},
      [pa, outer, extent, inner](auto& node) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        const auto& y = node.value;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            T dot = 0;
            for (std::size_t e = 0; e < extent; ++e) {
              std::size_t idx = (o * extent + e) * inner + i;
              dot += node.grad[idx] * y[idx];
            }
            for (std::size_t e = 0; e < extent; ++e) {
              std::size_t idx = (o * extent + e) * inner + i;
              g[idx] += y[idx] * (node.grad[idx] - dot);
            }
          }
      });
}

// Affine map [N,D] x [D,O] + [O] -> [N,O]
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    throw UsageError("dense: expects x[N,D], w[D,O], b[O]");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  const std::size_t o = w.shape()[1];
  if (w.shape()[0] != d || b.shape()[0] != o)
    throw ConfigError("dense: dimension mismatch x" + shape_str(x.shape()) + " w" +
                      shape_str(w.shape()) + " b" + shape_str(b.shape()));
  std::vector<T> out(n * o);
#pragma omp parallel for schedule(static)
  for (long long ni = 0; ni < (long long)n; ++ni) {
    for (std::size_t oi = 0; oi < o; ++oi) {
      T acc = b.value()[oi];
      for (std::size_t di = 0; di < d; ++di)
        acc += x.value()[ni * d + di] * w.value()[di * o + oi];
      out[ni * o + oi] = acc;
    }
  }
  detail::check_finite(out, "dense");
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return detail::make_node<T>(
      {n, o}, std::move(out), {x, w, b},
      [px, pw, pb, n, d, o](auto& node) {
        const auto& g = node.grad;
        if (px->requires_grad) {
          auto& gx = px->grad_buf();
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t di = 0; di < d; ++di) {
              T acc = 0;
              for (std::size_t oi = 0; oi < o; ++oi)
                acc += g[ni * o + oi] * pw->value[di * o + oi];
              gx[ni * d + di] += acc;
            }
        }
        if (pw->requires_grad) {
          auto& gw = pw->grad_buf();
          for (std::size_t di = 0; di < d; ++di)
            for (std::size_t oi = 0; oi < o; ++oi) {
              T acc = 0;
              for (std::size_t ni = 0; ni < n; ++ni)
                acc += px->value[ni * d + di] * g[ni * o + oi];
              gw[di * o + oi] += acc;
            }
        }
        if (pb->requires_grad) {
          auto& gb = pb->grad_buf();
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t oi = 0; oi < o; ++oi) gb[oi] += g[ni * o + oi];
        }
      });
}

enum class Mode { kTrain, kInfer };

// Per-channel running statistics (channel axis = 1).
template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, Mode mode,
                     T epsilon = T(1e-5), T momentum = T(0.1)) {
  if (x.shape().size() < 2) throw UsageError("batch_norm: rank >= 2 required");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      state.running_mean.size() != c)
    throw ConfigError("batch_norm: channel count mismatch");
  std::size_t spatial = x.size() / (n * c);
  const std::size_t m = n * spatial;  // reduction set per channel
  if (mode == Mode::kTrain && n < 2)
    throw ConfigError("batch_norm: train mode needs batch size >= 2");

  std::vector<T> mean(c), var(c);
  if (mode == Mode::kTrain) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      T mu = 0;
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t s = 0; s < spatial; ++s)
          mu += x.value()[(ni * c + ci) * spatial + s];
      mu /= T(m);
      T v = 0;
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t s = 0; s < spatial; ++s) {
          T d = x.value()[(ni * c + ci) * spatial + s] - mu;
          v += d * d;
        }
      v /= T(m);
      mean[ci] = mu;
      var[ci] = v;
      state.running_mean[ci] =
          (T(1) - momentum) * state.running_mean[ci] + momentum * mu;
      state.running_var[ci] = (T(1) - momentum) * state.running_var[ci] + momentum * v;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<T> out(x.size());
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T inv_sd = T(1) / std::sqrt(var[ci] + epsilon);
      for (std::size_t s = 0; s < spatial; ++s) {
        std::size_t idx = (ni * c + ci) * spatial + s;
        out[idx] =
            gamma.value()[ci] * (x.value()[idx] - mean[ci]) * inv_sd + beta.value()[ci];
      }
    }
  detail::check_finite(out, "batch_norm");

  auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
  const bool train = mode == Mode::kTrain;
  return detail::make_node<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [px, pg, pb, n, c, spatial, m, mean, var, epsilon, train](auto& node) {
        const auto& g = node.grad;
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T inv_sd = T(1) / std::sqrt(var[ci] + epsilon);
          T sum_g = 0, sum_gx = 0;  // sums of grad and grad*xhat over channel
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t s = 0; s < spatial; ++s) {
              std::size_t idx = (ni * c + ci) * spatial + s;
              sum_g += g[idx];
              sum_gx += g[idx] * (px->value[idx] - mean[ci]) * inv_sd;
            }
          if (pg->requires_grad) pg->grad_buf()[ci] += sum_gx;
          if (pb->requires_grad) pb->grad_buf()[ci] += sum_g;
          if (px->requires_grad) {
            auto& gx = px->grad_buf();
            const T gam = pg->value[ci];
            for (std::size_t ni = 0; ni < n; ++ni)
              for (std::size_t s = 0; s < spatial; ++s) {
                std::size_t idx = (ni * c + ci) * spatial + s;
                T xhat = (px->value[idx] - mean[ci]) * inv_sd;
                if (train) {
                  gx[idx] += gam * inv_sd *
                             (g[idx] - sum_g / T(m) - xhat * sum_gx / T(m));
                } else {
                  gx[idx] += gam * inv_sd * g[idx];
                }
              }
          }
        }
      });
}

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); infer mode is identity.
template <class T>
Tensor<T> dropout_reg(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout_reg: rate must be in [0,1)");
  if (mode == Mode::kInfer || rate == 0.0) {
    auto px = x.impl();
    return detail::make_node<T>(x.shape(), x.value(), {x}, [px](auto& node) {
      if (px->requires_grad) px->accumulate(node.grad);
    });
  }
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<char>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool keep = rng.uniform() >= rate;
    (*mask)[i] = keep;
    out[i] = keep ? x.value()[i] * keep_scale : T(0);
  }
  auto px = x.impl();
  return detail::make_node<T>(x.shape(), std::move(out), {x},
                              [px, mask, keep_scale](auto& node) {
                                if (!px->requires_grad) return;
                                auto& g = px->grad_buf();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  if ((*mask)[i]) g[i] += node.grad[i] * keep_scale;
                              });
}

// Capsule squash over the last axis: v = s * |s| / (1 + |s|^2).
template <class T>
Tensor<T> squash(const Tensor<T>& s) {
  const std::size_t dim = s.shape().back();
  const std::size_t caps = s.size() / dim;
  std::vector<T> out(s.size());
  for (std::size_t ci = 0; ci < caps; ++ci) {
    T n2 = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      T v = s.value()[ci * dim + d];
      n2 += v * v;
    }
    const T n = std::sqrt(n2);
    const T alpha = n / (T(1) + n2);
    for (std::size_t d = 0; d < dim; ++d) out[ci * dim + d] = s.value()[ci * dim + d] * alpha;
  }
  auto ps = s.impl();
  return detail::make_node<T>(
      s.shape(), std::move(out), {s}, [ps, caps, dim](auto& node) {
        if (!ps->requires_grad) return;
        auto& g = ps->grad_buf();
        for (std::size_t ci = 0; ci < caps; ++ci) {
          T n2 = 0, dot = 0;
          for (std::size_t d = 0; d < dim; ++d) {
            T v = ps->value[ci * dim + d];
            n2 += v * v;
            dot += v * node.grad[ci * dim + d];
          }
          const T n = std::sqrt(n2);
          if (n < T(1e-20)) continue;  // dv/ds -> 0 at the origin
          const T alpha = n / (T(1) + n2);
          // d alpha / dn = (1 - n^2) / (1 + n^2)^2
          const T dalpha = (T(1) - n2) / ((T(1) + n2) * (T(1) + n2));
          for (std::size_t d = 0; d < dim; ++d)
            g[ci * dim + d] += alpha * node.grad[ci * dim + d] +
                               dot * (dalpha / n) * ps->value[ci * dim + d];
        }
      });
}

// Euclidean norm over the last axis; the capsule-length readout.
template <class T>
Tensor<T> capsule_lengths(const Tensor<T>& v) {
  const std::size_t dim = v.shape().back();
  const std::size_t caps = v.size() / dim;
  Shape out_shape(v.shape().begin(), v.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(caps);
  for (std::size_t ci = 0; ci < caps; ++ci) {
    T n2 = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      T x = v.value()[ci * dim + d];
      n2 += x * x;
    }
    out[ci] = std::sqrt(n2);
  }
  auto pv = v.impl();
  return detail::make_node<T>(std::move(out_shape), std::move(out), {v},
                              [pv, caps, dim](auto& node) {
                                if (!pv->requires_grad) return;
                                auto& g = pv->grad_buf();
                                for (std::size_t ci = 0; ci < caps; ++ci) {
                                  const T n = node.value[ci];
                                  if (n < T(1e-20)) continue;
                                  for (std::size_t d = 0; d < dim; ++d)
                                    g[ci * dim + d] +=
                                        node.grad[ci] * pv->value[ci * dim + d] / n;
                                }
                              });
}

// Per-capsule affine predictions for routing:
// u [N,I,Din] x W [I,J,Dout,Din] -> u_hat [N,I,J,Dout]
template <class T>
Tensor<T> capsule_predict(const Tensor<T>& u, const Tensor<T>& w) {
  if (u.shape().size() != 3 || w.shape().size() != 4)
    throw UsageError("capsule_predict: expects u[N,I,Din], w[I,J,Dout,Din]");
  const std::size_t n = u.shape()[0], in_caps = u.shape()[1], din = u.shape()[2];
  const std::size_t out_caps = w.shape()[1], dout = w.shape()[2];
  if (w.shape()[0] != in_caps || w.shape()[3] != din)
    throw ConfigError("capsule_predict: weight shape mismatch");
  std::vector<T> out(n * in_caps * out_caps * dout, T(0));
#pragma omp parallel for schedule(static)
  for (long long ni = 0; ni < (long long)n; ++ni)
    for (std::size_t i = 0; i < in_caps; ++i)
      for (std::size_t j = 0; j < out_caps; ++j)
        for (std::size_t od = 0; od < dout; ++od) {
          T acc = 0;
          for (std::size_t id = 0; id < din; ++id)
            acc += w.value()[((i * out_caps + j) * dout + od) * din + id] *
                   u.value()[(ni * in_caps + i) * din + id];
          out[((ni * in_caps + i) * out_caps + j) * dout + od] = acc;
        }
  auto pu = u.impl(), pw = w.impl();
  return detail::make_node<T>(
      {n, in_caps, out_caps, dout}, std::move(out), {u, w},
      [pu, pw, n, in_caps, out_caps, dout, din](auto& node) {
        const auto& g = node.grad;
        if (pu->requires_grad) {
          auto& gu = pu->grad_buf();
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t i = 0; i < in_caps; ++i)
              for (std::size_t id = 0; id < din; ++id) {
                T acc = 0;
                for (std::size_t j = 0; j < out_caps; ++j)
                  for (std::size_t od = 0; od < dout; ++od)
                    acc += g[((ni * in_caps + i) * out_caps + j) * dout + od] *
                           pw->value[((i * out_caps + j) * dout + od) * din + id];
                gu[(ni * in_caps + i) * din + id] += acc;
              }
        }
        if (pw->requires_grad) {
          auto& gw = pw->grad_buf();
          for (std::size_t i = 0; i < in_caps; ++i)
            for (std::size_t j = 0; j < out_caps; ++j)
              for (std::size_t od = 0; od < dout; ++od)
                for (std::size_t id = 0; id < din; ++id) {
                  T acc = 0;
                  for (std::size_t ni = 0; ni < n; ++ni)
                    acc += g[((ni * in_caps + i) * out_caps + j) * dout + od] *
                           pu->value[(ni * in_caps + i) * din + id];
                  gw[((i * out_caps + j) * dout + od) * din + id] += acc;
                }
        }
      });
}

// Conv output [N, groups*dim, Tn, 1, 1] -> capsules [N, groups*Tn, dim].
// Capsule (g, t) takes its vector from channels g*dim .. g*dim+dim-1 at t.
template <class T>
Tensor<T> primary_caps_reshape(const Tensor<T>& x, std::size_t groups,
                               std::size_t dim) {
  if (x.shape().size() != 5 || x.shape()[1] != groups * dim)
    throw UsageError("primary_caps_reshape: expects [N, groups*dim, T, H, W]");
  const std::size_t n = x.shape()[0];
  const std::size_t pos = x.shape()[2] * x.shape()[3] * x.shape()[4];
  const std::size_t caps = groups * pos;
  std::vector<T> out(n * caps * dim);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t p = 0; p < pos; ++p)
        for (std::size_t d = 0; d < dim; ++d)
          out[(ni * caps + gi * pos + p) * dim + d] =
              x.value()[(ni * groups * dim + gi * dim + d) * pos + p];
  auto px = x.impl();
  return detail::make_node<T>(
      {n, caps, dim}, std::move(out), {x},
      [px, n, groups, pos, dim, caps](auto& node) {
        if (!px->requires_grad) return;
        auto& g = px->grad_buf();
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t gi = 0; gi < groups; ++gi)
            for (std::size_t p = 0; p < pos; ++p)
              for (std::size_t d = 0; d < dim; ++d)
                g[(ni * groups * dim + gi * dim + d) * pos + p] +=
                    node.grad[(ni * caps + gi * pos + p) * dim + d];
      });
}

// Capsule margin loss, summed over classes and averaged over the batch.
template <class T>
Tensor<T> margin_loss(const Tensor<T>& confidences, const std::vector<int>& labels,
                      T m_pos = T(0.9), T m_neg = T(0.1), T lambda = T(0.5)) {
  if (confidences.shape().size() != 2)
    throw UsageError("margin_loss: expects confidences [N,K]");
  const std::size_t n = confidences.shape()[0], k = confidences.shape()[1];
  if (labels.size() != n) throw UsageError("margin_loss: label count mismatch");
  T loss = 0;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ki = 0; ki < k; ++ki) {
      const T c = confidences.value()[ni * k + ki];
      if ((int)ki == labels[ni]) {
        T d = std::max(T(0), m_pos - c);
        loss += d * d;
      } else {
        T d = std::max(T(0), c - m_neg);
        loss += lambda * d * d;
      }
    }
  loss /= T(n);
  auto pc = confidences.impl();
  return detail::make_node<T>(
      {1}, {loss}, {confidences},
      [pc, labels, n, k, m_pos, m_neg, lambda](auto& node) {
        if (!pc->requires_grad) return;
        auto& g = pc->grad_buf();
        const T go = node.grad[0] / T(n);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t ki = 0; ki < k; ++ki) {
            const T c = pc->value[ni * k + ki];
            if ((int)ki == labels[ni]) {
              if (c < m_pos) g[ni * k + ki] += go * T(-2) * (m_pos - c);
            } else {
              if (c > m_neg) g[ni * k + ki] += go * lambda * T(2) * (c - m_neg);
            }
          }
      });
}

// Softmax cross-entropy over logits [N,K], mean over the batch.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.shape().size() != 2)
    throw UsageError("softmax_cross_entropy: expects logits [N,K]");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) throw UsageError("softmax_cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<T>>(n * k);
  T loss = 0;
  for (std::size_t ni = 0; ni < n; ++ni) {
    T mx = logits.value()[ni * k];
    for (std::size_t ki = 1; ki < k; ++ki)
      mx = std::max(mx, logits.value()[ni * k + ki]);
    T sum = 0;
    for (std::size_t ki = 0; ki < k; ++ki) {
      T e = std::exp(logits.value()[ni * k + ki] - mx);
      (*probs)[ni * k + ki] = e;
      sum += e;
    }
    for (std::size_t ki = 0; ki < k; ++ki) (*probs)[ni * k + ki] /= sum;
    loss -= std::log(std::max((*probs)[ni * k + labels[ni]], T(1e-30)));
  }
  loss /= T(n);
  auto pl = logits.impl();
  return detail::make_node<T>({1}, {loss}, {logits},
                              [pl, probs, labels, n, k](auto& node) {
                                if (!pl->requires_grad) return;
                                auto& g = pl->grad_buf();
                                const T go = node.grad[0] / T(n);
                                for (std::size_t ni = 0; ni < n; ++ni)
                                  for (std::size_t ki = 0; ki < k; ++ki) {
                                    T d = (*probs)[ni * k + ki] -
                                          T((int)ki == labels[ni] ? 1 : 0);
                                    g[ni * k + ki] += go * d;
                                  }
                              });
}

}  // namespace emg
