#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "emgcaps/ops.hpp"
#include "emgcaps/tensor.hpp"

namespace emg {

// Valid (no padding) dilated 3D cross-correlation.
struct Conv3dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 3> kernel{1, 1, 1};    // (kt, kh, kw)
  std::array<std::size_t, 3> stride{1, 1, 1};    // (st, sh, sw)
  std::array<std::size_t, 3> dilation{1, 1, 1};  // (dt, dh, dw)

  std::size_t effective_extent(int axis) const {
    return (kernel[axis] - 1) * dilation[axis] + 1;
  }

  // Output extent along one axis: floor((in - ((k-1)*d+1)) / s) + 1
  std::size_t out_extent(int axis, std::size_t in) const {
    const std::size_t eff = effective_extent(axis);
    if (eff > in)
      throw ConfigError("conv3d: effective kernel extent " + std::to_string(eff) +
                        " exceeds input extent " + std::to_string(in) + " on axis " +
                        std::to_string(axis));
    return (in - eff) / stride[axis] + 1;
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0)
      throw ConfigError("conv3d: channel counts must be positive");
    for (int a = 0; a < 3; ++a)
      if (kernel[a] == 0 || stride[a] == 0 || dilation[a] == 0)
        throw ConfigError("conv3d: kernel/stride/dilation must be positive");
  }
};

namespace conv_kernels {

// Serial reference kernel. Kept deliberately as plain nested loops; the
// parallel kernel below must match it exactly and tests compare the two.
template <class T>
void forward_serial(const T* x, const T* w, const T* b, T* out, std::size_t n,
                    std::size_t c, std::size_t t, std::size_t h, std::size_t sw_,
                    std::size_t f, const Conv3dSpec& spec, std::size_t to,
                    std::size_t ho, std::size_t wo) {
  const auto [kt, kh, kw] = spec.kernel;
  const auto [st, sh, sw] = spec.stride;
  const auto [dt, dh, dw] = spec.dilation;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t fi = 0; fi < f; ++fi)
      for (std::size_t ti = 0; ti < to; ++ti)
        for (std::size_t hi = 0; hi < ho; ++hi)
          for (std::size_t wi = 0; wi < wo; ++wi) {
            T acc = b[fi];
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t p = 0; p < kh; ++p)
                  for (std::size_t q = 0; q < kw; ++q) {
                    const std::size_t xi =
                        ((ni * c + ci) * t + ti * st + a * dt) * h * sw_ +
                        (hi * sh + p * dh) * sw_ + (wi * sw + q * dw);
                    const std::size_t widx =
                        (((fi * c + ci) * kt + a) * kh + p) * kw + q;
                    acc += x[xi] * w[widx];
                  }
            out[((ni * f + fi) * to + ti) * ho * wo + hi * wo + wi] = acc;
          }
}

// OpenMP kernel: each (n, f) output slab is owned by one thread, so the
// result is identical to the serial kernel regardless of thread count.
template <class T>
void forward_parallel(const T* x, const T* w, const T* b, T* out, std::size_t n,
                      std::size_t c, std::size_t t, std::size_t h, std::size_t sw_,
                      std::size_t f, const Conv3dSpec& spec, std::size_t to,
                      std::size_t ho, std::size_t wo) {
  // plain scalar copies: reference-captured bindings defeat optimization in
  // the outlined OpenMP region
  const std::size_t kt = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const std::size_t st = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const std::size_t dt = spec.dilation[0], dh = spec.dilation[1],
                    dw = spec.dilation[2];
#pragma omp parallel for collapse(2) schedule(static) \
    firstprivate(x, w, b, out, n, c, t, h, sw_, f, to, ho, wo, kt, kh, kw, st, \
                     sh, sw, dt, dh, dw)
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t fi = 0; fi < f; ++fi)
      for (std::size_t ti = 0; ti < to; ++ti)
        for (std::size_t hi = 0; hi < ho; ++hi)
          for (std::size_t wi = 0; wi < wo; ++wi) {
            T acc = b[fi];
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t p = 0; p < kh; ++p)
                  for (std::size_t q = 0; q < kw; ++q) {
                    const std::size_t xi =
                        ((ni * c + ci) * t + ti * st + a * dt) * h * sw_ +
                        (hi * sh + p * dh) * sw_ + (wi * sw + q * dw);
                    const std::size_t widx =
                        (((fi * c + ci) * kt + a) * kh + p) * kw + q;
                    acc += x[xi] * w[widx];
                  }
            out[((ni * f + fi) * to + ti) * ho * wo + hi * wo + wi] = acc;
          }
}

// Input gradient: threads own (n, c) input slabs; weight gradient: threads
// own filters. Accumulation order inside each owner is fixed, so backward
// is deterministic too.
template <class T>
void backward_parallel(const T* x, const T* w, const T* g, T* gx, T* gw, T* gb,
                       std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                       std::size_t sw_, std::size_t f, const Conv3dSpec& spec,
                       std::size_t to, std::size_t ho, std::size_t wo) {
  const std::size_t kt = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const std::size_t st = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const std::size_t dt = spec.dilation[0], dh = spec.dilation[1],
                    dw = spec.dilation[2];
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static) \
    firstprivate(x, w, g, gx, n, c, t, h, sw_, f, to, ho, wo, kt, kh, kw, st, \
                     sh, sw, dt, dh, dw)
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t fi = 0; fi < f; ++fi)
          for (std::size_t ti = 0; ti < to; ++ti)
            for (std::size_t hi = 0; hi < ho; ++hi)
              for (std::size_t wi = 0; wi < wo; ++wi) {
                const T go = g[((ni * f + fi) * to + ti) * ho * wo + hi * wo + wi];
                for (std::size_t a = 0; a < kt; ++a)
                  for (std::size_t p = 0; p < kh; ++p)
                    for (std::size_t q = 0; q < kw; ++q) {
                      const std::size_t xi =
                          ((ni * c + ci) * t + ti * st + a * dt) * h * sw_ +
                          (hi * sh + p * dh) * sw_ + (wi * sw + q * dw);
                      const std::size_t widx =
                          (((fi * c + ci) * kt + a) * kh + p) * kw + q;
                      gx[xi] += go * w[widx];
                    }
              }
  }
  if (gw) {
#pragma omp parallel for schedule(static) \
    firstprivate(x, g, gw, n, c, t, h, sw_, f, to, ho, wo, kt, kh, kw, st, sh, \
                     sw, dt, dh, dw)
    for (std::size_t fi = 0; fi < f; ++fi)
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ti = 0; ti < to; ++ti)
          for (std::size_t hi = 0; hi < ho; ++hi)
            for (std::size_t wi = 0; wi < wo; ++wi) {
              const T go = g[((ni * f + fi) * to + ti) * ho * wo + hi * wo + wi];
              for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t a = 0; a < kt; ++a)
                  for (std::size_t p = 0; p < kh; ++p)
                    for (std::size_t q = 0; q < kw; ++q) {
                      const std::size_t xi =
                          ((ni * c + ci) * t + ti * st + a * dt) * h * sw_ +
                          (hi * sh + p * dh) * sw_ + (wi * sw + q * dw);
                      gw[(((fi * c + ci) * kt + a) * kh + p) * kw + q] += go * x[xi];
                    }
            }
  }
  if (gb) {
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t fi = 0; fi < f; ++fi)
        for (std::size_t s = 0; s < to * ho * wo; ++s)
          gb[fi] += g[((ni * f + fi) * to) * ho * wo + s];
  }
}

}  // namespace conv_kernels

// x [N,C,T,H,W] * w [F,C,kt,kh,kw] + b [F] -> [N,F,T',H',W']
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv3dSpec& spec) {
  spec.validate();
  if (x.shape().size() != 5 || w.shape().size() != 5 || b.shape().size() != 1)
    throw UsageError("conv3d: expects x[N,C,T,H,W], w[F,C,kt,kh,kw], b[F]");
  const std::size_t n = x.shape()[0], c = x.shape()[1], t = x.shape()[2],
                    h = x.shape()[3], w_in = x.shape()[4];
  const std::size_t f = w.shape()[0];
  if (c != spec.in_channels || f != spec.out_channels)
    throw ConfigError("conv3d: spec channels disagree with tensors");
  if (w.shape()[1] != c || w.shape()[2] != spec.kernel[0] ||
      w.shape()[3] != spec.kernel[1] || w.shape()[4] != spec.kernel[2] ||
      b.shape()[0] != f)
    throw ConfigError("conv3d: weight/bias shape mismatch, got w" +
                      shape_str(w.shape()));
  const std::size_t to = spec.out_extent(0, t), ho = spec.out_extent(1, h),
                    wo = spec.out_extent(2, w_in);
  std::vector<T> out(n * f * to * ho * wo);
  conv_kernels::forward_parallel(x.value().data(), w.value().data(),
                                 b.value().data(), out.data(), n, c, t, h, w_in, f,
                                 spec, to, ho, wo);
  detail::check_finite(out, "conv3d");
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return detail::make_node<T>(
      {n, f, to, ho, wo}, std::move(out), {x, w, b},
      [px, pw, pb, n, c, t, h, w_in, f, spec, to, ho, wo](auto& node) {
        conv_kernels::backward_parallel(
            px->value.data(), pw->value.data(), node.grad.data(),
            px->requires_grad ? px->grad_buf().data() : nullptr,
            pw->requires_grad ? pw->grad_buf().data() : nullptr,
            pb->requires_grad ? pb->grad_buf().data() : nullptr, n, c, t, h, w_in,
            f, spec, to, ho, wo);
      });
}

}  // namespace emg
