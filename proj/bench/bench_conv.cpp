// Timing comparison of the serial reference and OpenMP conv3d kernels.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "emgcaps/conv3d.hpp"
#include "emgcaps/rng.hpp"

using namespace emg;

namespace {

struct Case {
  const char* name;
  std::size_t n, c, t, h, w;
  Conv3dSpec spec;
};

template <class F>
double time_best_ms(F&& fn, int repeats) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = 5;
  if (argc > 1) repeats = std::max(1, std::atoi(argv[1]));

  const std::vector<Case> cases{
      {"window head", 8, 2, 40, 6, 6,
       {.in_channels = 2, .out_channels = 16, .kernel = {3, 2, 2}}},
      {"dilated mid", 8, 16, 36, 5, 5,
       {.in_channels = 16, .out_channels = 32, .kernel = {3, 2, 2},
        .dilation = {4, 1, 1}}},
      {"strided caps", 8, 32, 24, 3, 3,
       {.in_channels = 32, .out_channels = 32, .kernel = {3, 1, 1},
        .stride = {2, 2, 2}}},
      {"paper slice", 1, 2, 410, 6, 6,
       {.in_channels = 2, .out_channels = 32, .kernel = {9, 2, 2}}},
  };

#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (no OpenMP)\n");
#endif
  std::printf("%-14s %12s %12s %9s %8s\n", "case", "serial (ms)", "openmp (ms)",
              "speedup", "match");

  Rng rng(1);
  bool all_match = true;
  for (const auto& cs : cases) {
    const auto to = cs.spec.out_extent(0, cs.t);
    const auto ho = cs.spec.out_extent(1, cs.h);
    const auto wo = cs.spec.out_extent(2, cs.w);
    std::vector<double> x(cs.n * cs.c * cs.t * cs.h * cs.w),
        w(cs.spec.out_channels * cs.c * cs.spec.kernel[0] * cs.spec.kernel[1] *
          cs.spec.kernel[2]),
        b(cs.spec.out_channels);
    for (auto& v : x) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<double> out_serial(cs.n * cs.spec.out_channels * to * ho * wo),
        out_parallel(out_serial.size());

    const double ms_serial = time_best_ms(
        [&] {
          conv_kernels::forward_serial(x.data(), w.data(), b.data(),
                                       out_serial.data(), cs.n, cs.c, cs.t, cs.h,
                                       cs.w, cs.spec.out_channels, cs.spec, to, ho,
                                       wo);
        },
        repeats);
    const double ms_parallel = time_best_ms(
        [&] {
          conv_kernels::forward_parallel(x.data(), w.data(), b.data(),
                                         out_parallel.data(), cs.n, cs.c, cs.t,
                                         cs.h, cs.w, cs.spec.out_channels, cs.spec,
                                         to, ho, wo);
        },
        repeats);

    const bool match = std::memcmp(out_serial.data(), out_parallel.data(),
                                   out_serial.size() * sizeof(double)) == 0;
    all_match = all_match && match;
    std::printf("%-14s %12.3f %12.3f %8.2fx %8s\n", cs.name, ms_serial,
                ms_parallel, ms_serial / ms_parallel, match ? "yes" : "NO");
  }
  if (!all_match) {
    std::fprintf(stderr, "kernel outputs diverge\n");
    return 1;
  }
  return 0;
}
