#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace emg {

// Deterministic generator with hand-rolled distributions. std:: distribution
// output is implementation-defined, which breaks bit-reproducible runs, so
// everything random in the project flows through this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // xorshift64* core
  std::uint64_t next_u64() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // modulo bias negligible for n << 2^64; masks and shuffles here use n <= 64
    return next_u64() % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // normal truncated to |z| <= 2, for fan-in scaled weight init
  double truncated_normal() {
    double z;
    do {
      z = normal();
    } while (std::abs(z) > 2.0);
    return z;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent child stream, for per-component seeding
  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0xbf58476d1ce4e5b9ull));
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace emg
