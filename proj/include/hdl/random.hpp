#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hdl/common.hpp"

namespace hdl {

// splitmix64 finalizer; used to derive independent per-sample streams from
// (seed, index) so generation order never affects the output.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 1));
}

// Deterministic RNG built on mt19937_64 with explicit value mappings.
// std::uniform_real_distribution and friends are implementation-defined, so
// every mapping here is written out to keep outputs identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1): 53-bit mantissa fill.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) via rejection-free scaled draw. n must be > 0.
  std::int64_t uniform_int(std::int64_t n) {
    HDL_CHECK(n > 0, "uniform_int: n must be positive, got ", n);
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller; draws two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard log(0).
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// He-uniform bound for a layer with the given fan-in: U(-b, b), b = sqrt(6/fan_in).
inline double he_uniform_bound(std::int64_t fan_in) {
  HDL_CHECK(fan_in > 0, "he_uniform_bound: fan_in must be positive");
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

}  // namespace hdl
