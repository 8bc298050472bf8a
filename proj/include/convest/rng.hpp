#pragma once

// Deterministic random sampling. Distribution inverses are hand-rolled on
// top of the (portable) mt19937_64 bit stream, so results do not depend on
// the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <random>

namespace convest {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Substream seed for (master, index) pairs; replicates get independent,
// order-free streams.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0x9E3779B97F4A7C15ULL * (index + 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform on (0,1); never returns 0 or 1
  double uniform() {
    const std::uint64_t bits = gen_() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_index(std::uint64_t n) { return gen_() % n; }
  bool bernoulli(double p) { return uniform() < p; }
  double exponential(double rate) { return -std::log(uniform()) / rate; }
  // Weibull with scale gamma and shape nu
  double weibull(double scale, double shape) {
    return scale * std::pow(-std::log(uniform()), 1.0 / shape);
  }
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * m;
    have_cached_ = true;
    return u * m;
  }

 private:
  std::mt19937_64 gen_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace convest
