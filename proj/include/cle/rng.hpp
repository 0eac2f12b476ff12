#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

// Deterministic stream derivation: same (seed, tags) -> same stream on every
// platform and run. Distribution transforms are hand-rolled because the
// stdlib ones are implementation-defined.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed ^ hash_tag(tag)) ^ a) ^ b);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no cached state
  double normal(double mean = 0.0, double stdev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stdev * r * std::cos(2.0 * M_PI * u2);
  }

  // integer in [0, n)
  int below(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

  void fill_normal(Tensor& t, double stdev, double mean = 0.0) {
    for (real& v : t.values_mut()) v = static_cast<real>(normal(mean, stdev));
  }

  std::vector<double> unit_vector(int d) {
    std::vector<double> v(static_cast<size_t>(d));
    double n2 = 0;
    do {
      n2 = 0;
      for (double& x : v) {
        x = normal();
        n2 += x * x;
      }
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cle
