#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fsnas/hash.hpp"

namespace fsnas {

// Deterministic splitmix64 stream. All randomness in the project flows from
// one of these, so results are reproducible from the run seed alone; derived
// streams are obtained with split() so consumers cannot perturb each other.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), rejection-sampled so the distribution is exactly uniform
  std::uint64_t randint(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream named by a label; order-insensitive.
  Rng split(std::string_view label) const {
    std::uint64_t h = fnv1a64(label, state_ ^ 0xa5a5a5a5deadbeefull);
    return Rng(h);
  }

  Rng split(std::uint64_t salt) const {
    ContentHasher h;
    h.update_pod(state_);
    h.update_pod(salt);
    return Rng(h.digest());
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace fsnas
