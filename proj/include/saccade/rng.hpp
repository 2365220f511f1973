#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace saccade {

/// Seeded generator. The engine is mt19937_64; the distribution transforms
/// are written out here so streams do not depend on the standard library's
/// unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    auto range = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
    auto wide = static_cast<unsigned __int128>(next_u64()) * range;
    return lo + static_cast<int>(static_cast<std::uint64_t>(wide >> 64));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = uniform_int(0, static_cast<int>(i));
      using std::swap;
      swap(first[i], first[j]);
    }
  }

  /// Independent child stream, derived deterministically from this one.
  Rng fork() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace saccade
