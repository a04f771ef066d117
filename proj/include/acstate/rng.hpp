#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace acstate {

/// Seeded random stream. Every stochastic component takes one of these
/// explicitly; streams with different ids never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    engine_.seed(seq);
  }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace acstate
