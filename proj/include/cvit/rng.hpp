#pragma once

#include <cmath>
#include <cstdint>

namespace cvit {

// Counter-based generator (SplitMix64). The whole kit draws randomness from
// this one algorithm so a fixed seed gives bit-identical streams across runs
// and platforms. split() derives an independent child stream, used for
// per-sample dataset generation.
class RngState {
 public:
  explicit RngState(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; one draw consumes two uniforms.
  double next_normal() {
    double u1 = 1.0 - next_uniform();  // (0, 1], keeps log finite
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476 * u2);
  }

  // Normal(0, std) with rejection outside +/- clip_sigmas standard deviations.
  double next_trunc_normal(double stddev, double clip_sigmas = 2.0) {
    double z;
    do {
      z = next_normal();
    } while (std::abs(z) > clip_sigmas);
    return z * stddev;
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  RngState split() { return RngState(next_u64()); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace cvit
