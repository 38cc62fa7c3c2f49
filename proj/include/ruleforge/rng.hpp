#pragma once

#include <cmath>
#include <cstdint>

namespace ruleforge {

// Counter-based 64-bit generator (SplitMix64). The state advances by a fixed
// increment and each output is a bijective mix of the counter, so a stream is
// fully determined by (seed, stream_index) and can be split without
// coordination: stream k of a run is `Rng::stream(seed, k)`.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t state) : state_(state) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  // Derives an independent stream from a root seed and a stream index.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix(seed ^ mix(index + 0x9E3779B97F4A7C15ull)));
  }

  // Two-level split for nested streams, e.g. (seed, step, episode).
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(mix(mix(seed ^ mix(a + 0x9E3779B97F4A7C15ull)) ^
                   mix(b + 0xD1B54A32D192ED03ull)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift; bias is negligible for the n used here (n << 2^32)
    // and the mapping is deterministic across platforms.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  int next_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Standard normal via Box-Muller; draws two uniforms per sample so the
  // stream position does not depend on rejection.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_ = 0;
};

}  // namespace ruleforge
