#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace mdseg {

/// Counter-style deterministic RNG (splitmix64 core).
///
/// Every random draw in the project is derived from a base seed plus an
/// explicit integer path (stream id, iteration, item index, ...). Two runs
/// with the same seed therefore produce bit-identical draws, and resuming a
/// run at iteration k needs no saved generator state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derive an independent stream from (seed, path...).
  static Rng keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::uint64_t p : path) s = splitmix(s ^ (p + 0x9e3779b97f4a7c15ull));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform double in [0, 1).
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + std::int64_t(next_u64() % span);
  }

  bool bernoulli(double p) { return next_unit() < p; }

  /// Standard normal via Box-Muller (one value per call; pair is not cached
  /// so the draw count stays predictable).
  double normal() {
    double u1 = double((next_u64() >> 11) | 1ull) * 0x1.0p-53;  // (0, 1)
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    return mix(z);
  }

  std::uint64_t state_;
};

/// Fixed stream ids so draw sites never collide across subsystems.
namespace rng_stream {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kDataGen = 2;
constexpr std::uint64_t kBatch = 3;
constexpr std::uint64_t kWeakAug = 4;
constexpr std::uint64_t kStrongAug = 5;
constexpr std::uint64_t kMask = 6;
}  // namespace rng_stream

}  // namespace mdseg
