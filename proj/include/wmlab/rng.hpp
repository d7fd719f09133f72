#pragma once

#include <cstddef>
#include <cstdint>

namespace wmlab {

/// Counter-based generator: draw i is SplitMix64(seed + (i + 1) * 0x9E3779B97F4A7C15).
///
/// The output is a pure function of (seed, counter), so sequences are identical on
/// every platform and independent streams can be derived without shared state.
/// Normal variates use the Box-Muller transform over two uniform draws; the
/// standard library distributions are avoided because their algorithms are
/// implementation-defined.
class SeededRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGolden);
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  double normal();

  /// Independent stream for worker `index`, derived from (seed, index) only.
  SeededRng derive(std::uint64_t index) const {
    return SeededRng(mix(seed_ ^ mix(index + 0xD1B54A32D192ED03ULL)));
  }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wmlab
