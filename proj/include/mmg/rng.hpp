// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_RNG_HPP
#define MMG_RNG_HPP

#include <cstdint>

namespace mmg {

/// splitmix64 (Steele, Lea, Flood 2014). Pinned here because population
/// splits must reproduce bit-for-bit across platforms and languages.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in (0, 1]: 53 high bits, shifted away from zero so logs
  /// stay finite.
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

private:
  std::uint64_t state_;
};

/// Independent substream for an indexed entity (e.g. one origin-destination
/// pair), so draw order never depends on iteration order.
inline SplitMix64 substream(std::uint64_t seed, std::uint64_t index) {
  return SplitMix64(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
}

} // namespace mmg

#endif // MMG_RNG_HPP
