#ifndef EVSI_RANDOM_HPP
#define EVSI_RANDOM_HPP

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace evsi {

/// Seedable xoshiro256++ generator with (seed, stream) derivation.
///
/// Streams are keyed by hashing the pair through SplitMix64, so any worker can
/// reconstruct the generator for a given outer draw without touching shared
/// state. Satisfies UniformRandomBitGenerator, so it plugs into <random>
/// distributions directly.
class RandomSource {
 public:
  using result_type = std::uint64_t;

  explicit RandomSource(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform draw on the open interval (0, 1).
  double uniform();
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Mixes several 64-bit keys into one stream id (order sensitive).
std::uint64_t stream_key(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace evsi

#endif  // EVSI_RANDOM_HPP
