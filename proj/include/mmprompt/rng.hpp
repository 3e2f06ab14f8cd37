#pragma once

#include <cstdint>

#include "mmprompt/tensor.hpp"

namespace mmprompt {

/// Counter-based generator: the i-th draw of a stream is a SplitMix64 hash of
/// (key, i), so streams are reproducible bit-for-bit and any number of
/// independent child streams can be split off a root seed by name.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child stream. Does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0);

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Named stream ids so the same root seed drives independent draws.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kBackbone = 2;
inline constexpr std::uint64_t kEncoders = 3;
inline constexpr std::uint64_t kPrompts = 4;
inline constexpr std::uint64_t kHead = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kDirectAdd = 7;
inline constexpr std::uint64_t kEval = 8;
}  // namespace streams

}  // namespace mmprompt
