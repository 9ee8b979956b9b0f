#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace dmm {

// Counter-based generator: the n-th output is a pure function of
// (seed, stream, n), so independent streams never overlap and any
// position in a stream can be reproduced without replaying it.
//
// Satisfies UniformRandomBitGenerator, so std distributions accept it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // A child generator on a stream derived from this generator's key.
  [[nodiscard]] Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Stable sub-seed for a named component; used to derive every seed in a
// run from a single master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view component, std::uint64_t index = 0);

}  // namespace dmm
