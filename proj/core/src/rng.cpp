#include "dmm/rng.hpp"

#include <stdexcept>

namespace dmm {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + kGolden))) {}

Rng::result_type Rng::operator()() {
  return mix64(key_ + (++counter_) * kGolden);
}

double Rng::uniform01() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  // Lemire's rejection keeps the result unbiased.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = (*this)();
    if (r >= threshold) return r % n;
  }
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix64(key_ ^ 0xA5A5A5A5A5A5A5A5ULL), stream);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view component, std::uint64_t index) {
  // FNV-1a over the component name, then mixed with master and index.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : component) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return mix64(master ^ mix64(h) ^ mix64(index * kGolden + 1));
}

}  // namespace dmm
