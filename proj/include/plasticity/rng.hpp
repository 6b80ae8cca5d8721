#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

/// Counter-based 64-bit generator. Output i of a stream with key k is
/// splitmix64_finalize(k + i * golden), so a stream seeded with s yields the
/// classic SplitMix64 sequence for s. Child streams are derived by hashing a
/// label into the key; sampling never depends on platform library code.
class RngStream {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit RngStream(std::uint64_t seed = 0) noexcept : key_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t hash_label(std::string_view label) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  /// Independent child stream; does not advance this stream.
  RngStream split(std::string_view label) const noexcept {
    return RngStream(mix(mix(key_ ^ 0x5851F42D4C957F2DULL) ^ hash_label(label)));
  }

  RngStream split(std::uint64_t index) const noexcept {
    return RngStream(mix(mix(key_ ^ 0x14057B7EF767814FULL) + mix(index + kGolden)));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) {
      throw ArgumentError("uniform: require lo < hi, got lo=" + std::to_string(lo) +
                          " hi=" + std::to_string(hi));
    }
    const double x = lo + (hi - lo) * uniform01();
    return x < hi ? x : std::nextafter(hi, lo);
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Tensor sample_uniform(RngStream& rng, double lo, double hi, Shape shape) {
  if (!(lo < hi)) {
    throw ArgumentError("sample_uniform: require lo < hi, got lo=" + std::to_string(lo) +
                        " hi=" + std::to_string(hi));
  }
  Tensor out(std::move(shape));
  for (double& v : out.values()) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace plasticity
