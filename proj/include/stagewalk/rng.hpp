#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

namespace stagewalk {

/// SplitMix64 finalizer. Used for seeding and for deriving substream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** (Blackman & Vigna). Deterministic across platforms; the
/// variate helpers below avoid std:: distributions, whose output is
/// implementation-defined.
///
/// Stream splitting: the generator for (master seed, stream, index) is
/// seeded from key = mix64(mix64(mix64(master) ^ stream) ^ index), expanding
/// the key into the 256-bit state with four SplitMix64 steps. Simulation uses
/// stream = group and index = path position within the group, so every path
/// owns an independent substream regardless of evaluation order.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept { reseed(seed); }

  static Rng substream(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept {
    return Rng(mix64(mix64(mix64(master) ^ stream) ^ index));
  }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t x = seed;
    for (auto& word : s_) {
      word = mix64(x);
      x += 0x9E3779B97F4A7C15ULL;
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Advances the state by 2^128 draws.
  void jump() noexcept {
    constexpr std::uint64_t kJump[] = {0x180EC6D33CFD0ABAULL, 0xD5A61266F0C9392CULL,
                                       0xA9582618E03FC9AAULL, 0x39ABDC4529B1661CULL};
    std::uint64_t t[4] = {0, 0, 0, 0};
    for (std::uint64_t word : kJump) {
      for (int b = 0; b < 64; ++b) {
        if (word & (std::uint64_t{1} << b)) {
          for (int i = 0; i < 4; ++i) t[i] ^= s_[i];
        }
        (*this)();
      }
    }
    for (int i = 0; i < 4; ++i) s_[i] = t[i];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Exponential with the given rate (inverse-CDF on 1-U, so never infinite).
  double exponential(double rate) noexcept { return -std::log1p(-uniform()) / rate; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Index drawn from a probability vector by inversion; falls back to the
  /// last positive entry when rounding leaves the cumulative sum short of 1.
  int categorical(std::span<const double> probs) noexcept {
    const double u = uniform();
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) last_positive = static_cast<int>(i);
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return last_positive;
  }

  /// Standard normal via Box-Muller (one variate per call).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace stagewalk
