#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace raw {

// SplitMix64 finalizer. Used to derive independent, reproducible child
// streams (per image, per Monte-Carlo block, per epoch) from one seed so
// results never depend on thread count or iteration order.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  return mix64(parent ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag,
                                    std::uint64_t index) {
  return derive_seed(derive_seed(parent, tag), index);
}

// Stream tags, one per consumer of randomness.
namespace stream {
inline constexpr std::uint64_t kVerifierInit = 1;
inline constexpr std::uint64_t kWatermarkInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kViews = 4;
inline constexpr std::uint64_t kAugment = 5;
inline constexpr std::uint64_t kSmoothing = 6;
inline constexpr std::uint64_t kCorpus = 7;
inline constexpr std::uint64_t kHeldout = 8;
inline constexpr std::uint64_t kCalibration = 9;
inline constexpr std::uint64_t kFresh = 10;
inline constexpr std::uint64_t kTest = 11;
inline constexpr std::uint64_t kEval = 12;
}  // namespace stream

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Fills `out` with IID N(0, sigma^2) values from xoshiro256** and the
// Box-Muller transform. A pure function of (seed, out.size(), sigma); used
// on the Monte-Carlo hot path where std::normal_distribution is too slow.
inline void fill_normal(std::span<float> out, std::uint64_t seed, double sigma) {
  std::uint64_t s[4];
  std::uint64_t z = seed;
  for (auto& w : s) {
    z += 0x9e3779b97f4a7c15ULL;
    w = mix64(z);
  }
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  auto next = [&]() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  };
  constexpr double kInv53 = 1.0 / 9007199254740992.0;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double u1 = (static_cast<double>(next() >> 11) + 1.0) * kInv53;  // (0, 1]
    const double u2 = static_cast<double>(next() >> 11) * kInv53;          // [0, 1)
    const double r = sigma * std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    out[i] = static_cast<float>(r * std::cos(a));
    if (i + 1 < out.size()) out[i + 1] = static_cast<float>(r * std::sin(a));
  }
}

}  // namespace raw
