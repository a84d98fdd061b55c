#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dop {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// One root seed, split deterministically per named consumer
// ("env", "init", "buffer", "explore", ...).
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root) : root_(root) {}

  std::uint64_t seed_for(std::string_view consumer, std::uint64_t index = 0) const {
    return splitmix64(splitmix64(root_ ^ stable_hash(consumer)) + index);
  }
  Rng rng_for(std::string_view consumer, std::uint64_t index = 0) const {
    return Rng(seed_for(consumer, index));
  }
  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Inverse-CDF draw from a discrete distribution.
template <typename Probs>
int sample_categorical(Rng& rng, const Probs& p) {
  const double u = uniform01(rng);
  double acc = 0.0;
  const int n = static_cast<int>(p.size());
  for (int a = 0; a < n; ++a) {
    acc += p[a];
    if (u < acc) return a;
  }
  // Rounding: fall back to the last action with positive mass.
  for (int a = n - 1; a >= 0; --a)
    if (p[a] > 0.0) return a;
  return n - 1;
}

}  // namespace dop
