#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <initializer_list>
#include <random>

namespace sgte {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive well-separated stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the substream identified by `path` under `seed`.
///
/// Replicate b of a Monte Carlo loop uses substream_seed(seed, {b}); nested
/// loops append further indices. The result depends only on the arguments, so
/// parallel schedules reproduce the serial output exactly.
inline std::uint64_t substream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return Rng(substream_seed(seed, path));
}

/// Standard normal draws via Box-Muller on 53-bit uniforms.
///
/// std::normal_distribution is implementation-defined; this keeps simulated
/// data identical across standard libraries.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform(rng);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  static double uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double uniform01(Rng& rng) { return NormalSampler::uniform(rng); }

/// Uniform integer in [0, n) without modulo bias.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = 0;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

/// Fisher-Yates shuffle with a portable index draw.
template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

}  // namespace sgte
