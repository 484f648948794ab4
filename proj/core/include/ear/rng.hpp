#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace ear {

// splitmix64 finalizer. Used both as a bit mixer and as the stream
// derivation function so that results do not depend on library internals.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the bytes of a string. Stable across platforms and runs,
// unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic random stream. All randomness in the toolkit flows from one
// top-level seed, fanned out into named substreams so that unrelated
// consumers (sampling, init, shuffle, split) never perturb each other.
//
// Generator: xoshiro256** seeded via splitmix64. Self-contained so the
// sequence is identical on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Substream keyed by (seed, name) or (seed, name, index). The index form
  // is used for per-epoch and per-video streams.
  static RngStream substream(std::uint64_t seed, std::string_view name);
  static RngStream substream(std::uint64_t seed, std::string_view name,
                             std::uint64_t index);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();

  // Uniform integer in [lo, hi). Requires lo < hi. Unbiased (rejection
  // sampling on the raw 64-bit stream).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller on the uniform stream.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool have_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace ear
