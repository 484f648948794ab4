#include "ear/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ear {

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}
}  // namespace

RngStream::RngStream(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) {
    s = splitmix64(s);
    word = s;
  }
}

RngStream RngStream::substream(std::uint64_t seed, std::string_view name) {
  return RngStream(splitmix64(seed) ^ stable_hash(name));
}

RngStream RngStream::substream(std::uint64_t seed, std::string_view name,
                               std::uint64_t index) {
  return RngStream(splitmix64(splitmix64(seed) ^ stable_hash(name)) ^
                   splitmix64(index + 0x9e3779b97f4a7c15ULL));
}

std::uint64_t RngStream::next_u64() {
  // xoshiro256**
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo >= hi) {
    throw std::invalid_argument("uniform_int: empty range");
  }
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t r = next_u64();
  while (r >= limit) {
    r = next_u64();
  }
  return lo + static_cast<std::int64_t>(r % range);
}

double RngStream::normal() {
  if (have_spare_normal_) {
    have_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  constexpr double two_pi = 6.283185307179586476925286766559;
  spare_normal_ = mag * std::sin(two_pi * u2);
  have_spare_normal_ = true;
  return mag * std::cos(two_pi * u2);
}

}  // namespace ear
