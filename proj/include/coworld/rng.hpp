#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace coworld {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that draws are
// bit-identical across platforms and standard-library versions (training
// runs must replay byte-exactly from a seed).
//
// fork(name) derives an independent stream from the *construction* seed and
// the stream name only — consuming draws from the parent never shifts a
// fork. That property keeps e.g. target-domain draws identical whether or
// not source-domain code ran in between.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return (next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller (second value cached)
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    cached_ = mag * std::sin(two_pi * u2);
    have_cached_ = true;
    return mag * std::cos(two_pi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  Rng fork(std::string_view stream) const {
    uint64_t h = 1469598103934665603ull ^ seed_;
    h = fnv_step(h, seed_ >> 32);
    for (char c : stream) h = fnv_step(h, static_cast<uint64_t>(static_cast<unsigned char>(c)));
    return Rng(h);
  }

  Rng fork(std::string_view stream, uint64_t index) const {
    Rng base = fork(stream);
    uint64_t h = 1469598103934665603ull ^ base.seed_;
    h = fnv_step(h, index);
    return Rng(h);
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static uint64_t fnv_step(uint64_t h, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffull;
      h *= 1099511628211ull;
    }
    return h;
  }

  uint64_t seed_;
  uint64_t state_[4];
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace coworld
