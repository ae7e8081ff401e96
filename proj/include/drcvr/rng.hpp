#pragma once
// Counter-based 64-bit PRNG. Output i of a stream is mix64(key + i*GAMMA), the
// SplitMix64 finalizer over an affine counter, so any draw is a pure function
// of (key, counter) and results are identical across platforms and compilers.
// Streams are split by hashing a label (or child index) into the key; child
// streams never overlap the parent because the label hash perturbs the key,
// not the counter. No libstdc++ distribution objects are used anywhere:
// uniform/gaussian/shuffle are implemented here so sequences are portable.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace drcvr {

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
inline uint64_t hash_label(std::string_view s) {
  // FNV-1a 64, then one mix round to spread short labels.
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return mix64(h);
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(detail::mix64(seed)), counter_(0) {}

  // Child stream: independent of the parent and of siblings with other labels.
  Rng split(std::string_view label) const {
    Rng child(0);
    child.key_ = detail::mix64(key_ ^ detail::hash_label(label));
    child.counter_ = 0;
    return child;
  }
  Rng split(uint64_t index) const {
    Rng child(0);
    child.key_ = detail::mix64(key_ ^ detail::mix64(index + 0x9e3779b97f4a7c15ull));
    child.counter_ = 0;
    return child;
  }

  uint64_t next_u64() { return detail::mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0,1) with 53 random mantissa bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n) by rejection.
  uint64_t next_below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  // Box-Muller; one value per call, the pair's second half is discarded to
  // keep draw counts position-independent.
  double next_gaussian() {
    double u1 = next_double(), u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates, explicit so the permutation is platform-stable.
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t key() const { return key_; }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace drcvr
