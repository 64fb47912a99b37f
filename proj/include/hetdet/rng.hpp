#pragma once

#include <cmath>
#include <cstdint>

// Counter-based splittable generator. Output i of a stream keyed by k is a
// bijective 64-bit hash of (k, i): the value depends only on (key, counter),
// never on which thread or in what order draws happen, which is what makes
// the simulation lab bit-reproducible across thread counts. split(index)
// derives an independent child stream; children with distinct indices get
// distinct keys, so replicates never share a stream.

namespace hetdet {

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed)
      : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)) {}

  CounterRng split(std::uint64_t index) const {
    return CounterRng(from_key{}, hash(mix(key_ ^ 0xD2B74407B1CE6E93ull), index));
  }

  std::uint64_t next_u64() { return hash(key_, counter_++); }

  // uniform on (0,1]; never 0, so it can feed log() and inverse-CDF tails
  double uniform01() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller; consumes exactly two uniforms per call
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.28318530717958647693 * u2);
  }

  bool bernoulli(double prob) { return uniform01() <= prob; }

  // uniform integer in [0, m), m >= 1
  std::uint64_t below(std::uint64_t m) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * m) >> 64);
  }

 private:
  struct from_key {};
  CounterRng(from_key, std::uint64_t key) : key_(key) {}

  // SplitMix64 finalizer: full-avalanche bijection on 64 bits
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  // bijective in ctr for fixed key, so a stream never repeats a value
  static std::uint64_t hash(std::uint64_t key, std::uint64_t ctr) {
    const std::uint64_t z = mix(key + 0x9E3779B97F4A7C15ull * (ctr + 1));
    return mix(z + key);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace hetdet
