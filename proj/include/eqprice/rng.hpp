#pragma once

#include <cstdint>

namespace eqprice {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th draw of stream `key` is mix64(key + i * golden).
/// Streams are derived from (seed, tags...) so draws do not depend on evaluation order.
class StreamRng {
 public:
  explicit StreamRng(std::uint64_t key) : key_(mix64(key)) {}

  static StreamRng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t k = mix64(seed);
    k = mix64(k ^ a);
    k = mix64(k ^ (b + 0x632be59bd9b4e019ULL));
    k = mix64(k ^ (c + 0x85157af5ULL));
    return StreamRng(k);
  }

  std::uint64_t next() { return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal by Box-Muller (portable, unlike std::normal_distribution).
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eqprice
