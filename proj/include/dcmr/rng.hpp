#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dcmr {

// Counter-style deterministic RNG. Every consumer derives an independent
// stream from (seed, key...) so unrelated draws never share state; this is
// what makes resume-determinism and config-ablation equality hold bit-exactly.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return detail::splitmix64(s);
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a, then one splitmix round to spread short keys.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix64(h);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller; second variate discarded so the
  // stream position is a pure function of the draw count.
  double next_gaussian() {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant here; stability is.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
  std::uint64_t state_;
};

// Stream derivation: rng_stream(seed, "dropout", step, item) and friends.
inline Rng rng_stream(std::uint64_t seed) { return Rng(detail::splitmix64(seed)); }

template <typename... Keys>
Rng rng_stream(std::uint64_t seed, Keys... keys) {
  std::uint64_t s = seed;
  ((s = hash_mix(s, static_cast<std::uint64_t>(keys))), ...);
  return Rng(s);
}

}  // namespace dcmr
