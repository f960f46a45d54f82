#pragma once

// Deterministic hashing and pseudo-random helpers.
//
// Everything here is fixed-width integer arithmetic, so results are
// bit-identical on every platform and standard library.  The standard
// <random> distributions are deliberately avoided: their outputs are
// implementation-defined and would break reproducibility guarantees.

#include <cstdint>
#include <string_view>
#include <vector>

namespace ike::rng {

/** FNV-1a 64-bit hash of a byte string. */
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/** splitmix64 step: advances the state and returns the next value. */
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/** Order-sensitive combination of two 64-bit values. */
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(state);
}

/** Tiny deterministic generator used for sampling and shuffling. */
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() { return splitmix64(state_); }

  /** Uniform double in [0, 1) with 53 bits of randomness. */
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /** Uniform integer in [0, n).  n must be positive. */
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

/** In-place Fisher-Yates shuffle driven by a SplitMix stream. */
template <typename T>
void shuffle(std::vector<T>& items, SplitMix& gen) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(gen.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/** k distinct indices drawn without replacement from [0, n), in draw order. */
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t k,
                                                           SplitMix& gen) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (k > n) k = n;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(gen.next_below(n - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace ike::rng
