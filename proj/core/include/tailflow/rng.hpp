#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tailflow {

// SplitMix64 finalizer. Bijective on 64-bit states, so distinct inputs are
// guaranteed distinct outputs; this is what makes derived run seeds provably
// collision-free.
std::uint64_t splitmix64(std::uint64_t x);

// Seed for sub-stream `stream` of a base seed. Injective in `stream` for a
// fixed base.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Combine a running 64-bit fingerprint with one more word.
std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);

// Deterministic random source. The engine (std::mt19937_64) has a
// standard-specified output sequence, and every distribution below is
// implemented here rather than taken from <random>, whose distributions are
// implementation-defined. Given a seed, the stream of variates is a pure
// function of the call sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  // [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // (0, 1) strictly: midpoints (k + 1/2) / 2^53, never 0 or 1.
  double open01() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal();

  // Exp(1).
  double exponential();

  // Gamma(shape, scale=1), Marsaglia-Tsang; boosted for shape < 1.
  double gamma(double shape);

  // +1 or -1 with equal probability.
  double rademacher() { return (eng_() & 1u) ? 1.0 : -1.0; }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// First k elements of a random permutation of {0, ..., n-1} (partial
// Fisher-Yates), ascending order not guaranteed.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k);

}  // namespace tailflow
