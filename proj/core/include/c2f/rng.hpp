#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace c2f::rng {

// Keyed deterministic random stream (splitmix64 core).
//
// Streams are named, not sequenced: child(tag) derives an independent
// stream from (key, tag), so e.g. (seed, "mask", step, granularity)
// always yields the same draws no matter what else ran before. The
// derivation is path-sensitive: child(a).child(b) and child(b).child(a)
// are distinct streams. All distributions are implemented here rather
// than with <random> because the standard distributions are not
// bit-reproducible across library implementations.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key), state_(mix(key)) {}

  Stream child(std::uint64_t tag) const;
  Stream child(std::string_view tag) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double next_double();
  // Uniform integer in [0, n), unbiased. n >= 1.
  std::uint64_t next_below(std::uint64_t n);
  // Standard normal (Box-Muller, one value per call).
  double next_normal();
  // Gamma(shape, 1), shape > 0 (Marsaglia-Tsang).
  double next_gamma(double shape);
  // Dirichlet over the given concentration vector.
  std::vector<double> next_dirichlet(const std::vector<double>& concentration);

  // Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);
  // k distinct indices from [0, n), unordered. k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  static std::uint64_t mix(std::uint64_t x);
  std::uint64_t key_;    // immutable; children derive from this
  std::uint64_t state_;  // advances as values are drawn
};

}  // namespace c2f::rng
