#include "c2f/rng.hpp"

#include <cmath>

#include "c2f/common.hpp"

namespace c2f::rng {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace

std::uint64_t Stream::mix(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Stream Stream::child(std::uint64_t tag) const {
  // Chained, order-sensitive derivation. A plain XOR combine would be
  // commutative and self-inverse, so child(a).child(b) would collide with
  // child(b).child(a) and a tag repeated at two levels would cancel out.
  return Stream(mix(key_ ^ mix(tag)));
}

Stream Stream::child(std::string_view tag) const { return child(fnv1a(tag)); }

std::uint64_t Stream::next_u64() {
  state_ += kGolden;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Stream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Stream::next_below(std::uint64_t n) {
  if (n == 0) throw ContractError("rng: next_below(0)");
  // Lemire's nearly-divisionless bounded sampling.
  __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    const std::uint64_t t = (0 - n) % n;
    while (lo < t) {
      m = static_cast<__uint128_t>(next_u64()) * n;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Stream::next_normal() {
  const double u1 = 1.0 - next_double();  // (0, 1]
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

double Stream::next_gamma(double shape) {
  if (!(shape > 0.0)) throw ContractError("rng: gamma shape must be positive");
  if (shape < 1.0) {
    const double u = 1.0 - next_double();
    return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = next_normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - next_double();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

std::vector<double> Stream::next_dirichlet(const std::vector<double>& concentration) {
  std::vector<double> draw(concentration.size());
  double total = 0.0;
  for (std::size_t i = 0; i < concentration.size(); ++i) {
    draw[i] = next_gamma(concentration[i]);
    total += draw[i];
  }
  if (total <= 0.0) {  // underflow guard for extreme concentrations
    const double uniform = 1.0 / static_cast<double>(draw.size());
    for (double& d : draw) d = uniform;
    return draw;
  }
  for (double& d : draw) d /= total;
  return draw;
}

std::vector<std::size_t> Stream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = next_below(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::vector<std::size_t> Stream::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw ContractError("rng: sample_without_replacement k > n");
  // Partial Fisher-Yates: first k entries of a shuffle of [0, n).
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + next_below(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace c2f::rng
