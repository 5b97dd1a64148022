#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "c2f/rng.hpp"
#include "doctest.h"

using c2f::rng::Stream;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same key reproduces the same sequence") {
  Stream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different keys diverge") {
  Stream a(42), b(43);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
}

TEST_CASE("child streams are keyed, not sequenced") {
  // Deriving a child must not depend on how much of the parent was consumed.
  Stream root(7);
  root.next_u64();
  root.next_u64();
  Stream after_draws = root.child("mask");
  Stream fresh = Stream(7).child("mask");
  CHECK(after_draws.next_u64() == fresh.next_u64());

  // Distinct tags give unrelated streams.
  Stream x = Stream(7).child("mask");
  Stream y = Stream(7).child("init");
  CHECK(x.next_u64() != y.next_u64());

  // Integer and string tags live in separate key spaces.
  Stream i0 = Stream(7).child(std::uint64_t{0});
  Stream s0 = Stream(7).child("0");
  CHECK(i0.next_u64() != s0.next_u64());
}

TEST_CASE("child derivation is path-sensitive") {
  // Swapping tag order must change the stream.
  Stream ab = Stream(7).child(std::uint64_t{3}).child(std::uint64_t{9});
  Stream ba = Stream(7).child(std::uint64_t{9}).child(std::uint64_t{3});
  CHECK(ab.next_u64() != ba.next_u64());

  // A tag repeated around an inner level must not cancel out: for a
  // commutative combine, child(i).child("p").child(i) would collapse to
  // child("p") for every i.
  Stream root(11);
  Stream a = root.child(std::uint64_t{0}).child("p").child(std::uint64_t{0});
  Stream b = root.child(std::uint64_t{1}).child("p").child(std::uint64_t{1});
  CHECK(a.next_u64() != b.next_u64());
  CHECK(a.next_u64() != root.child("p").next_u64());

  // Sibling paths built from the same tag multiset stay distinct.
  Stream sw1 = root.child("mask").child(std::uint64_t{3}).child("budget").child(std::uint64_t{7});
  Stream sw2 = root.child("mask").child(std::uint64_t{7}).child("budget").child(std::uint64_t{3});
  CHECK(sw1.next_u64() != sw2.next_u64());
}

TEST_CASE("next_double covers [0,1)") {
  Stream s(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double v = s.next_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("next_below is in range and close to uniform") {
  Stream s(2);
  const std::uint64_t n = 10;
  std::vector<int> counts(n, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    std::uint64_t v = s.next_below(n);
    REQUIRE(v < n);
    ++counts[v];
  }
  for (int c : counts) {
    CHECK(c > draws / 10 - 600);
    CHECK(c < draws / 10 + 600);
  }
}

TEST_CASE("next_normal has the right first two moments") {
  Stream s(3);
  const int draws = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    double v = s.next_normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / draws;
  double var = sq / draws - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("next_gamma matches mean and variance of Gamma(shape, 1)") {
  for (double shape : {0.5, 1.0, 2.5, 8.0}) {
    Stream s(4);
    const int draws = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < draws; ++i) {
      double v = s.next_gamma(shape);
      REQUIRE(v >= 0.0);
      sum += v;
      sq += v * v;
    }
    double mean = sum / draws;
    double var = sq / draws - mean * mean;
    CHECK(std::abs(mean - shape) < 0.08 * std::max(1.0, shape));
    CHECK(std::abs(var - shape) < 0.15 * std::max(1.0, shape));
  }
}

TEST_CASE("next_dirichlet is a probability vector with the right mean") {
  std::vector<double> conc{2.0, 1.0, 1.0};
  Stream s(5);
  const int draws = 20000;
  std::vector<double> mean(conc.size(), 0.0);
  for (int i = 0; i < draws; ++i) {
    auto v = s.next_dirichlet(conc);
    REQUIRE(v.size() == conc.size());
    double total = 0.0;
    for (double x : v) {
      REQUIRE(x >= 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t j = 0; j < v.size(); ++j) mean[j] += v[j];
  }
  for (auto& m : mean) m /= draws;
  CHECK(std::abs(mean[0] - 0.5) < 0.01);
  CHECK(std::abs(mean[1] - 0.25) < 0.01);
  CHECK(std::abs(mean[2] - 0.25) < 0.01);
}

TEST_CASE("permutation is a bijection and deterministic") {
  Stream s(6);
  auto p = s.permutation(257);
  REQUIRE(p.size() == 257);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  auto q = Stream(6).permutation(257);
  CHECK(p == q);
}

TEST_CASE("sample_without_replacement yields k distinct in-range values") {
  Stream s(8);
  auto k = s.sample_without_replacement(100, 17);
  REQUIRE(k.size() == 17);
  std::vector<std::size_t> sorted = k;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(sorted.back() < 100);

  // k = n must be a full permutation.
  auto full = Stream(8).sample_without_replacement(12, 12);
  std::sort(full.begin(), full.end());
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i] == i);
}

TEST_SUITE_END();
