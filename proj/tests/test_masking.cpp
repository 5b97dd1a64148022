#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <utility>
#include <vector>

#include "c2f/masking.hpp"
#include "c2f/synthdata.hpp"
#include "doctest.h"
#include "json.hpp"

using c2f::ContractError;
using c2f::mask::build_mask_plan;
using c2f::mask::compose_progressive_mask;
using c2f::mask::instance_guided_mask;
using c2f::mask::MaskConfig;
using c2f::mask::MaskMode;
using c2f::mask::MaskPlan;
using c2f::mask::patch_object_flags;
using c2f::mask::patch_semantic_labels;
using c2f::mask::random_mask;
using c2f::mask::sample_visible_budget;
using c2f::mask::schedule_alphas;
using c2f::mask::ScheduleConfig;
using c2f::mask::semantic_guided_mask;
using c2f::rng::Stream;
using c2f::tok::TokenLayout;

namespace {

std::size_t popcount(const std::vector<std::uint8_t>& m) {
  std::size_t c = 0;
  for (auto b : m) c += b;
  return c;
}

// Independent largest-remainder oracle: floors first, then hand out the
// remainder one unit at a time by repeatedly scanning for the best fractional
// part among bins with spare capacity (ties to the smaller index). Written
// greedily on purpose so a bug in the library's sort-based version would not
// be mirrored here.
std::vector<std::size_t> quota_oracle(const std::vector<double>& targets,
                                      const std::vector<std::size_t>& caps, std::size_t total) {
  const std::size_t n = targets.size();
  std::vector<std::size_t> counts(n);
  std::vector<double> frac(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto fl = static_cast<std::size_t>(std::floor(targets[i] + 1e-9));
    counts[i] = std::min(fl, caps[i]);
    frac[i] = targets[i] - static_cast<double>(fl);
    assigned += counts[i];
  }
  std::vector<bool> used(n, false);
  while (assigned < total) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i] || counts[i] >= caps[i]) continue;
      if (best == n || frac[i] > frac[best]) best = i;
    }
    if (best == n) {
      // Every bin took one unit this round; start the next round.
      std::fill(used.begin(), used.end(), false);
      continue;
    }
    used[best] = true;
    ++counts[best];
    ++assigned;
  }
  return counts;
}

// Blank aligned sample for hand-built label maps.
c2f::synth::MultiGranularSample blank_sample(std::size_t size, std::size_t class_count = 5) {
  c2f::synth::MultiGranularSample s;
  s.image_size = size;
  s.class_count = class_count;
  s.seed = 0;
  s.index = 0;
  s.rgb.assign(size * size * 3, 0.0);
  s.instance.assign(size * size, 0);
  s.semantic.assign(size * size, 0);
  return s;
}

std::vector<std::size_t> masked_per_class(const std::vector<std::uint8_t>& m,
                                          const std::vector<int>& labels,
                                          std::size_t class_count) {
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t p = 0; p < m.size(); ++p)
    if (m[p]) ++counts[static_cast<std::size_t>(labels[p])];
  return counts;
}

}  // namespace

TEST_SUITE_BEGIN("masking");

TEST_CASE("visible budget clamps at the extremes") {
  Stream root(7);
  const std::array<std::size_t, 3> all_visible{196, 196, 196};
  const std::array<std::size_t, 3> none_visible{0, 0, 0};
  for (std::size_t i = 0; i < 20; ++i) {
    const auto full = sample_visible_budget(root.child(i), 3 * 196, 196);
    CHECK(full.visible_counts == all_visible);
    const auto none = sample_visible_budget(root.child(1000 + i), 0, 196);
    CHECK(none.visible_counts == none_visible);
  }
  CHECK_THROWS_AS(sample_visible_budget(root.child(0u), 3 * 196 + 1, 196), ContractError);
}

TEST_CASE("visible budget sums exactly and is symmetric on average") {
  const std::size_t V = 98, N = 196, draws = 10000;
  Stream root(11);
  std::array<double, 3> mean{};
  for (std::size_t i = 0; i < draws; ++i) {
    const auto r = sample_visible_budget(root.child(i), V, N);
    std::size_t sum = 0;
    for (std::size_t g = 0; g < 3; ++g) {
      REQUIRE(r.visible_counts[g] <= N);
      sum += r.visible_counts[g];
      mean[g] += static_cast<double>(r.visible_counts[g]);
    }
    REQUIRE(sum == V);
  }
  for (std::size_t g = 0; g < 3; ++g) {
    mean[g] /= static_cast<double>(draws);
    CHECK(std::abs(mean[g] - 98.0 / 3.0) <= 1.0);
  }
}

TEST_CASE("patch labels take the majority class, ties to the smaller id") {
  auto s = blank_sample(8);  // one 8x8 patch
  for (std::size_t i = 0; i < 40; ++i) s.semantic[i] = 2;
  for (std::size_t i = 40; i < 64; ++i) s.semantic[i] = 4;
  CHECK(patch_semantic_labels(s, 8) == std::vector<int>{2});

  for (std::size_t i = 0; i < 32; ++i) s.semantic[i] = 3;
  for (std::size_t i = 32; i < 64; ++i) s.semantic[i] = 1;
  CHECK(patch_semantic_labels(s, 8) == std::vector<int>{1});

  std::fill(s.semantic.begin(), s.semantic.end(), std::uint8_t{3});
  CHECK(patch_semantic_labels(s, 8) == std::vector<int>{3});
}

TEST_CASE("patch object flags compare the object-pixel fraction to the threshold") {
  auto s = blank_sample(8);
  for (std::size_t i = 0; i < 16; ++i) s.instance[i] = 1;  // exactly 16/64 = 0.25
  CHECK(patch_object_flags(s, 8, 0.25) == std::vector<std::uint8_t>{1});
  s.instance[15] = 0;  // 15 pixels
  CHECK(patch_object_flags(s, 8, 0.25) == std::vector<std::uint8_t>{0});
  std::fill(s.instance.begin(), s.instance.end(), std::uint16_t{0});
  CHECK(patch_object_flags(s, 8, 0.25) == std::vector<std::uint8_t>{0});
}

TEST_CASE("semantic mask hits the per-region quotas exactly") {
  // 12 patches of class 0, 4 of class 1, k=8, equal weights -> 6 and 2.
  std::vector<int> labels(16, 0);
  for (std::size_t i = 12; i < 16; ++i) labels[i] = 1;
  Stream root(3);
  const std::vector<std::size_t> expected{6, 2};
  for (std::size_t t = 0; t < 50; ++t) {
    const auto m = semantic_guided_mask(labels, 8, {}, root.child(t));
    REQUIRE(popcount(m) == 8);
    CHECK(masked_per_class(m, labels, 2) == expected);
  }
}

TEST_CASE("semantic mask remainder tie goes to the smaller class id") {
  // Floors (3,1) of (3.5,1.5); the single remainder unit has a fractional-part
  // tie and must land on class 0 -> (4,1).
  std::vector<int> labels(10, 0);
  for (std::size_t i = 7; i < 10; ++i) labels[i] = 1;
  Stream root(5);
  const std::vector<std::size_t> expected{4, 1};
  for (std::size_t t = 0; t < 50; ++t) {
    const auto m = semantic_guided_mask(labels, 5, {}, root.child(t));
    CHECK(masked_per_class(m, labels, 2) == expected);
  }
}

TEST_CASE("semantic mask single region is plain uniform masking") {
  const std::size_t N = 12, k = 5, draws = 4000;
  std::vector<int> labels(N, 0);
  Stream root(9);
  std::vector<std::size_t> hits(N, 0);
  for (std::size_t t = 0; t < draws; ++t) {
    const auto m = semantic_guided_mask(labels, k, {}, root.child(t));
    REQUIRE(popcount(m) == k);
    for (std::size_t p = 0; p < N; ++p) hits[p] += m[p];
  }
  const double expected = static_cast<double>(k) / static_cast<double>(N);
  for (std::size_t p = 0; p < N; ++p)
    CHECK(std::abs(static_cast<double>(hits[p]) / draws - expected) < 0.04);
}

TEST_CASE("semantic mask matches an independent quota oracle on random inputs") {
  Stream root(21);
  for (std::size_t t = 0; t < 200; ++t) {
    auto s = root.child(t);
    const std::size_t N = 6 + s.next_below(40);
    const std::size_t classes = 1 + s.next_below(4);
    std::vector<int> labels(N);
    for (auto& l : labels) l = static_cast<int>(s.next_below(classes));
    const std::size_t k = s.next_below(N + 1);
    std::vector<double> weights;
    if (s.next_below(2) == 1) {
      weights.resize(classes);
      for (auto& w : weights) w = 0.25 + s.next_double();
    }

    std::vector<double> w = weights.empty() ? std::vector<double>(classes, 1.0) : weights;
    std::vector<std::size_t> area(classes, 0);
    for (int l : labels) ++area[static_cast<std::size_t>(l)];
    double mass = 0.0;
    for (std::size_t c = 0; c < classes; ++c) mass += w[c] * static_cast<double>(area[c]);
    std::vector<double> targets(classes);
    for (std::size_t c = 0; c < classes; ++c)
      targets[c] = static_cast<double>(k) * w[c] * static_cast<double>(area[c]) / mass;

    const auto expected = quota_oracle(targets, area, k);
    const auto m = semantic_guided_mask(labels, k, weights, root.child(10000 + t));
    REQUIRE(popcount(m) == k);
    CHECK(masked_per_class(m, labels, classes) == expected);
  }
}

TEST_CASE("semantic mask rejects bad inputs") {
  std::vector<int> labels(8, 0);
  Stream root(1);
  CHECK_THROWS_AS(semantic_guided_mask(labels, 9, {}, root.child(0u)), ContractError);
  // Weights that zero out every present region leave the quota undefined.
  CHECK_THROWS_AS(semantic_guided_mask(labels, 4, {0.0, 1.0}, root.child(1u)), ContractError);
  labels[3] = 2;
  CHECK_THROWS_AS(semantic_guided_mask(labels, 4, {1.0}, root.child(2u)), ContractError);
}

TEST_CASE("instance mask splits counts between object and background") {
  std::vector<std::uint8_t> flags(16, 0);
  for (std::size_t i = 0; i < 6; ++i) flags[i] = 1;
  Stream root(13);

  auto on_objects = [&](const std::vector<std::uint8_t>& m) {
    std::size_t c = 0;
    for (std::size_t p = 0; p < m.size(); ++p)
      if (flags[p]) c += m[p];
    return c;
  };

  for (std::size_t t = 0; t < 50; ++t) {
    // floor(0.75*8)=6 fits exactly in the 6 object patches.
    auto m = instance_guided_mask(flags, 8, 0.75, root.child(t));
    REQUIRE(popcount(m) == 8);
    CHECK(on_objects(m) == 6);
    // floor(0.9*8)=7 exceeds capacity and clamps back to 6.
    m = instance_guided_mask(flags, 8, 0.9, root.child(1000 + t));
    REQUIRE(popcount(m) == 8);
    CHECK(on_objects(m) == 6);
  }
}

TEST_CASE("instance mask degenerates and spills over at capacity limits") {
  Stream root(17);
  std::vector<std::uint8_t> no_objects(12, 0);
  const auto m = instance_guided_mask(no_objects, 5, 0.75, root.child(0u));
  CHECK(popcount(m) == 5);

  // 8 object, 2 background patches, k=7: floor(0.6*7)=4 object picks plus at
  // most 2 background leaves a shortfall of 1 that must return to objects.
  std::vector<std::uint8_t> flags(10, 1);
  flags[8] = flags[9] = 0;
  for (std::size_t t = 0; t < 30; ++t) {
    const auto s = instance_guided_mask(flags, 7, 0.6, root.child(100 + t));
    std::size_t on_obj = 0;
    for (std::size_t p = 0; p < 8; ++p) on_obj += s[p];
    CHECK(on_obj == 5);
    CHECK(popcount(s) == 7);
  }

  CHECK_THROWS_AS(instance_guided_mask(flags, 11, 0.75, root.child(1u)), ContractError);
}

TEST_CASE("random mask extremes and uniformity") {
  Stream root(19);
  CHECK(random_mask(10, 0, root.child(0u)) == std::vector<std::uint8_t>(10, 0));
  CHECK(random_mask(10, 10, root.child(1u)) == std::vector<std::uint8_t>(10, 1));
  CHECK_THROWS_AS(random_mask(10, 11, root.child(2u)), ContractError);

  const std::size_t N = 64, k = 16, draws = 10000;
  std::vector<std::size_t> hits(N, 0);
  for (std::size_t t = 0; t < draws; ++t) {
    const auto m = random_mask(N, k, root.child(100 + t));
    REQUIRE(popcount(m) == k);
    for (std::size_t p = 0; p < N; ++p) hits[p] += m[p];
  }
  for (std::size_t p = 0; p < N; ++p)
    CHECK(std::abs(static_cast<double>(hits[p]) / draws - 0.25) < 0.02);
}

TEST_CASE("schedule interpolates linearly between breakpoints") {
  using Alphas = std::pair<double, double>;
  const ScheduleConfig cfg;  // defaults
  auto at = [&](double u) { return schedule_alphas(u, cfg); };
  CHECK(at(0.0) == Alphas(0.0, 1.0));
  CHECK(at(0.15) == Alphas(0.0, 1.0));
  CHECK(at(0.30).first == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(at(0.30).second == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(at(0.45) == Alphas(1.0, 0.0));
  CHECK(at(0.50) == Alphas(1.0, 0.0));
  CHECK(at(0.60) == Alphas(1.0, 0.0));
  CHECK(at(0.75).first == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(at(0.75).second == 0.0);
  CHECK(at(0.90) == Alphas(0.0, 0.0));
  CHECK(at(1.0) == Alphas(0.0, 0.0));

  CHECK_THROWS_AS(at(-0.01), ContractError);
  CHECK_THROWS_AS(at(1.01), ContractError);
}

TEST_CASE("schedule validation rejects malformed curves") {
  ScheduleConfig cfg;
  cfg.breakpoints = {{0.5, 0, 1}, {0.2, 1, 0}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.breakpoints = {{0.0, 0.7, 0.7}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.breakpoints = {{0.0, -0.1, 0.5}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.breakpoints = {{1.2, 0.0, 0.5}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.breakpoints.clear();
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("compose reproduces a single input bit-exactly at degenerate alphas") {
  Stream root(23);
  const std::size_t N = 20, k = 7;
  const auto m_r = random_mask(N, k, root.child(0u));
  const auto m_i = random_mask(N, k, root.child(1u));
  const auto m_s = random_mask(N, k, root.child(2u));
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(compose_progressive_mask(m_r, m_i, m_s, 0.0, 0.0, k, root.child(10 + t)) == m_r);
    CHECK(compose_progressive_mask(m_r, m_i, m_s, 1.0, 0.0, k, root.child(20 + t)) == m_i);
    CHECK(compose_progressive_mask(m_r, m_i, m_s, 0.0, 1.0, k, root.child(30 + t)) == m_s);
  }

  auto broken = m_r;
  broken[0] ^= 1;
  CHECK_THROWS_AS(compose_progressive_mask(broken, m_i, m_s, 0.0, 0.0, k, root.child(40u)),
                  ContractError);
  CHECK_THROWS_AS(compose_progressive_mask(m_r, m_i, m_s, 0.8, 0.3, k, root.child(41u)),
                  ContractError);
}

TEST_CASE("compose selects multiply-masked positions before singletons") {
  // Multiplicities: {0,1}->3, {2,3}->2, {4..11}->1; each mask has popcount 6.
  auto from = [](std::initializer_list<std::size_t> on) {
    std::vector<std::uint8_t> m(12, 0);
    for (std::size_t p : on) m[p] = 1;
    return m;
  };
  const auto m_r = from({0, 1, 2, 3, 4, 5});
  const auto m_i = from({0, 1, 2, 3, 6, 7});
  const auto m_s = from({0, 1, 8, 9, 10, 11});

  Stream root(29);
  for (std::size_t t = 0; t < 100; ++t) {
    const auto out =
        compose_progressive_mask(m_r, m_i, m_s, 1.0 / 3.0, 1.0 / 3.0, 6, root.child(t));
    REQUIRE(popcount(out) == 6);
    for (std::size_t p : {0, 1, 2, 3}) CHECK(out[p] == 1);
    // Never a singleton ahead of an unselected multi-hit position (all
    // multi-hit positions are 0..3, so this reduces to the check above), and
    // everything else selected must come from the singleton pool.
    for (std::size_t p = 4; p < 12; ++p)
      CHECK((m_r[p] + m_i[p] + m_s[p]) >= out[p]);
  }
}

TEST_CASE("mask plan keeps exact counts across a miniature sweep") {
  c2f::synth::SceneConfig scene;  // 64x64 defaults
  scene.seed = 99;
  const auto layout = TokenLayout::make(64, 8);
  const MaskConfig cfg;  // progressive defaults, budget 192/6 = 32
  const Stream root(31);

  for (std::size_t i = 0; i < 1000; ++i) {
    const auto sample = c2f::synth::generate_sample(scene, i);
    const double u = static_cast<double>(i % 11) / 10.0;
    const auto plan = build_mask_plan(sample, cfg, layout, u, root);

    std::size_t visible = 0;
    for (std::size_t g = 0; g < 3; ++g) {
      REQUIRE(plan.masks[g].size() == layout.N);
      REQUIRE(popcount(plan.masks[g]) == plan.masked_counts[g]);
      REQUIRE(plan.masked_counts[g] == layout.N - plan.ratio.visible_counts[g]);
      visible += plan.ratio.visible_counts[g];
    }
    REQUIRE(visible == 32);
    const auto alphas = schedule_alphas(u, cfg.schedule);
    REQUIRE(plan.alpha_instance == alphas.first);
    REQUIRE(plan.alpha_semantic == alphas.second);
  }
}

TEST_CASE("mask plan budget extremes") {
  c2f::synth::SceneConfig scene;
  const auto sample = c2f::synth::generate_sample(scene, 0);
  const auto layout = TokenLayout::make(64, 8);
  Stream root(37);

  MaskConfig cfg;
  cfg.visible_budget = layout.total_tokens();
  auto plan = build_mask_plan(sample, cfg, layout, 0.5, root);
  for (std::size_t g = 0; g < 3; ++g) {
    CHECK(popcount(plan.masks[g]) == 0);
    CHECK(plan.ratio.visible_counts[g] == layout.N);
  }

  cfg.visible_budget = 0;
  plan = build_mask_plan(sample, cfg, layout, 0.5, root);
  for (std::size_t g = 0; g < 3; ++g) CHECK(popcount(plan.masks[g]) == layout.N);

  cfg.visible_budget = layout.total_tokens() + 1;
  CHECK_THROWS_AS(build_mask_plan(sample, cfg, layout, 0.5, root), ContractError);
}

TEST_CASE("mask plan at u=0 equals the semantic generator output") {
  c2f::synth::SceneConfig scene;
  scene.seed = 4;
  const auto layout = TokenLayout::make(64, 8);
  const MaskConfig cfg;
  const Stream root(41);

  for (std::size_t i = 0; i < 20; ++i) {
    const auto sample = c2f::synth::generate_sample(scene, i);
    const auto plan = build_mask_plan(sample, cfg, layout, 0.0, root);
    const auto labels = patch_semantic_labels(sample, layout.patch_size);
    for (std::size_t g = 0; g < 3; ++g) {
      const auto expected =
          semantic_guided_mask(labels, plan.masked_counts[g], cfg.class_weights,
                               root.child("mask-semantic").child(sample.index).child(g));
      CHECK(plan.masks[g] == expected);
    }
  }
}

TEST_CASE("mask plan is deterministic in the root stream") {
  c2f::synth::SceneConfig scene;
  const auto sample = c2f::synth::generate_sample(scene, 3);
  const auto layout = TokenLayout::make(64, 8);
  const MaskConfig cfg;

  const auto a = build_mask_plan(sample, cfg, layout, 0.4, Stream(123));
  const auto b = build_mask_plan(sample, cfg, layout, 0.4, Stream(123));
  CHECK(a.masks == b.masks);
  CHECK(a.ratio.visible_counts == b.ratio.visible_counts);

  const auto c = build_mask_plan(sample, cfg, layout, 0.4, Stream(124));
  CHECK(a.masks != c.masks);
}

TEST_CASE("single-generator modes honor exact counts") {
  c2f::synth::SceneConfig scene;
  const auto sample = c2f::synth::generate_sample(scene, 5);
  const auto layout = TokenLayout::make(64, 8);
  const Stream root(43);

  for (MaskMode mode : {MaskMode::Random, MaskMode::Semantic, MaskMode::Instance}) {
    MaskConfig cfg;
    cfg.mode = mode;
    const auto plan = build_mask_plan(sample, cfg, layout, 0.5, root);
    std::size_t visible = 0;
    for (std::size_t g = 0; g < 3; ++g) {
      CHECK(popcount(plan.masks[g]) == plan.masked_counts[g]);
      visible += plan.ratio.visible_counts[g];
    }
    CHECK(visible == 32);
  }
}

TEST_CASE("mask config validation") {
  MaskConfig cfg;
  cfg.object_emphasis = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.object_emphasis = 1.1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.dirichlet_concentration = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.object_patch_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.class_weights = {1.0, -0.5};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("mask plan serializes to json") {
  c2f::synth::SceneConfig scene;
  const auto sample = c2f::synth::generate_sample(scene, 1);
  const auto layout = TokenLayout::make(64, 8);
  const auto plan = build_mask_plan(sample, MaskConfig{}, layout, 0.3, Stream(47));

  const auto j = nlohmann::json::parse(c2f::mask::mask_plan_to_json(plan));
  CHECK(j.at("alpha_instance").get<double>() == plan.alpha_instance);
  CHECK(j.at("alpha_semantic").get<double>() == plan.alpha_semantic);
  REQUIRE(j.at("granularities").size() == 3);
  const auto& sem = j.at("granularities")[0];
  CHECK(sem.at("name") == "semantic");
  CHECK(sem.at("masked_count").get<std::size_t>() == plan.masked_counts[0]);
  CHECK(sem.at("visible_count").get<std::size_t>() == plan.ratio.visible_counts[0]);
  CHECK(sem.at("mask").get<std::vector<std::uint8_t>>() == plan.masks[0]);
}

TEST_SUITE_END();
