#include "c2f/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace c2f::mask {

namespace {

// floor with a tiny upward guard so quotas that are integers up to rounding
// noise (e.g. 0.3*10) land on the intended integer.
std::size_t guarded_floor(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

// Largest-remainder apportionment: integerize real quotas so they sum to
// `total` exactly, respecting per-bin capacities. Remainder units go to bins
// by descending fractional part, ties to the smaller index, skipping full
// bins, cycling while units remain.
std::vector<std::size_t> apportion(const std::vector<double>& targets,
                                   const std::vector<std::size_t>& capacity,
                                   std::size_t total) {
  const std::size_t n = targets.size();
  std::size_t cap_sum = 0;
  for (std::size_t c : capacity) cap_sum += c;
  if (capacity.size() != n || total > cap_sum)
    throw ContractError("apportion: " + std::to_string(total) + " units exceed capacity " +
                        std::to_string(cap_sum));

  std::vector<std::size_t> counts(n);
  std::vector<double> frac(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t fl = guarded_floor(targets[i]);
    counts[i] = std::min(fl, capacity[i]);
    frac[i] = std::max(0.0, targets[i] - static_cast<double>(fl));
    assigned += counts[i];
  }
  if (assigned > total)
    throw ContractError("apportion: floors exceed total (inconsistent quotas)");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });

  std::size_t remaining = total - assigned;
  while (remaining > 0) {
    bool progressed = false;
    for (std::size_t i : order) {
      if (remaining == 0) break;
      if (counts[i] < capacity[i]) {
        ++counts[i];
        --remaining;
        progressed = true;
      }
    }
    if (!progressed)
      throw ContractError("apportion: no capacity left for remainder units");
  }
  return counts;
}

std::vector<std::uint8_t> mark(std::size_t length, const std::vector<std::size_t>& positions) {
  std::vector<std::uint8_t> m(length, 0);
  for (std::size_t p : positions) m[p] = 1;
  return m;
}

std::size_t popcount(const std::vector<std::uint8_t>& m) {
  std::size_t c = 0;
  for (std::uint8_t b : m) c += b;
  return c;
}

}  // namespace

void ScheduleConfig::validate() const {
  if (breakpoints.empty())
    throw ContractError("schedule: needs at least one breakpoint");
  double prev = 0.0;
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    const auto& bp = breakpoints[i];
    if (!(bp.u >= 0.0 && bp.u <= 1.0))
      throw ContractError("schedule: breakpoint fraction " + std::to_string(bp.u) +
                          " outside [0,1]");
    if (i > 0 && bp.u < prev)
      throw ContractError("schedule: breakpoint fractions must be nondecreasing");
    prev = bp.u;
    if (bp.alpha_instance < 0.0 || bp.alpha_semantic < 0.0 ||
        bp.alpha_instance + bp.alpha_semantic > 1.0 + 1e-12)
      throw ContractError("schedule: alphas must be nonnegative with sum at most 1");
  }
}

void MaskConfig::validate() const {
  if (!(object_emphasis > 0.5 && object_emphasis <= 1.0))
    throw ContractError("mask: object_emphasis must lie in (0.5, 1], got " +
                        std::to_string(object_emphasis));
  if (!(dirichlet_concentration > 0.0))
    throw ContractError("mask: dirichlet_concentration must be positive");
  if (!(object_patch_threshold >= 0.0 && object_patch_threshold <= 1.0))
    throw ContractError("mask: object_patch_threshold must lie in [0,1]");
  for (double w : class_weights)
    if (!(w >= 0.0))
      throw ContractError("mask: class weights must be nonnegative");
  schedule.validate();
}

RatioSample sample_visible_budget(rng::Stream stream, std::size_t total_visible,
                                  std::size_t tokens_per_granularity,
                                  double concentration) {
  const std::size_t n = tokens_per_granularity;
  if (total_visible > kGranularityCount * n)
    throw ContractError("budget: " + std::to_string(total_visible) +
                        " visible tokens exceed " + std::to_string(kGranularityCount * n));
  if (!(concentration > 0.0))
    throw ContractError("budget: concentration must be positive");

  const auto lambda = stream.next_dirichlet(
      std::vector<double>(kGranularityCount, concentration));
  std::vector<double> targets(kGranularityCount);
  for (std::size_t i = 0; i < kGranularityCount; ++i)
    targets[i] = static_cast<double>(total_visible) * lambda[i];
  const auto counts =
      apportion(targets, std::vector<std::size_t>(kGranularityCount, n), total_visible);

  RatioSample out;
  std::copy(counts.begin(), counts.end(), out.visible_counts.begin());
  return out;
}

std::vector<int> patch_semantic_labels(const synth::MultiGranularSample& sample,
                                       std::size_t patch_size) {
  const auto layout = TokenLayout::make(sample.image_size, patch_size);
  const std::size_t side = layout.patches_per_side;
  const std::size_t P = patch_size;
  std::vector<int> labels(layout.N);
  std::vector<std::size_t> histogram(sample.class_count);
  for (std::size_t p = 0; p < layout.N; ++p) {
    std::fill(histogram.begin(), histogram.end(), 0);
    const std::size_t y0 = (p / side) * P;
    const std::size_t x0 = (p % side) * P;
    for (std::size_t dy = 0; dy < P; ++dy)
      for (std::size_t dx = 0; dx < P; ++dx)
        ++histogram[sample.semantic[(y0 + dy) * sample.image_size + x0 + dx]];
    std::size_t best = 0;  // strict > keeps ties at the smaller class id
    for (std::size_t c = 1; c < histogram.size(); ++c)
      if (histogram[c] > histogram[best]) best = c;
    labels[p] = static_cast<int>(best);
  }
  return labels;
}

std::vector<std::uint8_t> patch_object_flags(const synth::MultiGranularSample& sample,
                                             std::size_t patch_size, double threshold) {
  const auto layout = TokenLayout::make(sample.image_size, patch_size);
  const std::size_t side = layout.patches_per_side;
  const std::size_t P = patch_size;
  std::vector<std::uint8_t> flags(layout.N, 0);
  for (std::size_t p = 0; p < layout.N; ++p) {
    std::size_t object_pixels = 0;
    const std::size_t y0 = (p / side) * P;
    const std::size_t x0 = (p % side) * P;
    for (std::size_t dy = 0; dy < P; ++dy)
      for (std::size_t dx = 0; dx < P; ++dx)
        object_pixels += sample.instance[(y0 + dy) * sample.image_size + x0 + dx] > 0;
    flags[p] = static_cast<double>(object_pixels) >=
               threshold * static_cast<double>(P * P) - 1e-9;
  }
  return flags;
}

std::vector<std::uint8_t> semantic_guided_mask(const std::vector<int>& labels,
                                               std::size_t masked_count,
                                               const std::vector<double>& class_weights,
                                               rng::Stream stream) {
  const std::size_t n = labels.size();
  if (masked_count > n)
    throw ContractError("semantic mask: masked count " + std::to_string(masked_count) +
                        " exceeds " + std::to_string(n) + " patches");

  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ContractError("semantic mask: negative class label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> regions(static_cast<std::size_t>(max_label + 1));
  for (std::size_t p = 0; p < n; ++p) regions[labels[p]].push_back(p);

  std::vector<double> weights = class_weights;
  if (weights.empty()) weights.assign(regions.size(), 1.0);
  if (weights.size() < regions.size())
    throw ContractError("semantic mask: " + std::to_string(weights.size()) +
                        " class weights for class ids up to " + std::to_string(max_label));

  double mass = 0.0;
  for (std::size_t c = 0; c < regions.size(); ++c)
    mass += weights[c] * static_cast<double>(regions[c].size());
  if (!(mass > 0.0))
    throw ContractError("semantic mask: class weights zero out every present region");

  // Per-region quota, proportional to weighted area, exact by apportionment.
  std::vector<double> targets(regions.size());
  std::vector<std::size_t> capacity(regions.size());
  for (std::size_t c = 0; c < regions.size(); ++c) {
    targets[c] = static_cast<double>(masked_count) * weights[c] *
                 static_cast<double>(regions[c].size()) / mass;
    capacity[c] = regions[c].size();
  }
  const auto quotas = apportion(targets, capacity, masked_count);

  std::vector<std::size_t> chosen;
  chosen.reserve(masked_count);
  for (std::size_t c = 0; c < regions.size(); ++c) {
    const auto picks = stream.sample_without_replacement(regions[c].size(), quotas[c]);
    for (std::size_t i : picks) chosen.push_back(regions[c][i]);
  }
  return mark(n, chosen);
}

std::vector<std::uint8_t> instance_guided_mask(const std::vector<std::uint8_t>& object_flags,
                                               std::size_t masked_count,
                                               double object_emphasis, rng::Stream stream) {
  const std::size_t n = object_flags.size();
  if (masked_count > n)
    throw ContractError("instance mask: masked count " + std::to_string(masked_count) +
                        " exceeds " + std::to_string(n) + " patches");
  if (!(object_emphasis > 0.0 && object_emphasis <= 1.0))
    throw ContractError("instance mask: object emphasis must lie in (0, 1]");

  std::vector<std::size_t> object_idx, background_idx;
  for (std::size_t p = 0; p < n; ++p)
    (object_flags[p] ? object_idx : background_idx).push_back(p);

  std::size_t k_obj = std::min(guarded_floor(object_emphasis * static_cast<double>(masked_count)),
                               object_idx.size());
  std::size_t k_bg = std::min(masked_count - k_obj, background_idx.size());
  // Background capacity can fall short; the rest must fit on the object side.
  k_obj += masked_count - k_obj - k_bg;
  if (k_obj > object_idx.size())
    throw ContractError("instance mask: masked count exceeds total capacity");

  std::vector<std::size_t> chosen;
  chosen.reserve(masked_count);
  for (std::size_t i : stream.sample_without_replacement(object_idx.size(), k_obj))
    chosen.push_back(object_idx[i]);
  for (std::size_t i : stream.sample_without_replacement(background_idx.size(), k_bg))
    chosen.push_back(background_idx[i]);
  return mark(n, chosen);
}

std::vector<std::uint8_t> random_mask(std::size_t length, std::size_t masked_count,
                                      rng::Stream stream) {
  if (masked_count > length)
    throw ContractError("random mask: masked count " + std::to_string(masked_count) +
                        " exceeds " + std::to_string(length) + " patches");
  return mark(length, stream.sample_without_replacement(length, masked_count));
}

std::pair<double, double> schedule_alphas(double u, const ScheduleConfig& cfg) {
  cfg.validate();
  if (!(u >= 0.0 && u <= 1.0))
    throw ContractError("schedule: training fraction " + std::to_string(u) +
                        " outside [0,1]");
  const auto& bps = cfg.breakpoints;
  if (u <= bps.front().u)
    return {bps.front().alpha_instance, bps.front().alpha_semantic};

  // Last breakpoint at or below u; exact hits return the breakpoint itself.
  std::size_t i = 0;
  for (std::size_t j = 0; j < bps.size(); ++j)
    if (bps[j].u <= u) i = j;
  if (i + 1 == bps.size() || bps[i].u == u)
    return {bps[i].alpha_instance, bps[i].alpha_semantic};

  const auto& a = bps[i];
  const auto& b = bps[i + 1];
  const double t = (u - a.u) / (b.u - a.u);
  return {a.alpha_instance + t * (b.alpha_instance - a.alpha_instance),
          a.alpha_semantic + t * (b.alpha_semantic - a.alpha_semantic)};
}

std::vector<std::uint8_t> compose_progressive_mask(
    const std::vector<std::uint8_t>& random_m, const std::vector<std::uint8_t>& instance_m,
    const std::vector<std::uint8_t>& semantic_m, double alpha_instance, double alpha_semantic,
    std::size_t masked_count, rng::Stream stream) {
  const std::size_t n = random_m.size();
  if (instance_m.size() != n || semantic_m.size() != n)
    throw ContractError("compose: input masks have different lengths");
  for (const auto* m : {&random_m, &instance_m, &semantic_m})
    if (popcount(*m) != masked_count)
      throw ContractError("compose: input popcount " + std::to_string(popcount(*m)) +
                          " != masked count " + std::to_string(masked_count));
  if (alpha_instance < 0.0 || alpha_semantic < 0.0 ||
      alpha_instance + alpha_semantic > 1.0 + 1e-12)
    throw ContractError("compose: alphas must be nonnegative with sum at most 1");

  const double alpha_random = 1.0 - alpha_instance - alpha_semantic;
  std::vector<double> score(n);
  for (std::size_t p = 0; p < n; ++p)
    score[p] = alpha_random * random_m[p] + alpha_instance * instance_m[p] +
               alpha_semantic * semantic_m[p];

  // Rank in a seeded permutation breaks score ties deterministically.
  const auto perm = stream.permutation(n);
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[perm[i]] = i;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return rank[a] < rank[b];
  });
  order.resize(masked_count);
  return mark(n, order);
}

MaskPlan build_mask_plan(const synth::MultiGranularSample& sample, const MaskConfig& cfg,
                         const TokenLayout& layout, double u, const rng::Stream& rng_root) {
  cfg.validate();
  if (sample.image_size != layout.image_size)
    throw ContractError("mask plan: sample image size " + std::to_string(sample.image_size) +
                        " does not match layout " + std::to_string(layout.image_size));
  const std::size_t n = layout.N;
  const std::size_t budget = cfg.resolved_budget(layout);
  if (budget > layout.total_tokens())
    throw ContractError("mask plan: visible budget " + std::to_string(budget) +
                        " exceeds " + std::to_string(layout.total_tokens()) + " tokens");

  const auto labels = patch_semantic_labels(sample, layout.patch_size);
  const auto flags = patch_object_flags(sample, layout.patch_size, cfg.object_patch_threshold);

  MaskPlan plan;
  plan.ratio = sample_visible_budget(rng_root.child("budget").child(sample.index), budget, n,
                                     cfg.dirichlet_concentration);
  std::tie(plan.alpha_instance, plan.alpha_semantic) = schedule_alphas(u, cfg.schedule);

  for (Granularity g : tok::kGranularityOrder) {
    const std::size_t gi = tok::index_of(g);
    const std::size_t k = n - plan.ratio.visible_counts[gi];
    auto stream_for = [&](const char* purpose) {
      return rng_root.child(purpose).child(sample.index).child(gi);
    };

    std::vector<std::uint8_t> final_mask;
    switch (cfg.mode) {
      case MaskMode::Random:
        final_mask = random_mask(n, k, stream_for("mask-random"));
        break;
      case MaskMode::Semantic:
        final_mask = semantic_guided_mask(labels, k, cfg.class_weights,
                                          stream_for("mask-semantic"));
        break;
      case MaskMode::Instance:
        final_mask = instance_guided_mask(flags, k, cfg.object_emphasis,
                                          stream_for("mask-instance"));
        break;
      case MaskMode::Progressive: {
        const auto m_r = random_mask(n, k, stream_for("mask-random"));
        const auto m_i = instance_guided_mask(flags, k, cfg.object_emphasis,
                                              stream_for("mask-instance"));
        const auto m_s = semantic_guided_mask(labels, k, cfg.class_weights,
                                              stream_for("mask-semantic"));
        final_mask = compose_progressive_mask(m_r, m_i, m_s, plan.alpha_instance,
                                              plan.alpha_semantic, k,
                                              stream_for("mask-compose"));
        break;
      }
    }
    if (popcount(final_mask) != k)
      throw ContractError("mask plan: generator broke the exact-count invariant");
    plan.masks[gi] = std::move(final_mask);
    plan.masked_counts[gi] = k;
  }
  return plan;
}

std::string mask_plan_to_json(const MaskPlan& plan) {
  nlohmann::json j;
  j["alpha_instance"] = plan.alpha_instance;
  j["alpha_semantic"] = plan.alpha_semantic;
  j["granularities"] = nlohmann::json::array();
  for (Granularity g : tok::kGranularityOrder) {
    const std::size_t gi = tok::index_of(g);
    nlohmann::json entry;
    entry["name"] = tok::name_of(g);
    entry["masked_count"] = plan.masked_counts[gi];
    entry["visible_count"] = plan.ratio.visible_counts[gi];
    entry["mask"] = plan.masks[gi];
    j["granularities"].push_back(std::move(entry));
  }
  return j.dump(2);
}

}  // namespace c2f::mask
