#include <benchmark/benchmark.h>

#include <vector>

#include "c2f/masking.hpp"
#include "c2f/model.hpp"
#include "c2f/numerics.hpp"
#include "c2f/rng.hpp"
#include "c2f/synthdata.hpp"
#include "c2f/tokenizer.hpp"
#include "c2f/trainer.hpp"

namespace {

using namespace c2f;

num::Tensor<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto t = num::Tensor<float>::zeros({rows, cols});
  rng::Stream s(seed);
  for (auto& v : t.values_mut()) v = static_cast<float>(s.next_normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  for (auto _ : state) {
    auto c = num::matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_BuildMaskPlan(benchmark::State& state) {
  synth::SceneConfig scene;
  const auto sample = synth::generate_sample(scene, 0);
  const mask::MaskConfig cfg;
  const auto layout = tok::TokenLayout::make(scene.image_size, 8);
  const double u = static_cast<double>(state.range(0)) / 100.0;
  std::uint64_t i = 0;
  for (auto _ : state) {
    auto plan = mask::build_mask_plan(sample, cfg, layout, u, rng::Stream(9).child(i++));
    benchmark::DoNotOptimize(plan.masked_counts.data());
  }
}
BENCHMARK(BM_BuildMaskPlan)->Arg(0)->Arg(50)->Arg(100);

void BM_Forward(benchmark::State& state) {
  synth::SceneConfig scene;
  const auto sample = synth::generate_sample(scene, 0);
  const model::ModelConfig cfg;
  const auto layout = tok::TokenLayout::make(scene.image_size, cfg.patch_size);
  const auto params = model::init_params<float>(cfg, layout, rng::Stream(3));
  const auto plan =
      mask::build_mask_plan(sample, mask::MaskConfig{}, layout, 0.5, rng::Stream(4));
  for (auto _ : state) {
    auto out = model::forward(sample, plan, params, cfg);
    benchmark::DoNotOptimize(out.predictions.data());
  }
}
BENCHMARK(BM_Forward);

void BM_TrainStep(benchmark::State& state) {
  synth::SceneConfig scene;
  std::vector<synth::MultiGranularSample> dataset;
  for (std::size_t i = 0; i < 2; ++i) dataset.push_back(synth::generate_sample(scene, i));
  const model::ModelConfig model_cfg;
  const auto layout = tok::TokenLayout::make(scene.image_size, model_cfg.patch_size);
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 2;
  auto params = model::init_params<float>(model_cfg, layout, rng::Stream(5));
  train::OptimState<float> optim;
  const std::vector<std::size_t> batch{0, 1};
  const rng::Stream root(6);
  for (auto _ : state) {
    auto metrics = train::train_step(dataset, batch, params, optim, 1, 1, 4, model_cfg,
                                     mask::MaskConfig{}, cfg, root);
    benchmark::DoNotOptimize(metrics.total);
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
