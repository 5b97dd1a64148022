#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "c2f/masking.hpp"
#include "c2f/model.hpp"
#include "c2f/synthdata.hpp"
#include "c2f/trainer.hpp"
#include "doctest.h"
#include "json.hpp"

using c2f::ContractError;
using c2f::IoError;
using c2f::NumericError;
using c2f::model::for_each_param;
using c2f::model::init_params;
using c2f::model::ModelConfig;
using c2f::model::ModelParams;
using c2f::num::Tensor;
using c2f::rng::Stream;
using c2f::tok::TokenLayout;
using c2f::train::Checkpoint;
using c2f::train::lr_at;
using c2f::train::OptimState;
using c2f::train::optimizer_step;
using c2f::train::StepMetrics;
using c2f::train::TrainConfig;
using c2f::train::train_step;

namespace {

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.patch_size = 8;  // 32x32 scenes -> 16 patches per granularity
  cfg.enc_width = 32;
  cfg.enc_depth = 2;
  cfg.enc_heads = 4;
  cfg.dec_width = 16;
  cfg.dec_heads = 4;
  cfg.ffn_ratio = 2;
  return cfg;
}

c2f::synth::SceneConfig small_scene() {
  c2f::synth::SceneConfig scene;
  scene.image_size = 32;
  return scene;
}

std::vector<c2f::synth::MultiGranularSample> small_dataset(std::size_t count) {
  std::vector<c2f::synth::MultiGranularSample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(c2f::synth::generate_sample(small_scene(), i));
  return out;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = 9;
  return cfg;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "c2f_trainer_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void fill_gradients(ModelParams<double>& params, std::uint64_t round) {
  for_each_param(params, [&](const std::string& name, Tensor<double>& t) {
    t.zero_grad();
    Stream s = Stream(1234).child(name).child(round);
    for (auto& g : t.grad_mut()) g = s.next_normal();
  });
}

bool params_equal(ModelParams<double>& a, ModelParams<double>& b) {
  bool equal = true;
  std::map<std::string, Tensor<double>> other;
  for_each_param(b, [&](const std::string& name, Tensor<double>& t) { other.emplace(name, t); });
  for_each_param(a, [&](const std::string& name, Tensor<double>& t) {
    const auto it = other.find(name);
    if (it == other.end() || it->second.size() != t.size()) {
      equal = false;
      return;
    }
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t.values()[i] != it->second.values()[i]) equal = false;
  });
  return equal;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.peak_lr() == doctest::Approx(1e-4 * 32.0 / 256.0).epsilon(1e-15));

  cfg = TrainConfig{};
  cfg.warmup_epochs = cfg.epochs + 1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.weight_decay = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.grad_clip = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.loss_weights = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("learning rate warms up linearly then decays to zero on a cosine") {
  const double peak = 0.02;
  CHECK(lr_at(0, 10, 100, peak) == 0.0);
  CHECK(lr_at(5, 10, 100, peak) == doctest::Approx(peak * 0.5).epsilon(1e-15));
  CHECK(lr_at(10, 10, 100, peak) == doctest::Approx(peak).epsilon(1e-15));
  // Cosine midpoint and endpoint.
  CHECK(lr_at(55, 10, 100, peak) == doctest::Approx(peak * 0.5).epsilon(1e-12));
  CHECK(std::abs(lr_at(100, 10, 100, peak)) < 1e-12);
  // Monotone through warmup.
  for (std::size_t s = 1; s <= 10; ++s) CHECK(lr_at(s, 10, 100, peak) > lr_at(s - 1, 10, 100, peak));
  // No-warmup schedule starts at the peak.
  CHECK(lr_at(0, 0, 10, peak) == doctest::Approx(peak).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(0, 11, 10, peak), ContractError);
  CHECK_THROWS_AS(lr_at(0, 0, 0, peak), ContractError);

  // Peak follows the batch-size scaling rule.
  TrainConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.batch_size = 64;
  CHECK(lr_at(10, 10, 100, cfg.peak_lr()) == doctest::Approx(1e-4 * 64.0 / 256.0).epsilon(1e-15));
}

TEST_CASE("optimizer leaves parameters alone when gradients and decay vanish") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(3));
  auto reference = init_params<double>(mcfg, layout, Stream(3));
  for_each_param(params, [](const std::string&, Tensor<double>& t) { t.zero_grad(); });

  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  OptimState<double> state;
  optimizer_step(params, state, 0.1, cfg);
  CHECK(state.step == 1);
  CHECK(params_equal(params, reference));
}

TEST_CASE("optimizer moves against the gradient") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(4));
  std::fill(params.mask_token.values_mut().begin(), params.mask_token.values_mut().end(), 1.0);
  for_each_param(params, [](const std::string&, Tensor<double>& t) { t.zero_grad(); });
  std::fill(params.mask_token.grad_mut().begin(), params.mask_token.grad_mut().end(), 1.0);

  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  OptimState<double> state;
  optimizer_step(params, state, 0.1, cfg);
  for (double v : params.mask_token.values()) CHECK(v < 1.0);
}

TEST_CASE("weight decay skips gains, biases, and the mask token") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(5));
  auto before = init_params<double>(mcfg, layout, Stream(5));
  for_each_param(params, [](const std::string&, Tensor<double>& t) { t.zero_grad(); });

  TrainConfig cfg;  // weight_decay 0.05
  OptimState<double> state;
  optimizer_step(params, state, 0.1, cfg);

  std::map<std::string, Tensor<double>> original;
  for_each_param(before, [&](const std::string& name, Tensor<double>& t) {
    original.emplace(name, t);
  });
  for_each_param(params, [&](const std::string& name, Tensor<double>& t) {
    const auto& ref = original.at(name);
    const bool excluded = c2f::model::excluded_from_weight_decay(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double expected =
          excluded ? ref.values()[i] : ref.values()[i] * (1.0 - 0.1 * 0.05);
      CHECK(t.values()[i] == doctest::Approx(expected).epsilon(1e-14));
    }
  });
}

TEST_CASE("ten optimizer steps match an independent reference") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(6));

  TrainConfig cfg;
  cfg.weight_decay = 0.05;
  OptimState<double> state;

  // Plain-vector mirror of every parameter.
  std::map<std::string, std::vector<double>> ref_w, ref_m, ref_v;
  for_each_param(params, [&](const std::string& name, Tensor<double>& t) {
    ref_w[name] = std::vector<double>(t.values().begin(), t.values().end());
  });

  const double lr = 0.01, eps = 1e-8;
  for (std::uint64_t round = 1; round <= 10; ++round) {
    fill_gradients(params, round);
    optimizer_step(params, state, lr, cfg);

    // Textbook decoupled update applied to the mirror, same gradient draws.
    for (auto& [name, w] : ref_w) {
      auto& m = ref_m[name];
      auto& v = ref_v[name];
      if (m.empty()) m.assign(w.size(), 0.0);
      if (v.empty()) v.assign(w.size(), 0.0);
      Stream s = Stream(1234).child(name).child(round);
      const bool decay = !c2f::model::excluded_from_weight_decay(name);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = s.next_normal();
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / (1.0 - std::pow(cfg.beta1, static_cast<double>(round)));
        const double v_hat = v[i] / (1.0 - std::pow(cfg.beta2, static_cast<double>(round)));
        double next = w[i] - lr * m_hat / (std::sqrt(v_hat) + eps);
        if (decay) next -= lr * cfg.weight_decay * w[i];
        w[i] = next;
      }
    }
  }

  double worst = 0.0;
  for_each_param(params, [&](const std::string& name, Tensor<double>& t) {
    const auto& w = ref_w.at(name);
    for (std::size_t i = 0; i < t.size(); ++i)
      worst = std::max(worst, std::abs(t.values()[i] - w[i]));
  });
  CHECK(worst < 1e-10);
  CHECK(state.step == 10);
}

TEST_CASE("non-finite gradients abort the step naming the parameter") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(7));
  for_each_param(params, [](const std::string&, Tensor<double>& t) { t.zero_grad(); });
  params.bridge_weight.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();

  TrainConfig cfg;
  OptimState<double> state;
  try {
    optimizer_step(params, state, 0.1, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bridge.weight") != std::string::npos);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(8));
  for_each_param(params, [](const std::string&, Tensor<double>& t) { t.zero_grad(); });
  std::fill(params.mask_token.grad_mut().begin(), params.mask_token.grad_mut().end(), 3.0);

  const double expected_norm = 3.0 * std::sqrt(static_cast<double>(params.mask_token.size()));
  const double reported = c2f::train::clip_gradients(params, 1.0);
  CHECK(reported == doctest::Approx(expected_norm).epsilon(1e-12));

  double sum_sq = 0.0;
  for_each_param(params, [&](const std::string&, Tensor<double>& t) {
    for (double g : t.grad()) sum_sq += g * g;
  });
  CHECK(std::sqrt(sum_sq) == doctest::Approx(1.0).epsilon(1e-12));

  // A generous threshold leaves gradients untouched.
  const double again = c2f::train::clip_gradients(params, 10.0);
  CHECK(again == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(c2f::train::clip_gradients(params, 0.0), ContractError);
}

TEST_CASE("a zero-lr step leaves the model stateless across repeats") {
  const auto dataset = small_dataset(2);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  auto tcfg = small_train();

  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(11));
  OptimState<double> optim;
  const std::vector<std::size_t> batch{0, 1};

  // Step 0 of a warmup schedule runs at lr exactly 0.
  const auto first =
      train_step(dataset, batch, params, optim, 0, 2, 4, mcfg, kcfg, tcfg, Stream(21));
  CHECK(first.lr == 0.0);
  const auto second =
      train_step(dataset, batch, params, optim, 0, 2, 4, mcfg, kcfg, tcfg, Stream(21));
  CHECK(first.total == second.total);
  CHECK(first.loss_semantic == second.loss_semantic);
  CHECK(first.loss_instance == second.loss_instance);
  CHECK(first.loss_rgb == second.loss_rgb);
}

TEST_CASE("train step is deterministic in the seed") {
  const auto dataset = small_dataset(2);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  const auto tcfg = small_train();
  const std::vector<std::size_t> batch{0, 1};
  const auto layout = TokenLayout::make(32, 8);

  StepMetrics runs[2];
  for (auto& out : runs) {
    auto params = init_params<double>(mcfg, layout, Stream(13));
    OptimState<double> optim;
    out = train_step(dataset, batch, params, optim, 1, 2, 4, mcfg, kcfg, tcfg, Stream(31));
  }
  CHECK(runs[0].total == runs[1].total);
  CHECK(runs[0].loss_semantic == runs[1].loss_semantic);
  CHECK(runs[0].loss_instance == runs[1].loss_instance);
  CHECK(runs[0].loss_rgb == runs[1].loss_rgb);
  CHECK(runs[0].lr == runs[1].lr);
}

TEST_CASE("train step reports the schedule alphas at the step fraction") {
  const auto dataset = small_dataset(2);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  auto tcfg = small_train();
  const std::vector<std::size_t> batch{0};
  const auto layout = TokenLayout::make(32, 8);

  for (std::size_t step : {0u, 3u, 7u}) {
    auto params = init_params<double>(mcfg, layout, Stream(17));
    OptimState<double> optim;
    const auto metrics =
        train_step(dataset, batch, params, optim, step, 2, 10, mcfg, kcfg, tcfg, Stream(37));
    const auto expected =
        c2f::mask::schedule_alphas(static_cast<double>(step) / 10.0, kcfg.schedule);
    CHECK(metrics.alpha_instance == expected.first);
    CHECK(metrics.alpha_semantic == expected.second);
  }
}

TEST_CASE("train step validates its inputs") {
  const auto dataset = small_dataset(2);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  auto tcfg = small_train();
  const auto layout = TokenLayout::make(32, 8);
  auto params = init_params<double>(mcfg, layout, Stream(19));
  OptimState<double> optim;

  const std::vector<std::size_t> empty;
  CHECK_THROWS_AS(
      train_step(dataset, empty, params, optim, 0, 2, 4, mcfg, kcfg, tcfg, Stream(41)),
      ContractError);
  const std::vector<std::size_t> bad{5};
  CHECK_THROWS_AS(
      train_step(dataset, bad, params, optim, 0, 2, 4, mcfg, kcfg, tcfg, Stream(41)),
      ContractError);
  const std::vector<std::size_t> batch{0};
  CHECK_THROWS_AS(
      train_step(dataset, batch, params, optim, 4, 2, 4, mcfg, kcfg, tcfg, Stream(41)),
      ContractError);
  auto zero_weights = tcfg;
  zero_weights.loss_weights = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(
      train_step(dataset, batch, params, optim, 0, 2, 4, mcfg, kcfg, zero_weights, Stream(41)),
      ContractError);
}

TEST_CASE("checkpoints restore parameters and moments bit-exactly") {
  const auto dataset = small_dataset(2);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  const auto tcfg = small_train();
  const auto layout = TokenLayout::make(32, 8);

  auto params = init_params<double>(mcfg, layout, Stream(23));
  OptimState<double> optim;
  const std::vector<std::size_t> batch{0, 1};
  for (std::size_t s = 0; s < 3; ++s)
    train_step(dataset, batch, params, optim, s, 1, 6, mcfg, kcfg, tcfg, Stream(43));

  const auto dir_a = fresh_dir("roundtrip_a");
  Checkpoint<double> ckpt{small_scene(), kcfg, mcfg, tcfg, params, optim, 32};
  c2f::train::save_checkpoint(dir_a, ckpt);

  auto loaded = c2f::train::load_checkpoint<double>(dir_a);
  CHECK(loaded.optim.step == 3);
  CHECK(loaded.image_size == 32);
  CHECK(params_equal(loaded.params, params));
  REQUIRE(loaded.optim.first_moment.size() == optim.first_moment.size());
  for (const auto& [name, m] : optim.first_moment) {
    const auto& lm = loaded.optim.first_moment.at(name);
    REQUIRE(lm.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(lm[i] == m[i]);
  }
  for (const auto& [name, v] : optim.second_moment) {
    const auto& lv = loaded.optim.second_moment.at(name);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(lv[i] == v[i]);
  }

  // save -> load -> save is byte-identical.
  const auto dir_b = fresh_dir("roundtrip_b");
  c2f::train::save_checkpoint(dir_b, loaded);
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
  CHECK(slurp(dir_a / "params.bin") == slurp(dir_b / "params.bin"));
  CHECK(slurp(dir_a / "optim.bin") == slurp(dir_b / "optim.bin"));
}

TEST_CASE("checkpoint loading rejects corruption with a pointed diagnostic") {
  const auto mcfg = small_model();
  const auto layout = TokenLayout::make(32, 8);
  const auto params = init_params<double>(mcfg, layout, Stream(29));
  const auto dir = fresh_dir("corrupt");
  Checkpoint<double> ckpt{small_scene(), c2f::mask::MaskConfig{}, mcfg, small_train(), params,
                          OptimState<double>{}, 32};
  c2f::train::save_checkpoint(dir, ckpt);

  SUBCASE("dtype mismatch") {
    CHECK_THROWS_AS((void)c2f::train::load_checkpoint<float>(dir), IoError);
  }
  SUBCASE("renamed parameter") {
    auto text = slurp(dir / "manifest.json");
    const auto pos = text.find("\"mask_token\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"mask_tokex\"");
    std::ofstream(dir / "manifest.json", std::ios::trunc) << text;
    try {
      (void)c2f::train::load_checkpoint<double>(dir);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("mask_tokex") != std::string::npos);
    }
  }
  SUBCASE("truncated parameter blob") {
    const auto blob = slurp(dir / "params.bin");
    std::ofstream(dir / "params.bin", std::ios::trunc | std::ios::binary)
        << blob.substr(0, blob.size() - 1);
    CHECK_THROWS_AS((void)c2f::train::load_checkpoint<double>(dir), IoError);
  }
  SUBCASE("malformed manifest") {
    std::ofstream(dir / "manifest.json", std::ios::trunc) << "{not json";
    CHECK_THROWS_AS((void)c2f::train::load_checkpoint<double>(dir), IoError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS((void)c2f::train::load_checkpoint<double>(dir / "absent"), IoError);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto dataset = small_dataset(4);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  auto tcfg = small_train();
  tcfg.epochs = 3;  // 4 samples, batch 2 -> 2 steps per epoch, 6 total
  const auto layout = TokenLayout::make(32, 8);
  const std::size_t spe = 2, total = 6, warmup = 2;

  auto run_steps = [&](ModelParams<double>& params, OptimState<double>& optim,
                       std::size_t from, std::size_t to, std::vector<StepMetrics>& out) {
    const Stream root(tcfg.seed);
    for (std::size_t s = from; s < to; ++s) {
      const auto order = root.child("shuffle").child(s / spe).permutation(dataset.size());
      const std::span<const std::size_t> batch(order.data() + (s % spe) * tcfg.batch_size,
                                               tcfg.batch_size);
      out.push_back(train_step(dataset, batch, params, optim, s, warmup, total, mcfg, kcfg,
                               tcfg, root));
    }
  };

  // Uninterrupted reference.
  std::vector<StepMetrics> reference;
  {
    const Stream root(tcfg.seed);
    auto params = init_params<double>(mcfg, layout, root.child("init"));
    OptimState<double> optim;
    run_steps(params, optim, 0, 6, reference);
  }

  // Interrupted at step 3, round-tripped through disk, then continued.
  std::vector<StepMetrics> resumed;
  {
    const Stream root(tcfg.seed);
    auto params = init_params<double>(mcfg, layout, root.child("init"));
    OptimState<double> optim;
    run_steps(params, optim, 0, 3, resumed);

    const auto dir = fresh_dir("resume");
    Checkpoint<double> ckpt{small_scene(), kcfg, mcfg, tcfg, params, optim, 32};
    c2f::train::save_checkpoint(dir, ckpt);
    auto restored = c2f::train::load_checkpoint<double>(dir);
    CHECK(restored.optim.step == 3);
    run_steps(restored.params, restored.optim, 3, 6, resumed);
  }

  REQUIRE(reference.size() == resumed.size());
  for (std::size_t s = 0; s < reference.size(); ++s) {
    CHECK(std::abs(reference[s].total - resumed[s].total) < 1e-10);
    CHECK(std::abs(reference[s].loss_semantic - resumed[s].loss_semantic) < 1e-10);
    CHECK(std::abs(reference[s].loss_instance - resumed[s].loss_instance) < 1e-10);
    CHECK(std::abs(reference[s].loss_rgb - resumed[s].loss_rgb) < 1e-10);
  }
}

TEST_CASE("the training loop logs one metrics line per step and checkpoints the end state") {
  const auto dataset = small_dataset(4);
  const auto mcfg = small_model();
  const c2f::mask::MaskConfig kcfg;
  const auto tcfg = small_train();  // epochs 2, warmup 1, batch 2 -> 4 steps
  const auto out_dir = fresh_dir("loop");

  const auto result =
      c2f::train::train_loop<double>(dataset, small_scene(), mcfg, kcfg, tcfg, out_dir);
  REQUIRE(result.metrics.size() == 4);

  // Every logged line parses and mirrors the returned metrics.
  std::ifstream lines(result.metrics_path);
  REQUIRE(lines.good());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto parsed = nlohmann::json::parse(line);
    const auto& m = result.metrics.at(count);
    CHECK(parsed.at("step").get<std::size_t>() == m.step);
    CHECK(parsed.at("lr").get<double>() == m.lr);
    CHECK(parsed.at("alpha_instance").get<double>() == m.alpha_instance);
    CHECK(parsed.at("alpha_semantic").get<double>() == m.alpha_semantic);
    CHECK(parsed.at("loss_semantic").get<double>() == m.loss_semantic);
    CHECK(parsed.at("loss_instance").get<double>() == m.loss_instance);
    CHECK(parsed.at("loss_rgb").get<double>() == m.loss_rgb);
    CHECK(parsed.at("total").get<double>() == m.total);
    ++count;
  }
  CHECK(count == 4);

  // Schedule values and learning rates are reproducible from the step index.
  for (const auto& m : result.metrics) {
    const auto expected =
        c2f::mask::schedule_alphas(static_cast<double>(m.step) / 4.0, kcfg.schedule);
    CHECK(m.alpha_instance == expected.first);
    CHECK(m.alpha_semantic == expected.second);
    CHECK(m.lr == lr_at(m.step, 2, 4, tcfg.peak_lr()));
  }

  auto restored = c2f::train::load_checkpoint<double>(result.checkpoint_dir);
  CHECK(restored.optim.step == 4);
  CHECK(restored.model.enc_width == mcfg.enc_width);
  CHECK(restored.train.epochs == tcfg.epochs);

  // A second identical run is bit-identical.
  const auto out_dir2 = fresh_dir("loop2");
  const auto result2 =
      c2f::train::train_loop<double>(dataset, small_scene(), mcfg, kcfg, tcfg, out_dir2);
  REQUIRE(result2.metrics.size() == result.metrics.size());
  for (std::size_t i = 0; i < result.metrics.size(); ++i)
    CHECK(result.metrics[i].total == result2.metrics[i].total);
  CHECK(slurp(result.checkpoint_dir / "params.bin") ==
        slurp(result2.checkpoint_dir / "params.bin"));

  // Dataset/model mismatch is rejected.
  auto wrong = mcfg;
  wrong.class_count = 7;
  CHECK_THROWS_AS(
      c2f::train::train_loop<double>(dataset, small_scene(), wrong, kcfg, tcfg, out_dir2),
      ContractError);
  CHECK_THROWS_AS(c2f::train::train_loop<double>({}, small_scene(), mcfg, kcfg, tcfg, out_dir2),
                  ContractError);
}

TEST_SUITE_END();
