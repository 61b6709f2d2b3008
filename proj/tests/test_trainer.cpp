#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <set>

#include "ce_oracle.hpp"
#include "ssalign/errors.hpp"
#include "ssalign/trainer.hpp"
#include "support.hpp"

using namespace ssalign;
using ssalign::testing::toy_benchmark;
using ssalign::testing::toy_config;

namespace {

ModelParams scalar_params(double v) {
  ModelParams p;
  p.blocks.assign(kNumBlocks, Tensor2{{v}});
  return p;
}

ParamSet scalar_grads(double g) { return ParamSet(kNumBlocks, Tensor2{{g}}); }

nlohmann::json without_seconds(const TrainLog& log) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& rec : log.epochs) {
    auto j = to_json(rec);
    j.erase("seconds");
    out.push_back(j);
  }
  return out;
}

/// A small benchmark on which a few epochs finish in well under a second.
SyntheticBenchmark small_benchmark(std::uint64_t seed, double rotation = 0.8) {
  BenchmarkSpec spec;
  spec.num_classes = 4;
  spec.feature_dim = 8;
  spec.n_source = 96;
  spec.k_shot = 3;
  spec.n_test = 40;
  spec.frames_per_video = 24;
  spec.shift = {rotation, 0.0, rotation == 0.0 ? 0.0 : 0.3, seed};
  return generate_synthetic_benchmark(spec);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = 24;
  c.embed = 12;
  c.warmup_epochs = 2;
  return c;
}

}  // namespace

TEST_CASE("sgd step") {
  SUBCASE("plain gradient step") {
    auto p = scalar_params(0.0);
    auto s = OptimizerState::zeros_like(p);
    sgd_step(p, scalar_grads(1.0), s, 0.1, 0.0, 0.0);
    CHECK(p.blocks[0][0] == doctest::Approx(-0.1).epsilon(1e-15));
  }
  SUBCASE("weight decay balances the gradient") {
    auto p = scalar_params(1.0);
    auto s = OptimizerState::zeros_like(p);
    sgd_step(p, scalar_grads(-0.5), s, 0.1, 0.9, 0.5);
    CHECK(p.blocks[0][0] == 1.0);
  }
  SUBCASE("momentum accumulates") {
    auto p = scalar_params(0.0);
    auto s = OptimizerState::zeros_like(p);
    sgd_step(p, scalar_grads(1.0), s, 1.0, 0.9, 0.0);
    sgd_step(p, scalar_grads(1.0), s, 1.0, 0.9, 0.0);
    CHECK(p.blocks[0][0] == doctest::Approx(-2.9).epsilon(1e-15));
  }
  SUBCASE("a non-finite gradient names its block") {
    auto p = scalar_params(0.0);
    auto s = OptimizerState::zeros_like(p);
    auto g = scalar_grads(0.0);
    g[3][0] = std::numeric_limits<double>::quiet_NaN();
    const std::string name(block_name(3));
    CHECK_THROWS_WITH_AS(sgd_step(p, g, s, 0.1, 0.9, 0.0), doctest::Contains(name.c_str()), TrainingError);
  }
}

TEST_CASE("batch scheduling") {
  BatchScheduler sched(30, 5, 12, 4);
  Rng rng(1);
  const auto plans = sched.plan_epoch(rng);
  REQUIRE(plans.size() == 2);  // the trailing 6 source videos are dropped
  std::set<std::size_t> seen;
  for (const auto& p : plans) {
    CHECK(p.source.size() == 12);
    CHECK(p.target.size() == 4);
    seen.insert(p.source.begin(), p.source.end());
    for (std::size_t t : p.target) CHECK(t < 5);
  }
  CHECK(seen.size() == 24);

  // The first target cycle visits every video before any repeats.
  std::set<std::size_t> first(plans[0].target.begin(), plans[0].target.end());
  CHECK(first.size() == 4);

  BatchScheduler tiny(3, 2, 12, 2);
  const auto one = tiny.plan_epoch(rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].source.size() == 3);
  CHECK_THROWS_AS(BatchScheduler(0, 2, 1, 1), ArgumentError);
}

TEST_CASE("batch composition") {
  const auto bm = small_benchmark(1);
  TrainConfig cfg;
  const auto params = init_params(cfg.model_dims(8, 4), 0);
  Rng rng(5);
  EpochSamplingState state;
  const BatchPlan plan{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, {0, 1, 2, 3}};
  const auto batch = assemble_batch(bm.source, bm.target_train, plan, cfg, state, rng, params);
  CHECK(batch.size() == 24);
  CHECK(batch.num_source() == 12);
  CHECK(batch.num_target() == 12);
  CHECK(batch.encoded.features.rows() == 24);
  CHECK(batch.refs.size() == 24);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(batch.groups[j].label == bm.target_train.videos[j].label);
    for (std::size_t l = 0; l < 3; ++l) CHECK(batch.refs[batch.target_row(j, l)].video_id == bm.target_train.videos[j].id);
  }

  SUBCASE("without stochastic sampling snippets are sequential") {
    TrainConfig seq = cfg;
    seq.enable_ssa = false;
    Rng r2(5);
    EpochSamplingState s2;
    const auto sel = select_snippets(bm.source, bm.target_train, plan, seq, s2, r2);
    for (const auto& ref : sel.source) CHECK(ref.start == 0);
    for (const auto& group : sel.target) {
      CHECK(group[0].start == 0);
      CHECK(group[1].start == 8);
      CHECK(group[2].start == 16);
    }
  }
}

TEST_CASE("configuration validation") {
  const auto bm = small_benchmark(2);
  auto expect_config_error = [&](TrainConfig c) {
    CHECK_THROWS_WITH_AS(c.validate(bm.source, bm.target_train), doctest::Contains("invalid configuration"),
                         ConfigError);
  };
  CHECK_NOTHROW(TrainConfig{}.validate(bm.source, bm.target_train));

  TrainConfig c;
  c.lr = 0.0;
  expect_config_error(c);
  c = {};
  c.r = 1;
  expect_config_error(c);
  c.enable_cross = false;
  CHECK_NOTHROW(c.validate(bm.source, bm.target_train));
  c = {};
  c.r = 4;  // (r-1)*8 = 24 > 24 - 8
  expect_config_error(c);
  c = {};
  c.momentum = 1.0;
  expect_config_error(c);
  c = {};
  c.target_per_batch = 13;
  expect_config_error(c);
  c = {};
  c.lambda_p = 1.5;
  expect_config_error(c);
  c = {};
  c.m = 25;
  expect_config_error(c);
  CHECK_THROWS_AS(train(bm.source, bm.target_train, {}, c), ConfigError);
}

TEST_CASE("configuration json round trip") {
  TrainConfig c;
  c.epochs = 7;
  c.lr = 0.0125;
  c.stat_metric = StatMetric::kCoral;
  c.enable_attention = false;
  c.seed = 42;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.stat_metric == StatMetric::kCoral);
  CHECK(back.lr == 0.0125);
  CHECK(to_json(c)["mhat"] == 8);

  const auto po = c.prediction_only();
  CHECK_FALSE(po.enable_proto);
  CHECK_FALSE(po.enable_cross);
  CHECK_FALSE(po.enable_sn_dist);
  CHECK_FALSE(po.enable_sn_stat);
  CHECK_FALSE(po.enable_attention);
  CHECK(po.enable_ssa);
  CHECK(po.loss_config().stat_metric == StatMetric::kNone);
}

TEST_CASE("zero epochs return the initialization") {
  const auto bm = toy_benchmark();
  TrainConfig c = toy_config();
  c.epochs = 0;
  c.seed = 4;
  const auto r = train(bm.source, bm.target_train, bm.target_test, c);
  CHECK(r.log.epochs.empty());
  const auto init = init_params(c.model_dims(4, 2), 4);
  CHECK(r.params.blocks == init.blocks);
}

TEST_CASE("prediction-only training matches the standalone cross-entropy trainer") {
  const auto bm = toy_benchmark();
  for (std::uint64_t seed : {0u, 1u, 9u}) {
    TrainConfig c = toy_config().prediction_only();
    c.seed = seed;
    CHECK(testing::matches_oracle(bm.source, bm.target_train, c, 3));
  }
  // The comparison is sensitive: changing the momentum moves the trajectory.
  const auto expected = testing::oracle_trajectory(bm.source, bm.target_train, toy_config().prediction_only(), 2);
  TrainConfig moved = toy_config().prediction_only();
  moved.momentum = 0.5;
  moved.epochs = 2;
  CHECK_FALSE(train(bm.source, bm.target_train, {}, moved).params.blocks[0].data() == expected[1][0]);
}

TEST_CASE("training log") {
  const auto bm = small_benchmark(3);
  TrainConfig c = small_config();
  c.epochs = 4;
  c.seed = 3;
  std::size_t callbacks = 0;
  const auto r = train(bm.source, bm.target_train, bm.target_test, c, [&](const EpochRecord&) { ++callbacks; });
  REQUIRE(r.log.epochs.size() == 4);
  CHECK(callbacks == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& rec = r.log.epochs[e];
    CHECK(rec.epoch == e + 1);
    CHECK(rec.steps == 8);
    CHECK(rec.test_accuracy >= 0.0);
    CHECK(rec.test_accuracy <= 1.0);
    CHECK(rec.total == doctest::Approx(rec.l_pred + rec.l_proto + rec.l_cross + rec.l_sn_dist + rec.l_sn_stat));
    // The prototype term stays off through the warm-up epochs.
    if (rec.epoch <= c.warmup_epochs) {
      CHECK(rec.l_proto == 0.0);
    } else {
      CHECK(rec.l_proto > 0.0);
    }
  }
  const auto j = to_json(r.log.epochs[0]);
  for (const char* key : {"epoch", "steps", "l_pred", "l_proto", "l_cross", "l_sn_dist", "l_sn_stat", "total",
                          "test_accuracy", "seconds"}) {
    CHECK(j.contains(key));
  }

  const auto no_test = train(bm.source, bm.target_train, {}, c);
  CHECK(no_test.log.epochs[0].test_accuracy == -1.0);
}

TEST_CASE("training is deterministic") {
  const auto bm = small_benchmark(4);
  TrainConfig c = small_config();
  c.epochs = 3;
  c.seed = 11;
  const auto a = train(bm.source, bm.target_train, bm.target_test, c);
  const auto b = train(bm.source, bm.target_train, bm.target_test, c);
  CHECK(without_seconds(a.log).dump() == without_seconds(b.log).dump());
  CHECK(a.params.blocks == b.params.blocks);
  c.seed = 12;
  const auto other = train(bm.source, bm.target_train, bm.target_test, c);
  CHECK_FALSE(other.params.blocks == a.params.blocks);
}

TEST_CASE("the prediction loss decreases") {
  const auto bm = small_benchmark(5);
  TrainConfig c = small_config();
  c.epochs = 15;
  c.seed = 5;
  const auto r = train(bm.source, bm.target_train, bm.target_test, c);
  auto window_mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t e = from; e < from + 5; ++e) s += r.log.epochs[e].l_pred;
    return s / 5.0;
  };
  CHECK(window_mean(5) < window_mean(0));
  CHECK(window_mean(10) < window_mean(5));
  CHECK(r.log.epochs.back().test_accuracy > 0.25);
}

TEST_CASE("without a domain shift alignment terms shrink") {
  // Held-out snippet features of source and zero-shift target videos.
  auto held_out_mmd = [](const ModelParams& p, const SyntheticBenchmark& held) {
    auto features = [&](const DomainDataset& ds) {
      std::vector<Tensor2> windows;
      for (const auto& v : ds.videos) windows.push_back(snippet_frames(v, {v.id, 0, p.dims.snippet_len}));
      return encode_batch(p, stack_snippets(p, windows)).features;
    };
    return statistical_loss(features(held.source), features(held.target_test), StatMetric::kMmd).value;
  };
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto bm = small_benchmark(seed, 0.0);
    const auto held = small_benchmark(seed + 1000, 0.0);
    TrainConfig c = small_config();
    c.seed = seed;

    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t epochs : {0u, 2u, 10u, 20u}) {
      c.epochs = epochs;
      const double mmd = held_out_mmd(train(bm.source, bm.target_train, {}, c).params, held);
      CHECK_MESSAGE(mmd < previous, "seed " << seed << " epochs " << epochs);
      previous = mmd;
    }

    // The consistency loss falls and settles near zero.
    const auto log = train(bm.source, bm.target_train, {}, c).log.epochs;
    auto window = [&](std::size_t from) {
      double s = 0.0;
      for (std::size_t e = from; e < from + 5; ++e) s += log[e].l_cross;
      return s / 5.0;
    };
    CHECK(window(5) < window(0));
    CHECK(window(15) < 0.02);
  }
}

TEST_CASE("ablation rows") {
  const auto rows = canonical_ablation_rows(TrainConfig{});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].name == "full");
  CHECK(rows[1].name == "no-ssa");
  CHECK_FALSE(rows[1].config.enable_ssa);
  CHECK(rows[2].name == "pred-only");
  CHECK_FALSE(rows[2].config.enable_cross);
  CHECK(rows[3].name == "no-attention");
  CHECK_FALSE(rows[3].config.enable_attention);

  const auto bm = small_benchmark(7);
  TrainConfig c = small_config();
  c.epochs = 2;
  const std::vector<AblationRow> twice{{"a", c}, {"b", c}};
  const auto res = run_ablation(bm.source, bm.target_train, bm.target_test, twice, {1, 2});
  REQUIRE(res.size() == 2);
  CHECK(res[0].accuracies.size() == 2);
  CHECK(res[0].accuracies == res[1].accuracies);
  CHECK(res[0].mean == doctest::Approx((res[0].accuracies[0] + res[0].accuracies[1]) / 2));

  // Each accuracy is what a direct run with that seed produces.
  c.seed = 2;
  const auto direct = train(bm.source, bm.target_train, {}, c);
  CHECK(res[0].accuracies[1] == top1_accuracy(direct.params, bm.target_test));

  CHECK_THROWS_AS(run_ablation(bm.source, bm.target_train, bm.target_test, {}, {1}), ArgumentError);
  CHECK_THROWS_AS(run_ablation(bm.source, bm.target_train, {}, twice, {1}), ArgumentError);
}
