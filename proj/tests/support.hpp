#pragma once
// Shared fixtures for the test binaries.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ssalign/align.hpp"
#include "ssalign/dataio.hpp"
#include "ssalign/model.hpp"
#include "ssalign/trainer.hpp"

namespace ssalign::testing {

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor2 t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

/// Softmax of random logits: strictly positive rows summing to 1.
inline Tensor2 random_probs(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return softmax(random_tensor(rows, cols, seed, 1.5));
}

/// Two-class, four-dimensional benchmark with short videos.
inline SyntheticBenchmark toy_benchmark(std::uint64_t seed = 7) {
  BenchmarkSpec spec;
  spec.num_classes = 2;
  spec.feature_dim = 4;
  spec.n_source = 2;
  spec.k_shot = 1;
  spec.n_test = 4;
  spec.frames_per_video = 12;
  spec.shift = {0.8, 0.5, 0.3, seed};
  return generate_synthetic_benchmark(spec);
}

/// m = 4, h = 8, d = 4, r = 2; one batch holds 2 source videos and 1 target video.
inline TrainConfig toy_config() {
  TrainConfig c;
  c.m = 4;
  c.min_gap = 4;
  c.r = 2;
  c.hidden = 8;
  c.embed = 4;
  c.source_per_batch = 2;
  c.target_per_batch = 1;
  c.warmup_epochs = 0;
  return c;
}

/// Everything one loss evaluation on the toy batch needs, with the random
/// draws frozen.
struct ToyProblem {
  SyntheticBenchmark data;
  TrainConfig config;
  ModelParams params;
  BatchPlan plan;
  BatchSelection selection;
  BatchSnippets batch;
  DetachedTerms detached;
  Prototypes protos{2, 4, 0.6};

  BatchSnippets encode(const ModelParams& p) const {
    return encode_selection(data.source, data.target_train, plan, selection, p);
  }
};

inline ToyProblem make_toy_problem(StatMetric metric = StatMetric::kMmd, std::uint64_t seed = 3) {
  ToyProblem t;
  t.data = toy_benchmark();
  t.data.target_train.videos.resize(1);
  t.config = toy_config();
  t.config.stat_metric = metric;
  t.params = init_params(t.config.model_dims(4, 2), seed);
  Rng rng(seed + 11);
  EpochSamplingState state;
  t.plan = {{0, 1}, {0}};
  t.selection = select_snippets(t.data.source, t.data.target_train, t.plan, t.config, state, rng);
  t.batch = t.encode(t.params);
  Rng pair_rng(seed + 23);
  t.detached = detach_terms(t.batch, t.config.loss_config(), pair_rng);

  // Prototypes near, but not at, the current target features so that every
  // source distance is away from zero.
  Tensor2 protos(2, 4);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < 4; ++j) protos(c, j) = 0.3 * std::sin(1.0 + 3.0 * c + j);
  }
  t.protos.initialize({protos, {1, 1}});
  return t;
}

}  // namespace ssalign::testing
