#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssalign/align.hpp"
#include "ssalign/dataio.hpp"
#include "ssalign/model.hpp"
#include "ssalign/sampler.hpp"

namespace ssalign {

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda_sem = 1.0;
  double lambda_stat = 1.0;
  double lambda_p = 0.6;
  double alpha_v = 0.3;
  std::size_t m = 8;        ///< snippet length
  std::size_t min_gap = 8;  ///< minimum start gap between a target video's snippets
  std::size_t r = 3;        ///< snippets per target video
  std::size_t warmup_epochs = 5;
  StatMetric stat_metric = StatMetric::kMmd;
  std::size_t source_per_batch = 12;
  std::size_t target_per_batch = 4;
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::uint64_t seed = 0;

  bool enable_proto = true;
  bool enable_cross = true;
  bool enable_sn_dist = true;
  bool enable_sn_stat = true;
  bool enable_attention = true;
  bool enable_ssa = true;

  LossConfig loss_config() const;
  ModelDims model_dims(std::size_t feature_dim, std::size_t classes) const;
  /// Checks the configuration against the data before any step runs.
  /// Throws ConfigError.
  void validate(const DomainDataset& source, const DomainDataset& target_train) const;

  /// Every adaptation component off: plain joint cross-entropy training.
  TrainConfig prediction_only() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct OptimizerState {
  ParamSet velocity;

  static OptimizerState zeros_like(const ModelParams& params);
};

/// g' = g + wd·θ; v ← μ·v + g'; θ ← θ − lr·v. Throws TrainingError naming the
/// block if a gradient is non-finite.
void sgd_step(ModelParams& params, const ParamSet& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay);

/// Which videos make up each mini-batch of one epoch.
struct BatchPlan {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// One epoch is a shuffled pass over the source videos in chunks of
/// `source_per_batch`; target videos follow a shuffled cycle that is
/// reshuffled whenever it runs out and at the start of every epoch.
class BatchScheduler {
 public:
  BatchScheduler(std::size_t n_source, std::size_t n_target, std::size_t source_per_batch,
                 std::size_t target_per_batch);
  std::vector<BatchPlan> plan_epoch(Rng& rng);

 private:
  std::size_t n_source_, n_target_, source_per_batch_, target_per_batch_;
};

/// Snippet windows chosen for one batch, before encoding.
struct BatchSelection {
  std::vector<SnippetRef> source;
  std::vector<std::vector<SnippetRef>> target;  ///< r refs per target video
};

BatchSelection select_snippets(const DomainDataset& source, const DomainDataset& target,
                               const BatchPlan& plan, const TrainConfig& config,
                               EpochSamplingState& state, Rng& rng);

/// Samples and encodes one mini-batch.
BatchSnippets assemble_batch(const DomainDataset& source, const DomainDataset& target,
                             const BatchPlan& plan, const TrainConfig& config,
                             EpochSamplingState& state, Rng& rng, const ModelParams& params);

/// Encodes an already-selected set of snippets.
BatchSnippets encode_selection(const DomainDataset& source, const DomainDataset& target,
                               const BatchPlan& plan, const BatchSelection& selection,
                               const ModelParams& params);

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  std::size_t steps = 0;
  double l_pred = 0.0;
  double l_proto = 0.0;
  double l_cross = 0.0;
  double l_sn_dist = 0.0;
  double l_sn_stat = 0.0;
  double total = 0.0;
  double test_accuracy = -1.0;  ///< −1 when no test set was given
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

nlohmann::json to_json(const EpochRecord& record);

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Independent RNG streams derived from the run seed.
struct TrainerRngs {
  Rng sampling;
  Rng pairing;

  explicit TrainerRngs(std::uint64_t seed);
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full training loop. `target_test` may be empty (no per-epoch evaluation).
TrainResult train(const DomainDataset& source, const DomainDataset& target_train,
                  const DomainDataset& target_test, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct AblationRow {
  std::string name;
  TrainConfig config;
};

struct AblationResult {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  ///< final target-test top-1, one per seed
  double mean = 0.0;
};

/// full, no-ssa, pred-only, no-attention.
std::vector<AblationRow> canonical_ablation_rows(const TrainConfig& base);

/// Trains every row once per seed (the seed overrides `config.seed`).
std::vector<AblationResult> run_ablation(const DomainDataset& source, const DomainDataset& target_train,
                                         const DomainDataset& target_test,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<std::uint64_t>& seeds);

}  // namespace ssalign
