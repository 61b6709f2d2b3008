#include "ssalign/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ssalign/errors.hpp"

namespace ssalign {

using nlohmann::json;

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.lambda_sem = lambda_sem;
  c.lambda_stat = lambda_stat;
  c.alpha_v = alpha_v;
  c.warmup_epochs = warmup_epochs;
  c.stat_metric = enable_sn_stat ? stat_metric : StatMetric::kNone;
  c.enable_proto = enable_proto;
  c.enable_cross = enable_cross;
  c.enable_sn_dist = enable_sn_dist;
  c.enable_attention = enable_attention;
  return c;
}

ModelDims TrainConfig::model_dims(std::size_t feature_dim, std::size_t classes) const {
  return {m, feature_dim, hidden, embed, classes};
}

TrainConfig TrainConfig::prediction_only() const {
  TrainConfig c = *this;
  c.enable_proto = c.enable_cross = c.enable_sn_dist = c.enable_sn_stat = c.enable_attention = false;
  c.stat_metric = StatMetric::kNone;
  return c;
}

void TrainConfig::validate(const DomainDataset& source, const DomainDataset& target_train) const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid configuration: " + msg); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(lambda_p >= 0.0 && lambda_p <= 1.0)) fail("lambda_p must lie in [0,1]");
  if (!(lambda_sem >= 0.0) || !(lambda_stat >= 0.0)) fail("loss weights must be >= 0");
  if (enable_sn_dist && !(alpha_v > 0.0)) fail("alpha_v must be > 0");
  if (m == 0) fail("snippet length m must be >= 1");
  if (r == 0) fail("r must be >= 1");
  if (enable_cross && r < 2) fail("cross-snippet consistency needs r >= 2 (use --no-cross with r = 1)");
  if (hidden == 0 || embed == 0) fail("model widths must be >= 1");
  if (source.videos.empty()) fail("source dataset is empty");
  if (target_train.videos.empty()) fail("target training dataset is empty");
  if (source.feature_dim != target_train.feature_dim) fail("source and target feature dims differ");
  if (source.num_classes != target_train.num_classes) fail("source and target class counts differ");
  if (source_per_batch == 0 || target_per_batch == 0) fail("batch sizes must be >= 1");
  if (target_per_batch > target_train.videos.size()) {
    fail("target_per_batch " + std::to_string(target_per_batch) + " exceeds " +
         std::to_string(target_train.videos.size()) + " target videos");
  }
  if (source.min_frames() < m) fail("a source video is shorter than m = " + std::to_string(m));
  const std::size_t tmin = target_train.min_frames();
  if (enable_ssa) {
    if (!target_sampling_feasible(tmin, r, m, min_gap)) {
      fail("(r-1)*mhat = " + std::to_string((r - 1) * std::max<std::size_t>(min_gap, 1)) +
           " exceeds n-m = " + std::to_string(tmin >= m ? tmin - m : 0) + " for the shortest target video");
    }
  } else if (r * m > tmin) {
    fail("r*m exceeds the shortest target video");
  }
  const std::size_t batch_source = std::min(source_per_batch, source.videos.size());
  if (enable_sn_stat && stat_metric == StatMetric::kCoral && (batch_source < 2 || target_per_batch * r < 2)) {
    fail("CORAL needs at least 2 source and 2 target snippets per batch");
  }
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lambda_sem", c.lambda_sem},
          {"lambda_stat", c.lambda_stat},
          {"lambda_p", c.lambda_p},
          {"alpha_v", c.alpha_v},
          {"m", c.m},
          {"mhat", c.min_gap},
          {"r", c.r},
          {"e_warmup", c.warmup_epochs},
          {"stat_metric", to_string(c.stat_metric)},
          {"source_per_batch", c.source_per_batch},
          {"target_per_batch", c.target_per_batch},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"seed", c.seed},
          {"enable_proto", c.enable_proto},
          {"enable_cross", c.enable_cross},
          {"enable_sn_dist", c.enable_sn_dist},
          {"enable_sn_stat", c.enable_sn_stat},
          {"enable_attention", c.enable_attention},
          {"enable_ssa", c.enable_ssa}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lambda_sem = j.at("lambda_sem").get<double>();
  c.lambda_stat = j.at("lambda_stat").get<double>();
  c.lambda_p = j.at("lambda_p").get<double>();
  c.alpha_v = j.at("alpha_v").get<double>();
  c.m = j.at("m").get<std::size_t>();
  c.min_gap = j.at("mhat").get<std::size_t>();
  c.r = j.at("r").get<std::size_t>();
  c.warmup_epochs = j.at("e_warmup").get<std::size_t>();
  c.stat_metric = parse_stat_metric(j.at("stat_metric").get<std::string>());
  c.source_per_batch = j.at("source_per_batch").get<std::size_t>();
  c.target_per_batch = j.at("target_per_batch").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embed = j.at("embed").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.enable_proto = j.at("enable_proto").get<bool>();
  c.enable_cross = j.at("enable_cross").get<bool>();
  c.enable_sn_dist = j.at("enable_sn_dist").get<bool>();
  c.enable_sn_stat = j.at("enable_sn_stat").get<bool>();
  c.enable_attention = j.at("enable_attention").get<bool>();
  c.enable_ssa = j.at("enable_ssa").get<bool>();
  return c;
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},         {"steps", r.steps},       {"l_pred", r.l_pred},
          {"l_proto", r.l_proto},     {"l_cross", r.l_cross},   {"l_sn_dist", r.l_sn_dist},
          {"l_sn_stat", r.l_sn_stat}, {"total", r.total},       {"test_accuracy", r.test_accuracy},
          {"seconds", r.seconds}};
}

// ---------------------------------------------------------------------------

OptimizerState OptimizerState::zeros_like(const ModelParams& params) { return {zero_grads(params)}; }

void sgd_step(ModelParams& params, const ParamSet& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay) {
  if (grads.size() != params.blocks.size() || state.velocity.size() != params.blocks.size()) {
    throw DimensionError("sgd_step: block count mismatch");
  }
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& theta = params.blocks[b];
    const auto& g = grads[b];
    auto& v = state.velocity[b];
    require_same_shape(theta, g, "sgd_step");
    require_same_shape(theta, v, "sgd_step(velocity)");
    if (!g.all_finite()) {
      throw TrainingError("sgd_step: non-finite gradient in block " + std::string(block_name(b)));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] + weight_decay * theta[i];
      v[i] = momentum * v[i] + gi;
      theta[i] -= lr * v[i];
    }
  }
}

// ---------------------------------------------------------------------------

BatchScheduler::BatchScheduler(std::size_t n_source, std::size_t n_target, std::size_t source_per_batch,
                               std::size_t target_per_batch)
    : n_source_(n_source), n_target_(n_target), source_per_batch_(source_per_batch),
      target_per_batch_(target_per_batch) {
  if (n_source == 0 || n_target == 0 || source_per_batch == 0 || target_per_batch == 0) {
    throw ArgumentError("BatchScheduler: counts must be positive");
  }
}

std::vector<BatchPlan> BatchScheduler::plan_epoch(Rng& rng) {
  std::vector<std::size_t> src(n_source_);
  std::iota(src.begin(), src.end(), 0);
  std::shuffle(src.begin(), src.end(), rng);

  // Incomplete trailing source chunks are dropped, unless the whole set is
  // smaller than one batch.
  const std::size_t per = std::min(source_per_batch_, n_source_);
  const std::size_t batches = n_source_ / per;

  std::vector<std::size_t> cycle(n_target_);
  std::size_t pos = n_target_;
  auto next_target = [&] {
    if (pos == n_target_) {
      std::iota(cycle.begin(), cycle.end(), 0);
      std::shuffle(cycle.begin(), cycle.end(), rng);
      pos = 0;
    }
    return cycle[pos++];
  };

  std::vector<BatchPlan> plans(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    plans[b].source.assign(src.begin() + static_cast<std::ptrdiff_t>(b * per),
                           src.begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
    for (std::size_t t = 0; t < target_per_batch_; ++t) plans[b].target.push_back(next_target());
  }
  return plans;
}

BatchSelection select_snippets(const DomainDataset& source, const DomainDataset& target,
                               const BatchPlan& plan, const TrainConfig& config,
                               EpochSamplingState& state, Rng& rng) {
  BatchSelection sel;
  for (std::size_t i : plan.source) {
    const auto& v = source.videos.at(i);
    sel.source.push_back(config.enable_ssa ? sample_source_snippet(v, config.m, rng)
                                           : SnippetRef{v.id, 0, config.m});
  }
  for (std::size_t j : plan.target) {
    const auto& v = target.videos.at(j);
    sel.target.push_back(config.enable_ssa
                             ? sample_target_snippets(v, config.r, config.m, config.min_gap, state, rng)
                             : sequential_snippets(v, config.r, config.m));
  }
  return sel;
}

BatchSnippets encode_selection(const DomainDataset& source, const DomainDataset& target,
                               const BatchPlan& plan, const BatchSelection& selection,
                               const ModelParams& params) {
  BatchSnippets batch;
  std::vector<Tensor2> windows;
  for (std::size_t k = 0; k < plan.source.size(); ++k) {
    const auto& v = source.videos.at(plan.source[k]);
    windows.push_back(snippet_frames(v, selection.source[k]));
    batch.source_labels.push_back(v.label);
    batch.refs.push_back(selection.source[k]);
  }
  batch.r = selection.target.empty() ? 0 : selection.target.front().size();
  for (std::size_t k = 0; k < plan.target.size(); ++k) {
    const auto& v = target.videos.at(plan.target[k]);
    if (selection.target[k].size() != batch.r) throw DimensionError("uneven snippets per target video");
    batch.groups.push_back({v.id, v.label});
    for (const auto& ref : selection.target[k]) {
      windows.push_back(snippet_frames(v, ref));
      batch.refs.push_back(ref);
    }
  }
  batch.encoded = encode_batch(params, stack_snippets(params, windows));
  return batch;
}

BatchSnippets assemble_batch(const DomainDataset& source, const DomainDataset& target,
                             const BatchPlan& plan, const TrainConfig& config,
                             EpochSamplingState& state, Rng& rng, const ModelParams& params) {
  return encode_selection(source, target, plan, select_snippets(source, target, plan, config, state, rng),
                          params);
}

// ---------------------------------------------------------------------------

TrainerRngs::TrainerRngs(std::uint64_t seed) {
  std::seed_seq s1{seed, std::uint64_t{101}};
  std::seed_seq s2{seed, std::uint64_t{202}};
  sampling.seed(s1);
  pairing.seed(s2);
}

TrainResult train(const DomainDataset& source, const DomainDataset& target_train,
                  const DomainDataset& target_test, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate(source, target_train);
  const ModelDims dims = config.model_dims(source.feature_dim, source.num_classes);
  TrainResult result{init_params(dims, config.seed), {}};
  if (config.epochs == 0) return result;

  ModelParams& params = result.params;
  OptimizerState opt = OptimizerState::zeros_like(params);
  TrainerRngs rngs(config.seed);
  BatchScheduler scheduler(source.videos.size(), target_train.videos.size(), config.source_per_batch,
                           config.target_per_batch);
  EpochSamplingState state;
  Prototypes protos(dims.classes, dims.embed, config.lambda_p);
  PrototypeAccumulator epoch_protos(dims.classes, dims.embed);
  const LossConfig loss_cfg = config.loss_config();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    reset_epoch(state);
    epoch_protos.clear();
    EpochRecord rec;
    rec.epoch = epoch;

    const auto plans = scheduler.plan_epoch(rngs.sampling);
    for (std::size_t step = 0; step < plans.size(); ++step) {
      const BatchSnippets batch =
          assemble_batch(source, target_train, plans[step], config, state, rngs.sampling, params);
      const DetachedTerms detached = detach_terms(batch, loss_cfg, rngs.pairing);
      const LossReport loss = total_loss(params, batch, protos, epoch, loss_cfg, detached);
      if (!std::isfinite(loss.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      if (config.enable_proto) {
        for (std::size_t k = 0; k < batch.num_target(); ++k) {
          const std::size_t row = batch.num_source() + k;
          Tensor2 f = batch.encoded.features.row_copy(row);
          f *= detached.attention.normalized[k];
          epoch_protos.add(batch.label_of(row), f.data());
        }
      }
      sgd_step(params, loss.grads, opt, config.lr, config.momentum, config.weight_decay);

      rec.l_pred += loss.l_pred;
      rec.l_proto += loss.l_proto;
      rec.l_cross += loss.l_cross;
      rec.l_sn_dist += loss.l_sn_dist;
      rec.l_sn_stat += loss.l_sn_stat;
      rec.total += loss.total;
      ++rec.steps;
    }

    if (config.enable_proto && epoch >= config.warmup_epochs) {
      if (!protos.initialized()) {
        protos.initialize(epoch_protos.estimate());
      } else {
        update_prototypes(protos, epoch_protos.estimate());
      }
    }

    const double inv = rec.steps ? 1.0 / static_cast<double>(rec.steps) : 0.0;
    for (double* v : {&rec.l_pred, &rec.l_proto, &rec.l_cross, &rec.l_sn_dist, &rec.l_sn_stat, &rec.total})
      *v *= inv;
    if (!target_test.videos.empty()) rec.test_accuracy = top1_accuracy(params, target_test);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<AblationRow> canonical_ablation_rows(const TrainConfig& base) {
  TrainConfig no_ssa = base;
  no_ssa.enable_ssa = false;
  TrainConfig no_attention = base;
  no_attention.enable_attention = false;
  return {{"full", base}, {"no-ssa", no_ssa}, {"pred-only", base.prediction_only()},
          {"no-attention", no_attention}};
}

std::vector<AblationResult> run_ablation(const DomainDataset& source, const DomainDataset& target_train,
                                         const DomainDataset& target_test,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<std::uint64_t>& seeds) {
  if (rows.empty() || seeds.empty()) throw ArgumentError("run_ablation: empty grid");
  if (target_test.videos.empty()) throw ArgumentError("run_ablation: empty test set");
  std::vector<AblationResult> out;
  for (const auto& row : rows) {
    AblationResult res{row.name, seeds, {}, 0.0};
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = row.config;
      cfg.seed = seed;
      const auto trained = train(source, target_train, DomainDataset{}, cfg);
      res.accuracies.push_back(top1_accuracy(trained.params, target_test));
    }
    res.mean = std::accumulate(res.accuracies.begin(), res.accuracies.end(), 0.0) /
               static_cast<double>(res.accuracies.size());
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace ssalign
