#pragma once

// Snippet-level alignment objectives: joint prediction loss, target
// prototypes and prototype alignment, cross-snippet consistency against a key
// snippet, interpolation consistency over snippet pairs, statistical
// discrepancy (MMD / CORAL), and snippet attention.
//
// Losses return their value together with ∂L/∂(snippet features),
// ∂L/∂(snippet predictions) and any direct classifier gradient; total_loss
// backpropagates the weighted sum through the model once.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ssalign/model.hpp"
#include "ssalign/sampler.hpp"

namespace ssalign {

/// ε inside the attention reciprocal 1/max(l_ce, ε).
inline constexpr double kAttentionEpsilon = 1e-4;

struct TargetGroup {
  std::string video_id;
  std::size_t label = 0;
};

/// One encoded mini-batch. Rows of `encoded` are the source snippets first,
/// followed by each target video's `r` snippets in consecutive rows.
struct BatchSnippets {
  EncodedBatch encoded;
  std::vector<std::size_t> source_labels;
  std::vector<TargetGroup> groups;
  std::size_t r = 0;
  std::vector<SnippetRef> refs;  ///< provenance, same order as rows; may be empty in tests

  std::size_t num_source() const { return source_labels.size(); }
  std::size_t num_target() const { return groups.size() * r; }
  std::size_t size() const { return num_source() + num_target(); }
  std::size_t num_classes() const { return encoded.predictions.cols(); }
  std::size_t target_row(std::size_t group, std::size_t l) const { return num_source() + group * r + l; }
  /// Ground-truth label of any row.
  std::size_t label_of(std::size_t row) const;
};

/// Gradient of a scalar wrt the batch's features and predictions, plus the
/// part that reaches the classifier without going through a prediction row.
struct BatchGrad {
  Tensor2 d_features;
  Tensor2 d_predictions;
  Tensor2 d_classifier_w;
  Tensor2 d_classifier_b;

  static BatchGrad zeros(const BatchSnippets& batch);
  BatchGrad& add_scaled(const BatchGrad& other, double s);
};

struct LossTerm {
  double value = 0.0;
  BatchGrad grad;
};

// ---------------------------------------------------------------------------
// Prediction loss

/// Mean cross-entropy over source rows plus mean over all target rows.
LossTerm prediction_loss(const BatchSnippets& batch);

// ---------------------------------------------------------------------------
// Prototypes

struct PrototypeEstimate {
  Tensor2 means;              ///< C × d, zero rows where absent
  std::vector<char> present;  ///< class had at least one snippet
};

/// Per-class mean of `features` rows grouped by ground-truth `labels`.
PrototypeEstimate compute_prototypes(const Tensor2& features, std::span<const std::size_t> labels,
                                     std::size_t num_classes);

/// Running per-class sums of target snippet features across an epoch.
class PrototypeAccumulator {
 public:
  PrototypeAccumulator(std::size_t num_classes, std::size_t dim);
  void add(std::size_t label, std::span<const double> feature);
  PrototypeEstimate estimate() const;
  void clear();

 private:
  Tensor2 sums_;
  std::vector<std::size_t> counts_;
};

/// Target class prototypes maintained by an exponential moving average.
class Prototypes {
 public:
  Prototypes(std::size_t num_classes, std::size_t dim, double lambda_p);

  bool initialized() const { return initialized_; }
  bool has_class(std::size_t c) const { return present_.at(c) != 0; }
  const Tensor2& values() const { return values_; }
  double lambda_p() const { return lambda_p_; }
  std::size_t num_classes() const { return values_.rows(); }

  /// First estimate becomes the prototypes verbatim.
  void initialize(const PrototypeEstimate& current);
  /// new = λ_P·current + (1−λ_P)·previous for every class present in
  /// `current`; absent classes keep their previous row.
  void update(const PrototypeEstimate& current);

 private:
  Tensor2 values_;
  std::vector<char> present_;
  double lambda_p_;
  bool initialized_ = false;
};

void update_prototypes(Prototypes& protos, const PrototypeEstimate& current);

/// (1/N_S)·Σ_i ‖f_S,i − Pr_label(i)‖. Prototypes are constants. Source rows
/// whose class has no prototype contribute 0. Throws SequencingError when
/// `protos` is uninitialized.
LossTerm prototype_alignment_loss(const BatchSnippets& batch, const Prototypes& protos);

// ---------------------------------------------------------------------------
// Cross-snippet consistency

/// Among correctly classified rows of `predictions` (r×C) the one with the
/// lowest entropy; if none is correct, the lowest-entropy row. Ties → lowest index.
std::size_t select_key_snippet(const Tensor2& predictions, std::size_t label);

/// Key index per target group, chosen from the batch's current predictions.
std::vector<std::size_t> select_key_snippets(const BatchSnippets& batch);

/// (1/(N_T(r−1)))·Σ_j Σ_{l≠key} KL(o_key ‖ o_l). `key_predictions` (one row
/// per group) act as fixed teachers. Throws ConfigError if r < 2.
LossTerm cross_snippet_loss(const BatchSnippets& batch, std::span<const std::size_t> keys,
                            const Tensor2& key_predictions);
/// Same, with keys and teachers taken from the batch itself.
LossTerm cross_snippet_loss(const BatchSnippets& batch);

// ---------------------------------------------------------------------------
// Snippet attention

struct AttentionWeights {
  std::vector<double> raw;         ///< w = 1 + 1/max(l_ce, ε), one per target row
  std::vector<double> normalized;  ///< w / mean of w within the video's group
};

AttentionWeights attention_weights(const BatchSnippets& batch);
/// All-ones weights (attention disabled).
AttentionWeights uniform_attention(const BatchSnippets& batch);

/// f'_jl = w̄_jl · f_jl for target feature rows (num_target × d).
Tensor2 apply_attention(const Tensor2& target_features, std::span<const double> normalized);

/// Batch features with target rows replaced by their attention-weighted versions.
Tensor2 weighted_features(const BatchSnippets& batch, const AttentionWeights& weights);

// ---------------------------------------------------------------------------
// Interpolation consistency

struct IctPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double lambda = 1.0;
};

/// λ ~ Beta(α, α) via two gamma draws.
double sample_beta(double alpha, Rng& rng);

/// One partner per row (self excluded), drawn uniformly, with its own λ.
std::vector<IctPair> draw_ict_pairs(std::size_t count, double alpha, Rng& rng);

struct IctGrad {
  double value = 0.0;
  Tensor2 d_fa;
  Tensor2 d_fb;
  Tensor2 d_classifier_w;
  Tensor2 d_classifier_b;
};

/// CE(σ(H(λf_a + (1−λ)f_b)), λo_a + (1−λ)o_b) with the mixed prediction detached.
IctGrad ict_pair_loss(const Tensor2& f_a, const Tensor2& o_a, const Tensor2& f_b,
                      const Tensor2& o_b, double lambda, const ModelParams& params);

/// Mixed-prediction targets λo_a + (1−λ)o_b, one row per pair.
Tensor2 ict_targets(const Tensor2& predictions, std::span<const IctPair> pairs);

/// Mean ICT loss over `pairs`, mixing the attention-weighted features.
/// Gradients are returned wrt the raw (unweighted) features.
LossTerm snippet_distribution_loss(const BatchSnippets& batch, const AttentionWeights& weights,
                                   std::span<const IctPair> pairs, const Tensor2& targets,
                                   const ModelParams& params);
/// Convenience: draws pairs from `rng`, no attention.
LossTerm snippet_distribution_loss(const BatchSnippets& batch, double alpha, Rng& rng,
                                   const ModelParams& params);

// ---------------------------------------------------------------------------
// Statistical discrepancy

enum class StatMetric { kNone, kMmd, kCoral };
std::string to_string(StatMetric m);
StatMetric parse_stat_metric(const std::string& s);

struct StatGrad {
  double value = 0.0;
  Tensor2 d_source;
  Tensor2 d_target;
};

/// Median of pairwise squared distances over the rows of both sides (1 if zero).
double median_bandwidth(const Tensor2& source, const Tensor2& target);

/// Biased squared MMD with a Gaussian kernel exp(−‖a−b‖²/bandwidth), clamped at 0.
StatGrad mmd_loss(const Tensor2& source, const Tensor2& target, double bandwidth);
/// ‖Cov_S − Cov_T‖²_F / (4d²), unbiased covariances. Needs ≥ 2 rows per side.
StatGrad coral_loss(const Tensor2& source, const Tensor2& target);
/// Dispatch; MMD uses the median bandwidth of the inputs.
StatGrad statistical_loss(const Tensor2& source, const Tensor2& target, StatMetric metric);

// ---------------------------------------------------------------------------
// Overall objective

struct LossConfig {
  double lambda_sem = 1.0;
  double lambda_stat = 1.0;
  double alpha_v = 0.3;
  std::size_t warmup_epochs = 5;
  StatMetric stat_metric = StatMetric::kMmd;
  bool enable_proto = true;
  bool enable_cross = true;
  bool enable_sn_dist = true;
  bool enable_attention = true;

  bool stat_enabled() const { return stat_metric != StatMetric::kNone; }
};

/// Quantities treated as constants during backprop, fixed once per step from
/// the batch's forward pass (and the pairing RNG).
struct DetachedTerms {
  std::vector<std::size_t> keys;
  Tensor2 key_predictions;
  AttentionWeights attention;
  std::vector<IctPair> pairs;
  Tensor2 ict_targets;
  double bandwidth = 1.0;
};

DetachedTerms detach_terms(const BatchSnippets& batch, const LossConfig& config, Rng& pair_rng);

enum Component : std::size_t { kPred, kProto, kCross, kSnDist, kSnStat, kNumComponents };

struct LossReport {
  double l_pred = 0.0;
  double l_proto = 0.0;
  double l_cross = 0.0;
  double l_sn_dist = 0.0;
  double l_sn_stat = 0.0;
  double total = 0.0;
  ParamSet grads;  ///< ∂total/∂θ
  /// ∂L_component/∂θ (unweighted), filled only when requested.
  std::array<ParamSet, kNumComponents> component_grads;
};

/// total = L_pred + λ_sem(L_proto + L_cross + L_sn-dist) + λ_stat·L_sn-stat.
/// L_proto is 0 while epoch ≤ warmup or before prototypes exist. Disabled
/// components report 0.
LossReport total_loss(const ModelParams& params, const BatchSnippets& batch,
                      const Prototypes& protos, std::size_t epoch, const LossConfig& config,
                      const DetachedTerms& detached, bool with_component_grads = false);

}  // namespace ssalign
