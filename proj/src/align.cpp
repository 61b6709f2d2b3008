#include "ssalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ssalign/errors.hpp"

namespace ssalign {

std::size_t BatchSnippets::label_of(std::size_t row) const {
  if (row < num_source()) return source_labels[row];
  return groups.at((row - num_source()) / r).label;
}

BatchGrad BatchGrad::zeros(const BatchSnippets& batch) {
  const std::size_t B = batch.size(), d = batch.encoded.features.cols(), C = batch.num_classes();
  return {Tensor2(B, d), Tensor2(B, C), Tensor2(d, C), Tensor2(1, C)};
}

BatchGrad& BatchGrad::add_scaled(const BatchGrad& other, double s) {
  d_features.add_scaled(other.d_features, s);
  d_predictions.add_scaled(other.d_predictions, s);
  d_classifier_w.add_scaled(other.d_classifier_w, s);
  d_classifier_b.add_scaled(other.d_classifier_b, s);
  return *this;
}

// ---------------------------------------------------------------------------

LossTerm prediction_loss(const BatchSnippets& batch) {
  if (batch.num_source() == 0 || batch.num_target() == 0) {
    throw ArgumentError("prediction_loss: both source and target snippets are required");
  }
  LossTerm t{0.0, BatchGrad::zeros(batch)};
  const auto& preds = batch.encoded.predictions;

  auto side = [&](std::size_t first, std::size_t count) {
    const double scale = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (std::size_t row = first; row < first + count; ++row) {
      const auto ce = cross_entropy(preds.row_copy(row), batch.label_of(row));
      total += ce.value;
      auto g = t.grad.d_predictions.row_span(row);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] = ce.grad[c] * scale;
    }
    return total * scale;
  };
  t.value = side(0, batch.num_source()) + side(batch.num_source(), batch.num_target());
  return t;
}

// ---------------------------------------------------------------------------

PrototypeEstimate compute_prototypes(const Tensor2& features, std::span<const std::size_t> labels,
                                     std::size_t num_classes) {
  if (labels.size() != features.rows()) throw DimensionError("compute_prototypes: label count mismatch");
  PrototypeAccumulator acc(num_classes, features.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) acc.add(labels[i], features.row_span(i));
  return acc.estimate();
}

PrototypeAccumulator::PrototypeAccumulator(std::size_t num_classes, std::size_t dim)
    : sums_(num_classes, dim), counts_(num_classes, 0) {}

void PrototypeAccumulator::add(std::size_t label, std::span<const double> feature) {
  if (label >= counts_.size()) throw ArgumentError("prototype label out of range");
  if (feature.size() != sums_.cols()) throw DimensionError("prototype feature width mismatch");
  auto row = sums_.row_span(label);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] += feature[j];
  ++counts_[label];
}

PrototypeEstimate PrototypeAccumulator::estimate() const {
  PrototypeEstimate e{Tensor2(sums_.rows(), sums_.cols()), std::vector<char>(counts_.size(), 0)};
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    if (counts_[c] == 0) continue;
    e.present[c] = 1;
    const double inv = 1.0 / static_cast<double>(counts_[c]);
    auto in = sums_.row_span(c);
    auto out = e.means.row_span(c);
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] * inv;
  }
  return e;
}

void PrototypeAccumulator::clear() {
  sums_.fill(0.0);
  std::fill(counts_.begin(), counts_.end(), 0);
}

Prototypes::Prototypes(std::size_t num_classes, std::size_t dim, double lambda_p)
    : values_(num_classes, dim), present_(num_classes, 0), lambda_p_(lambda_p) {
  if (!(lambda_p >= 0.0 && lambda_p <= 1.0)) throw ArgumentError("lambda_p must lie in [0,1]");
}

void Prototypes::initialize(const PrototypeEstimate& current) {
  require_same_shape(values_, current.means, "Prototypes::initialize");
  values_ = current.means;
  present_ = current.present;
  initialized_ = true;
}

void Prototypes::update(const PrototypeEstimate& current) {
  if (!initialized_) throw SequencingError("Prototypes::update before initialize");
  require_same_shape(values_, current.means, "Prototypes::update");
  for (std::size_t c = 0; c < values_.rows(); ++c) {
    if (!current.present[c]) continue;
    auto prev = values_.row_span(c);
    auto cur = current.means.row_span(c);
    if (!present_[c]) {
      std::copy(cur.begin(), cur.end(), prev.begin());
      present_[c] = 1;
      continue;
    }
    if (lambda_p_ == 1.0) {
      std::copy(cur.begin(), cur.end(), prev.begin());
    } else if (lambda_p_ != 0.0) {
      for (std::size_t j = 0; j < prev.size(); ++j)
        prev[j] = lambda_p_ * cur[j] + (1.0 - lambda_p_) * prev[j];
    }
  }
}

void update_prototypes(Prototypes& protos, const PrototypeEstimate& current) { protos.update(current); }

LossTerm prototype_alignment_loss(const BatchSnippets& batch, const Prototypes& protos) {
  if (!protos.initialized()) throw SequencingError("prototype_alignment_loss: prototypes not initialized");
  if (batch.num_source() == 0) throw ArgumentError("prototype_alignment_loss: no source snippets");
  if (protos.values().cols() != batch.encoded.features.cols()) {
    throw DimensionError("prototype_alignment_loss: prototype width mismatch");
  }
  LossTerm t{0.0, BatchGrad::zeros(batch)};
  const double scale = 1.0 / static_cast<double>(batch.num_source());
  for (std::size_t i = 0; i < batch.num_source(); ++i) {
    const std::size_t c = batch.source_labels[i];
    if (!protos.has_class(c)) continue;
    const auto dist = euclidean_distance(batch.encoded.features.row_copy(i), protos.values().row_copy(c));
    t.value += dist.value;
    auto g = t.grad.d_features.row_span(i);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = dist.da[j] * scale;
  }
  t.value *= scale;
  return t;
}

// ---------------------------------------------------------------------------

std::size_t select_key_snippet(const Tensor2& predictions, std::size_t label) {
  if (predictions.rows() == 0) throw ArgumentError("select_key_snippet: empty group");
  std::size_t best = 0, best_correct = predictions.rows();
  double best_h = 0.0, best_correct_h = 0.0;
  for (std::size_t l = 0; l < predictions.rows(); ++l) {
    const double h = entropy(predictions.row_span(l));
    if (l == 0 || h < best_h) {
      best = l;
      best_h = h;
    }
    if (argmax_row(predictions, l) == label &&
        (best_correct == predictions.rows() || h < best_correct_h)) {
      best_correct = l;
      best_correct_h = h;
    }
  }
  return best_correct < predictions.rows() ? best_correct : best;
}

std::vector<std::size_t> select_key_snippets(const BatchSnippets& batch) {
  std::vector<std::size_t> keys(batch.groups.size());
  const std::size_t C = batch.num_classes();
  for (std::size_t j = 0; j < batch.groups.size(); ++j) {
    Tensor2 group(batch.r, C);
    for (std::size_t l = 0; l < batch.r; ++l)
      group.set_row(l, batch.encoded.predictions.row_span(batch.target_row(j, l)));
    keys[j] = select_key_snippet(group, batch.groups[j].label);
  }
  return keys;
}

namespace {

Tensor2 gather_key_predictions(const BatchSnippets& batch, std::span<const std::size_t> keys) {
  Tensor2 out(batch.groups.size(), batch.num_classes());
  for (std::size_t j = 0; j < batch.groups.size(); ++j)
    out.set_row(j, batch.encoded.predictions.row_span(batch.target_row(j, keys[j])));
  return out;
}

}  // namespace

LossTerm cross_snippet_loss(const BatchSnippets& batch, std::span<const std::size_t> keys,
                            const Tensor2& key_predictions) {
  if (batch.r < 2) throw ConfigError("cross_snippet_loss needs r >= 2 snippets per target video");
  if (batch.groups.empty()) throw ArgumentError("cross_snippet_loss: no target videos");
  if (keys.size() != batch.groups.size() || key_predictions.rows() != batch.groups.size()) {
    throw DimensionError("cross_snippet_loss: one key per target video expected");
  }
  LossTerm t{0.0, BatchGrad::zeros(batch)};
  const double scale = 1.0 / static_cast<double>(batch.groups.size() * (batch.r - 1));
  for (std::size_t j = 0; j < batch.groups.size(); ++j) {
    const Tensor2 teacher = key_predictions.row_copy(j);
    for (std::size_t l = 0; l < batch.r; ++l) {
      if (l == keys[j]) continue;
      const std::size_t row = batch.target_row(j, l);
      const auto kl = kl_divergence(teacher, batch.encoded.predictions.row_copy(row));
      t.value += kl.value;
      auto g = t.grad.d_predictions.row_span(row);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] = kl.grad[c] * scale;
    }
  }
  t.value *= scale;
  return t;
}

LossTerm cross_snippet_loss(const BatchSnippets& batch) {
  const auto keys = select_key_snippets(batch);
  return cross_snippet_loss(batch, keys, gather_key_predictions(batch, keys));
}

// ---------------------------------------------------------------------------

AttentionWeights attention_weights(const BatchSnippets& batch) {
  AttentionWeights w;
  w.raw.resize(batch.num_target());
  w.normalized.resize(batch.num_target());
  for (std::size_t j = 0; j < batch.groups.size(); ++j) {
    double mean = 0.0;
    for (std::size_t l = 0; l < batch.r; ++l) {
      const std::size_t row = batch.target_row(j, l);
      const double ce = cross_entropy(batch.encoded.predictions.row_copy(row), batch.groups[j].label).value;
      const double raw = 1.0 + 1.0 / std::max(ce, kAttentionEpsilon);
      w.raw[j * batch.r + l] = raw;
      mean += raw;
    }
    mean /= static_cast<double>(batch.r);
    for (std::size_t l = 0; l < batch.r; ++l)
      w.normalized[j * batch.r + l] = w.raw[j * batch.r + l] / mean;
  }
  return w;
}

AttentionWeights uniform_attention(const BatchSnippets& batch) {
  return {std::vector<double>(batch.num_target(), 1.0), std::vector<double>(batch.num_target(), 1.0)};
}

Tensor2 apply_attention(const Tensor2& target_features, std::span<const double> normalized) {
  if (normalized.size() != target_features.rows()) {
    throw DimensionError("apply_attention: " + std::to_string(normalized.size()) + " weights for " +
                         std::to_string(target_features.rows()) + " features");
  }
  Tensor2 out = target_features;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (double& v : out.row_span(i)) v *= normalized[i];
  return out;
}

Tensor2 weighted_features(const BatchSnippets& batch, const AttentionWeights& weights) {
  if (weights.normalized.size() != batch.num_target()) {
    throw DimensionError("weighted_features: attention weight count mismatch");
  }
  Tensor2 out = batch.encoded.features;
  for (std::size_t t = 0; t < batch.num_target(); ++t)
    for (double& v : out.row_span(batch.num_source() + t)) v *= weights.normalized[t];
  return out;
}

// ---------------------------------------------------------------------------

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ArgumentError("Beta parameter must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

std::vector<IctPair> draw_ict_pairs(std::size_t count, double alpha, Rng& rng) {
  if (count < 2) throw ArgumentError("snippet pairing needs at least 2 snippets");
  std::vector<IctPair> pairs(count);
  std::uniform_int_distribution<std::size_t> partner(0, count - 2);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t b = partner(rng);
    if (b >= i) ++b;
    pairs[i] = {i, b, sample_beta(alpha, rng)};
  }
  return pairs;
}

Tensor2 ict_targets(const Tensor2& predictions, std::span<const IctPair> pairs) {
  Tensor2 out(pairs.size(), predictions.cols());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto mixed = convex_mix(predictions.row_copy(pairs[p].a), predictions.row_copy(pairs[p].b),
                                  pairs[p].lambda);
    out.set_row(p, mixed.data());
  }
  return out;
}

namespace {

// Shared core of the ICT loss: mixes rows of `features`, classifies, and
// returns the mean CE against `targets` with gradients wrt `features`.
struct MixedCe {
  double value = 0.0;
  Tensor2 d_features;
  Tensor2 d_w;
  Tensor2 d_b;
};

MixedCe mixed_cross_entropy(const Tensor2& features, std::span<const IctPair> pairs,
                            const Tensor2& targets, const ModelParams& params) {
  if (targets.rows() != pairs.size()) throw DimensionError("ICT targets do not match pair count");
  const std::size_t P = pairs.size();
  Tensor2 mixed(P, features.cols());
  for (std::size_t p = 0; p < P; ++p) {
    const auto row = convex_mix(features.row_copy(pairs[p].a), features.row_copy(pairs[p].b), pairs[p].lambda);
    mixed.set_row(p, row.data());
  }
  const Tensor2 probs = softmax(classify(params, mixed));
  const double scale = 1.0 / static_cast<double>(P);

  MixedCe out{0.0, Tensor2(features.rows(), features.cols()), {}, {}};
  Tensor2 d_probs(P, probs.cols());
  for (std::size_t p = 0; p < P; ++p) {
    const auto ce = cross_entropy(probs.row_copy(p), targets.row_copy(p));
    out.value += ce.value;
    auto g = d_probs.row_span(p);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = ce.grad[c] * scale;
  }
  out.value *= scale;

  const Tensor2 d_logits = softmax_backward(probs, d_probs);
  auto ab = affine_backward(mixed, params[Block::kClassifierW], d_logits);
  out.d_w = std::move(ab.dw);
  out.d_b = std::move(ab.db);
  for (std::size_t p = 0; p < P; ++p) {
    const double lam = pairs[p].lambda;
    auto dm = ab.dx.row_span(p);
    auto da = out.d_features.row_span(pairs[p].a);
    for (std::size_t j = 0; j < dm.size(); ++j) da[j] += lam * dm[j];
    auto db = out.d_features.row_span(pairs[p].b);
    for (std::size_t j = 0; j < dm.size(); ++j) db[j] += (1.0 - lam) * dm[j];
  }
  return out;
}

}  // namespace

IctGrad ict_pair_loss(const Tensor2& f_a, const Tensor2& o_a, const Tensor2& f_b,
                      const Tensor2& o_b, double lambda, const ModelParams& params) {
  require_same_shape(f_a, f_b, "ict_pair_loss(features)");
  require_same_shape(o_a, o_b, "ict_pair_loss(predictions)");
  if (f_a.rows() != 1 || o_a.rows() != 1) throw DimensionError("ict_pair_loss: single rows expected");
  Tensor2 features(2, f_a.cols());
  features.set_row(0, f_a.data());
  features.set_row(1, f_b.data());
  const IctPair pair{0, 1, lambda};
  const Tensor2 target = convex_mix(o_a, o_b, lambda);
  auto r = mixed_cross_entropy(features, std::span(&pair, 1), target, params);
  return {r.value, r.d_features.row_copy(0), r.d_features.row_copy(1), std::move(r.d_w), std::move(r.d_b)};
}

LossTerm snippet_distribution_loss(const BatchSnippets& batch, const AttentionWeights& weights,
                                   std::span<const IctPair> pairs, const Tensor2& targets,
                                   const ModelParams& params) {
  if (batch.size() < 2) throw ArgumentError("snippet_distribution_loss: fewer than 2 snippets");
  const Tensor2 fw = weighted_features(batch, weights);
  auto r = mixed_cross_entropy(fw, pairs, targets, params);
  LossTerm t{r.value, BatchGrad::zeros(batch)};
  t.grad.d_features = std::move(r.d_features);
  for (std::size_t k = 0; k < batch.num_target(); ++k)
    for (double& v : t.grad.d_features.row_span(batch.num_source() + k)) v *= weights.normalized[k];
  t.grad.d_classifier_w = std::move(r.d_w);
  t.grad.d_classifier_b = std::move(r.d_b);
  return t;
}

LossTerm snippet_distribution_loss(const BatchSnippets& batch, double alpha, Rng& rng,
                                   const ModelParams& params) {
  const auto pairs = draw_ict_pairs(batch.size(), alpha, rng);
  return snippet_distribution_loss(batch, uniform_attention(batch), pairs,
                                   ict_targets(batch.encoded.predictions, pairs), params);
}

// ---------------------------------------------------------------------------

std::string to_string(StatMetric m) {
  switch (m) {
    case StatMetric::kNone: return "none";
    case StatMetric::kMmd: return "mmd";
    case StatMetric::kCoral: return "coral";
  }
  return "none";
}

StatMetric parse_stat_metric(const std::string& s) {
  if (s == "mmd") return StatMetric::kMmd;
  if (s == "coral") return StatMetric::kCoral;
  if (s == "none") return StatMetric::kNone;
  throw ArgumentError("unknown statistical metric '" + s + "' (expected mmd, coral or none)");
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

Tensor2 centered(const Tensor2& x) {
  Tensor2 mean = column_sum(x);
  mean *= 1.0 / static_cast<double>(x.rows());
  Tensor2 out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row_span(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= mean[j];
  }
  return out;
}

}  // namespace

double median_bandwidth(const Tensor2& source, const Tensor2& target) {
  std::vector<std::span<const double>> rows;
  for (std::size_t i = 0; i < source.rows(); ++i) rows.push_back(source.row_span(i));
  for (std::size_t i = 0; i < target.rows(); ++i) rows.push_back(target.row_span(i));
  std::vector<double> d;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back(sq_dist(rows[i], rows[j]));
  if (d.empty()) return 1.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return med > 0.0 ? med : 1.0;
}

StatGrad mmd_loss(const Tensor2& source, const Tensor2& target, double bandwidth) {
  if (source.rows() == 0 || target.rows() == 0) throw ArgumentError("mmd_loss: empty side");
  if (source.cols() != target.cols()) throw DimensionError("mmd_loss: feature width mismatch");
  if (!(bandwidth > 0.0)) throw ArgumentError("mmd_loss: bandwidth must be positive");
  const double n = static_cast<double>(source.rows()), m = static_cast<double>(target.rows());
  StatGrad g{0.0, Tensor2(source.rows(), source.cols()), Tensor2(target.rows(), target.cols())};

  // Adds w·k(a,b) to the value and w·∂k/∂a, w·∂k/∂b to the gradients.
  auto accumulate = [&](const Tensor2& A, std::size_t i, Tensor2& dA, const Tensor2& Bm, std::size_t j,
                        Tensor2& dB, double w) {
    auto a = A.row_span(i);
    auto b = Bm.row_span(j);
    const double k = std::exp(-sq_dist(a, b) / bandwidth);
    g.value += w * k;
    const double coef = -2.0 * w * k / bandwidth;
    auto ga = dA.row_span(i);
    auto gb = dB.row_span(j);
    for (std::size_t t = 0; t < a.size(); ++t) {
      const double diff = coef * (a[t] - b[t]);
      ga[t] += diff;
      gb[t] -= diff;
    }
  };
  for (std::size_t i = 0; i < source.rows(); ++i)
    for (std::size_t j = 0; j < source.rows(); ++j) accumulate(source, i, g.d_source, source, j, g.d_source, 1.0 / (n * n));
  for (std::size_t i = 0; i < target.rows(); ++i)
    for (std::size_t j = 0; j < target.rows(); ++j) accumulate(target, i, g.d_target, target, j, g.d_target, 1.0 / (m * m));
  for (std::size_t i = 0; i < source.rows(); ++i)
    for (std::size_t j = 0; j < target.rows(); ++j) accumulate(source, i, g.d_source, target, j, g.d_target, -2.0 / (n * m));

  if (g.value < 0.0) {
    g.value = 0.0;
    g.d_source.fill(0.0);
    g.d_target.fill(0.0);
  }
  return g;
}

StatGrad coral_loss(const Tensor2& source, const Tensor2& target) {
  if (source.rows() < 2 || target.rows() < 2) throw ArgumentError("coral_loss needs at least 2 samples per side");
  if (source.cols() != target.cols()) throw DimensionError("coral_loss: feature width mismatch");
  const double d = static_cast<double>(source.cols());
  const Tensor2 xs = centered(source), xt = centered(target);
  Tensor2 cs = matmul_tn(xs, xs);
  cs *= 1.0 / static_cast<double>(source.rows() - 1);
  Tensor2 ct = matmul_tn(xt, xt);
  ct *= 1.0 / static_cast<double>(target.rows() - 1);
  Tensor2 diff = cs - ct;
  const double norm = 1.0 / (4.0 * d * d);

  StatGrad g;
  g.value = frobenius_sq(diff) * norm;
  // ∂/∂Cs = 2·norm·diff (symmetric); ∂Cs/∂X contributes 2·Xc·(·)/(n−1).
  diff *= 2.0 * norm;
  g.d_source = matmul(xs, diff);
  g.d_source *= 2.0 / static_cast<double>(source.rows() - 1);
  g.d_target = matmul(xt, diff);
  g.d_target *= -2.0 / static_cast<double>(target.rows() - 1);
  return g;
}

StatGrad statistical_loss(const Tensor2& source, const Tensor2& target, StatMetric metric) {
  switch (metric) {
    case StatMetric::kMmd: return mmd_loss(source, target, median_bandwidth(source, target));
    case StatMetric::kCoral: return coral_loss(source, target);
    case StatMetric::kNone: break;
  }
  return {0.0, Tensor2(source.rows(), source.cols()), Tensor2(target.rows(), target.cols())};
}

// ---------------------------------------------------------------------------

namespace {

void split_rows(const Tensor2& all, std::size_t n_source, Tensor2& source, Tensor2& target) {
  source = Tensor2(n_source, all.cols());
  target = Tensor2(all.rows() - n_source, all.cols());
  std::copy_n(all.data().begin(), source.size(), source.data().begin());
  std::copy(all.data().begin() + static_cast<std::ptrdiff_t>(source.size()), all.data().end(),
            target.data().begin());
}

ParamSet backprop(const ModelParams& params, const BatchSnippets& batch, const BatchGrad& g) {
  ParamSet grads = backward(params, batch.encoded, g.d_features, g.d_predictions);
  grads[static_cast<std::size_t>(Block::kClassifierW)] += g.d_classifier_w;
  grads[static_cast<std::size_t>(Block::kClassifierB)] += g.d_classifier_b;
  return grads;
}

}  // namespace

DetachedTerms detach_terms(const BatchSnippets& batch, const LossConfig& config, Rng& pair_rng) {
  DetachedTerms d;
  d.attention = config.enable_attention ? attention_weights(batch) : uniform_attention(batch);
  if (config.enable_cross && batch.r >= 2) {
    d.keys = select_key_snippets(batch);
    d.key_predictions = gather_key_predictions(batch, d.keys);
  }
  if (config.enable_sn_dist) {
    d.pairs = draw_ict_pairs(batch.size(), config.alpha_v, pair_rng);
    d.ict_targets = ict_targets(batch.encoded.predictions, d.pairs);
  }
  if (config.stat_metric == StatMetric::kMmd) {
    Tensor2 src, tgt;
    split_rows(weighted_features(batch, d.attention), batch.num_source(), src, tgt);
    d.bandwidth = median_bandwidth(src, tgt);
  }
  return d;
}

LossReport total_loss(const ModelParams& params, const BatchSnippets& batch,
                      const Prototypes& protos, std::size_t epoch, const LossConfig& config,
                      const DetachedTerms& detached, bool with_component_grads) {
  LossReport report;
  std::array<LossTerm, kNumComponents> terms;
  std::array<bool, kNumComponents> active{};

  terms[kPred] = prediction_loss(batch);
  active[kPred] = true;

  if (config.enable_proto && epoch > config.warmup_epochs && protos.initialized()) {
    terms[kProto] = prototype_alignment_loss(batch, protos);
    active[kProto] = true;
  }
  if (config.enable_cross) {
    terms[kCross] = cross_snippet_loss(batch, detached.keys, detached.key_predictions);
    active[kCross] = true;
  }
  if (config.enable_sn_dist) {
    terms[kSnDist] = snippet_distribution_loss(batch, detached.attention, detached.pairs,
                                               detached.ict_targets, params);
    active[kSnDist] = true;
  }
  if (config.stat_enabled()) {
    Tensor2 src, tgt;
    split_rows(weighted_features(batch, detached.attention), batch.num_source(), src, tgt);
    const StatGrad s = config.stat_metric == StatMetric::kMmd ? mmd_loss(src, tgt, detached.bandwidth)
                                                              : coral_loss(src, tgt);
    LossTerm t{s.value, BatchGrad::zeros(batch)};
    for (std::size_t i = 0; i < batch.num_source(); ++i) t.grad.d_features.set_row(i, s.d_source.row_span(i));
    for (std::size_t k = 0; k < batch.num_target(); ++k) {
      auto row = t.grad.d_features.row_span(batch.num_source() + k);
      auto in = s.d_target.row_span(k);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = in[j] * detached.attention.normalized[k];
    }
    terms[kSnStat] = std::move(t);
    active[kSnStat] = true;
  }

  report.l_pred = terms[kPred].value;
  report.l_proto = active[kProto] ? terms[kProto].value : 0.0;
  report.l_cross = active[kCross] ? terms[kCross].value : 0.0;
  report.l_sn_dist = active[kSnDist] ? terms[kSnDist].value : 0.0;
  report.l_sn_stat = active[kSnStat] ? terms[kSnStat].value : 0.0;
  report.total = report.l_pred + config.lambda_sem * (report.l_proto + report.l_cross + report.l_sn_dist) +
                 config.lambda_stat * report.l_sn_stat;

  BatchGrad total = std::move(terms[kPred].grad);
  if (with_component_grads) report.component_grads[kPred] = backprop(params, batch, total);
  for (std::size_t c = kProto; c < kNumComponents; ++c) {
    if (!active[c]) {
      if (with_component_grads) report.component_grads[c] = zero_grads(params);
      continue;
    }
    const double weight = c == kSnStat ? config.lambda_stat : config.lambda_sem;
    total.add_scaled(terms[c].grad, weight);
    if (with_component_grads) report.component_grads[c] = backprop(params, batch, terms[c].grad);
  }
  report.grads = backprop(params, batch, total);
  return report;
}

}  // namespace ssalign
