#include "ssalign/diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ssalign/errors.hpp"

namespace ssalign {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0); }

void require_row(const Tensor2& t, const char* what) {
  if (t.rows() != 1) throw DimensionError(std::string(what) + ": expected a single row, got " +
                                          t.shape_string());
}

}  // namespace

Tensor2 affine(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: x " + x.shape_string() + ", W " + w.shape_string() + ", b " +
                         b.shape_string());
  }
  Tensor2 out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row_span(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  return out;
}

AffineGrads affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& d_out) {
  if (x.cols() != w.rows() || d_out.rows() != x.rows() || d_out.cols() != w.cols()) {
    throw DimensionError("affine_backward: x " + x.shape_string() + ", W " + w.shape_string() +
                         ", dout " + d_out.shape_string());
  }
  return {matmul_nt(d_out, w), matmul_tn(x, d_out), column_sum(d_out)};
}

Tensor2 relu(const Tensor2& x) {
  Tensor2 out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor2 relu_backward(const Tensor2& x, const Tensor2& d_out) {
  require_same_shape(x, d_out, "relu_backward");
  Tensor2 dx = d_out;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

Tensor2 softmax(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row_span(i);
    auto o = out.row_span(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

Tensor2 softmax_backward(const Tensor2& probs, const Tensor2& d_probs) {
  require_same_shape(probs, d_probs, "softmax_backward");
  Tensor2 dz(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row_span(i);
    auto g = d_probs.row_span(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) dot += g[j] * p[j];
    auto out = dz.row_span(i);
    for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (g[j] - dot);
  }
  return dz;
}

ScalarGrad cross_entropy(const Tensor2& o, const Tensor2& target) {
  require_row(o, "cross_entropy");
  require_same_shape(o, target, "cross_entropy");
  ScalarGrad r{0.0, Tensor2(1, o.cols())};
  for (std::size_t c = 0; c < o.cols(); ++c) {
    const double t = target[c];
    if (t == 0.0) continue;
    r.value -= t * std::log(clamp_prob(o[c]));
    if (o[c] >= kProbClamp && o[c] <= 1.0) r.grad[c] = -t / o[c];
  }
  return r;
}

ScalarGrad cross_entropy(const Tensor2& o, std::size_t label) {
  if (label >= o.cols()) throw ArgumentError("cross_entropy: label out of range");
  Tensor2 target(1, o.cols());
  target[label] = 1.0;
  return cross_entropy(o, target);
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(clamp_prob(v));
  return h;
}

ScalarGrad kl_divergence(const Tensor2& p, const Tensor2& q) {
  require_row(p, "kl_divergence");
  require_same_shape(p, q, "kl_divergence");
  const std::size_t n = p.cols();
  double sp = 0.0, sq = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    sp += clamp_prob(p[c]);
    sq += clamp_prob(q[c]);
  }
  ScalarGrad r{0.0, Tensor2(1, n)};
  for (std::size_t c = 0; c < n; ++c) {
    const double pc = clamp_prob(p[c]) / sp;
    const double qhat = clamp_prob(q[c]);
    r.value += pc * (std::log(pc) - std::log(qhat / sq));
    // d/dq of −p̃ log q̂ + log Σq̂, zero where the clamp is active.
    if (q[c] >= kProbClamp && q[c] <= 1.0) r.grad[c] = -pc / qhat + 1.0 / sq;
  }
  return r;
}

PairGrad euclidean_distance(const Tensor2& a, const Tensor2& b) {
  require_row(a, "euclidean_distance");
  require_same_shape(a, b, "euclidean_distance");
  PairGrad r{0.0, Tensor2(1, a.cols()), Tensor2(1, a.cols())};
  double s = 0.0;
  for (std::size_t i = 0; i < a.cols(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  r.value = std::sqrt(s);
  if (r.value > 0.0) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      r.da[i] = (a[i] - b[i]) / r.value;
      r.db[i] = -r.da[i];
    }
  }
  return r;
}

Tensor2 convex_mix(const Tensor2& a, const Tensor2& b, double lambda) {
  require_same_shape(a, b, "convex_mix");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ArgumentError("convex_mix: lambda " + std::to_string(lambda) + " outside [0,1]");
  }
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;
  Tensor2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return out;
}

double GradientCheckReport::worst() const {
  double w = 0.0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

double gradient_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom;
}

GradientCheckReport check_gradients(const std::function<DualValue(const ParamSet&)>& loss,
                                    const ParamSet& params, double step, double tolerance) {
  const DualValue base = loss(params);
  if (base.grads.size() != params.size()) {
    throw DimensionError("check_gradients: loss returned " + std::to_string(base.grads.size()) +
                         " gradient blocks for " + std::to_string(params.size()) + " parameters");
  }
  GradientCheckReport report;
  report.tolerance = tolerance;
  report.max_rel_error.assign(params.size(), 0.0);

  ParamSet probe = params;
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_same_shape(params[b], base.grads[b], "check_gradients");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double orig = params[b][i];
      probe[b][i] = orig + step;
      const double up = loss(probe).value;
      probe[b][i] = orig - step;
      const double down = loss(probe).value;
      probe[b][i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        std::ostringstream os;
        os << "check_gradients: non-finite loss when perturbing block " << b << " coordinate " << i;
        throw TrainingError(os.str());
      }
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = base.grads[b][i];
      const double err = gradient_rel_error(analytic, numeric);
      report.max_rel_error[b] = std::max(report.max_rel_error[b], err);
      if (err > tolerance) report.flagged.push_back({b, i, analytic, numeric, err});
    }
  }
  return report;
}

}  // namespace ssalign
