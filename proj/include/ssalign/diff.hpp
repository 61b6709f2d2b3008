#pragma once

// Differentiable primitives used by the encoder and every alignment loss.
// Each op returns its forward value; ops with a gradient contract have a
// matching *_backward or return the gradient alongside the value.

#include <cstddef>
#include <functional>
#include <vector>

#include "ssalign/tensor.hpp"

namespace ssalign {

/// Probabilities are clamped to [kProbClamp, 1] before any log.
inline constexpr double kProbClamp = 1e-7;

// ---------------------------------------------------------------------------
// Layers

/// out[i] = x[i]·W + b, x: B×p, W: p×q, b: 1×q.
Tensor2 affine(const Tensor2& x, const Tensor2& w, const Tensor2& b);

struct AffineGrads {
  Tensor2 dx;
  Tensor2 dw;
  Tensor2 db;
};
AffineGrads affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& d_out);

Tensor2 relu(const Tensor2& x);
/// Subgradient at exactly 0 is 0.
Tensor2 relu_backward(const Tensor2& x, const Tensor2& d_out);

/// Row-wise softmax with max subtraction.
Tensor2 softmax(const Tensor2& logits);
/// Maps ∂L/∂probs to ∂L/∂logits given the softmax output `probs`.
Tensor2 softmax_backward(const Tensor2& probs, const Tensor2& d_probs);

// ---------------------------------------------------------------------------
// Scalar losses on single 1×C probability rows

struct ScalarGrad {
  double value = 0.0;
  Tensor2 grad;  ///< gradient wrt the first (non-detached) argument
};

/// −Σ target_c log(clamp(o_c)). Gradient flows to `o` only.
ScalarGrad cross_entropy(const Tensor2& o, const Tensor2& target);
/// Hard-label convenience: target is one-hot at `label`.
ScalarGrad cross_entropy(const Tensor2& o, std::size_t label);

/// Shannon entropy of a probability row (natural log, clamped).
double entropy(std::span<const double> p);

/// KL(p‖q) on clamped and renormalized rows. `p` is treated as a constant;
/// the gradient is wrt `q`.
ScalarGrad kl_divergence(const Tensor2& p, const Tensor2& q);

struct PairGrad {
  double value = 0.0;
  Tensor2 da;
  Tensor2 db;
};

/// √Σ(a−b)². Gradient is the zero vector when a == b.
PairGrad euclidean_distance(const Tensor2& a, const Tensor2& b);

/// λ·a + (1−λ)·b for λ ∈ [0,1].
Tensor2 convex_mix(const Tensor2& a, const Tensor2& b, double lambda);

// ---------------------------------------------------------------------------
// Gradient checking

using ParamSet = std::vector<Tensor2>;

/// A scalar together with its gradient for every parameter block.
struct DualValue {
  double value = 0.0;
  ParamSet grads;
};

struct FlaggedCoordinate {
  std::size_t block = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientCheckReport {
  std::vector<double> max_rel_error;  ///< one entry per parameter block
  std::vector<FlaggedCoordinate> flagged;
  double tolerance = 0.0;

  bool passed() const { return flagged.empty(); }
  double worst() const;
};

/// Relative error used by the checker: |a−n| / max(|a|, |n|, 1e-5).
double gradient_rel_error(double analytic, double numeric);

/// Compares the analytic gradients returned by `loss` at `params` with
/// central differences of step `step`. Throws TrainingError naming the
/// coordinate if a perturbed loss is non-finite.
GradientCheckReport check_gradients(const std::function<DualValue(const ParamSet&)>& loss,
                                    const ParamSet& params, double step, double tolerance);

}  // namespace ssalign
