#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "ssalign/dataio.hpp"
#include "ssalign/diff.hpp"
#include "ssalign/tensor.hpp"

namespace ssalign {

struct ModelDims {
  std::size_t snippet_len = 8;   ///< m
  std::size_t feature_dim = 16;  ///< D, per-frame feature width
  std::size_t hidden = 64;       ///< h
  std::size_t embed = 32;        ///< d, snippet feature width
  std::size_t classes = 8;       ///< C

  std::size_t input_dim() const { return snippet_len * feature_dim; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Parameter blocks in declaration (and checkpoint) order.
enum class Block : std::size_t { kEncoderW1, kEncoderB1, kEncoderW2, kEncoderB2, kClassifierW, kClassifierB };
inline constexpr std::size_t kNumBlocks = 6;
std::string_view block_name(std::size_t block);

/// Snippet encoder (two-layer perceptron over the m concatenated frames) and
/// the linear classifier H. One instance serves both domains.
struct ModelParams {
  ModelDims dims;
  ParamSet blocks;

  Tensor2& operator[](Block b) { return blocks[static_cast<std::size_t>(b)]; }
  const Tensor2& operator[](Block b) const { return blocks[static_cast<std::size_t>(b)]; }
};

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);
/// Zero tensors shaped like each block.
ParamSet zero_grads(const ModelParams& params);

/// Encoder activations for a stack of snippets, kept for the backward pass.
struct EncodedBatch {
  Tensor2 input;        ///< B × (m·D), frames concatenated in temporal order
  Tensor2 hidden_pre;   ///< B × h
  Tensor2 features;     ///< B × d
  Tensor2 logits;       ///< B × C
  Tensor2 predictions;  ///< B × C

  std::size_t size() const { return input.rows(); }
};

struct SnippetFeature {
  Tensor2 feature;     ///< 1 × d
  Tensor2 logits;      ///< 1 × C
  Tensor2 prediction;  ///< softmax(logits)
};

/// Flattens each m×D snippet into one input row.
Tensor2 stack_snippets(const ModelParams& params, const std::vector<Tensor2>& snippets);
EncodedBatch encode_batch(const ModelParams& params, Tensor2 inputs);
SnippetFeature encode_snippet(const ModelParams& params, const Tensor2& frames);

/// Classifier logits H(f) for rows of snippet features.
Tensor2 classify(const ModelParams& params, const Tensor2& features);

/// Backpropagates ∂L/∂features and ∂L/∂predictions (both B-row) through the
/// classifier and encoder, returning ∂L/∂θ per block.
ParamSet backward(const ModelParams& params, const EncodedBatch& batch, const Tensor2& d_features,
                  const Tensor2& d_predictions);

/// floor(i·n/m) for i in [0, m).
std::vector<std::size_t> uniform_frame_indices(std::size_t n, std::size_t m);

/// Test-time prediction from one clip of m uniformly spaced frames.
Tensor2 predict_video(const ModelParams& params, const FrameFeatureVideo& video);

/// Fraction of videos whose argmax prediction (lowest index on ties) equals the label.
double top1_accuracy(const ModelParams& params, const DomainDataset& dataset);

// Checkpoint: "FSVM", u32 version, u32 m, D, h, d, C, then every block as
// float32 little-endian in declaration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ssalign
