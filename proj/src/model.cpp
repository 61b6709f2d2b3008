#include "ssalign/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "ssalign/errors.hpp"

namespace ssalign {

namespace {

constexpr std::array<std::string_view, kNumBlocks> kBlockNames = {
    "encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2", "classifier.w", "classifier.b"};
constexpr std::array<char, 4> kCheckpointMagic = {'F', 'S', 'V', 'M'};

Tensor2 glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor2 w(fan_in, fan_out);
  for (double& v : w.data()) v = dist(rng);
  return w;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path.string() + ": truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<std::pair<std::size_t, std::size_t>> block_shapes(const ModelDims& d) {
  return {{d.input_dim(), d.hidden}, {1, d.hidden}, {d.hidden, d.embed},
          {1, d.embed},             {d.embed, d.classes}, {1, d.classes}};
}

}  // namespace

std::string_view block_name(std::size_t block) { return kBlockNames.at(block); }

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.snippet_len == 0 || dims.feature_dim == 0 || dims.hidden == 0 || dims.embed == 0 ||
      dims.classes == 0) {
    throw ArgumentError("init_params: all model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams p{dims, {}};
  p.blocks.reserve(kNumBlocks);
  p.blocks.push_back(glorot(dims.input_dim(), dims.hidden, rng));
  p.blocks.emplace_back(1, dims.hidden);
  p.blocks.push_back(glorot(dims.hidden, dims.embed, rng));
  p.blocks.emplace_back(1, dims.embed);
  p.blocks.push_back(glorot(dims.embed, dims.classes, rng));
  p.blocks.emplace_back(1, dims.classes);
  return p;
}

ParamSet zero_grads(const ModelParams& params) {
  ParamSet g;
  g.reserve(params.blocks.size());
  for (const auto& b : params.blocks) g.emplace_back(b.rows(), b.cols());
  return g;
}

Tensor2 stack_snippets(const ModelParams& params, const std::vector<Tensor2>& snippets) {
  const auto& d = params.dims;
  Tensor2 inputs(snippets.size(), d.input_dim());
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    if (snippets[i].rows() != d.snippet_len || snippets[i].cols() != d.feature_dim) {
      throw DimensionError("snippet " + std::to_string(i) + " is " + snippets[i].shape_string() +
                           ", encoder expects " + std::to_string(d.snippet_len) + "x" +
                           std::to_string(d.feature_dim));
    }
    inputs.set_row(i, snippets[i].data());
  }
  return inputs;
}

EncodedBatch encode_batch(const ModelParams& params, Tensor2 inputs) {
  EncodedBatch b;
  b.input = std::move(inputs);
  b.hidden_pre = affine(b.input, params[Block::kEncoderW1], params[Block::kEncoderB1]);
  b.features = affine(relu(b.hidden_pre), params[Block::kEncoderW2], params[Block::kEncoderB2]);
  b.logits = classify(params, b.features);
  b.predictions = softmax(b.logits);
  return b;
}

SnippetFeature encode_snippet(const ModelParams& params, const Tensor2& frames) {
  auto b = encode_batch(params, stack_snippets(params, {frames}));
  return {std::move(b.features), std::move(b.logits), std::move(b.predictions)};
}

Tensor2 classify(const ModelParams& params, const Tensor2& features) {
  return affine(features, params[Block::kClassifierW], params[Block::kClassifierB]);
}

ParamSet backward(const ModelParams& params, const EncodedBatch& batch, const Tensor2& d_features,
                  const Tensor2& d_predictions) {
  require_same_shape(batch.features, d_features, "backward(features)");
  require_same_shape(batch.predictions, d_predictions, "backward(predictions)");
  ParamSet g(kNumBlocks);

  const Tensor2 d_logits = softmax_backward(batch.predictions, d_predictions);
  auto cls = affine_backward(batch.features, params[Block::kClassifierW], d_logits);
  g[static_cast<std::size_t>(Block::kClassifierW)] = std::move(cls.dw);
  g[static_cast<std::size_t>(Block::kClassifierB)] = std::move(cls.db);

  Tensor2 d_feat = d_features;
  d_feat += cls.dx;
  const Tensor2 hidden = relu(batch.hidden_pre);
  auto l2 = affine_backward(hidden, params[Block::kEncoderW2], d_feat);
  g[static_cast<std::size_t>(Block::kEncoderW2)] = std::move(l2.dw);
  g[static_cast<std::size_t>(Block::kEncoderB2)] = std::move(l2.db);

  const Tensor2 d_pre = relu_backward(batch.hidden_pre, l2.dx);
  g[static_cast<std::size_t>(Block::kEncoderW1)] = matmul_tn(batch.input, d_pre);
  g[static_cast<std::size_t>(Block::kEncoderB1)] = column_sum(d_pre);
  return g;
}

std::vector<std::size_t> uniform_frame_indices(std::size_t n, std::size_t m) {
  if (m == 0 || n < m) {
    throw ArgumentError("cannot sample " + std::to_string(m) + " frames from " + std::to_string(n));
  }
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i * n / m;
  return idx;
}

Tensor2 predict_video(const ModelParams& params, const FrameFeatureVideo& video) {
  const std::size_t m = params.dims.snippet_len;
  if (video.num_frames() < m) {
    throw ArgumentError("video '" + video.id + "' has " + std::to_string(video.num_frames()) +
                        " frames, inference needs " + std::to_string(m));
  }
  const auto idx = uniform_frame_indices(video.num_frames(), m);
  Tensor2 clip(m, video.feature_dim());
  for (std::size_t i = 0; i < m; ++i) clip.set_row(i, video.frames.row_span(idx[i]));
  return encode_snippet(params, clip).prediction;
}

double top1_accuracy(const ModelParams& params, const DomainDataset& dataset) {
  if (dataset.videos.empty()) throw ArgumentError("top1_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& v : dataset.videos) {
    const Tensor2 p = predict_video(params, v);
    if (argmax_row(p, 0) == v.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.videos.size());
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), 4);
  put_u32(out, kCheckpointVersion);
  const auto& d = params.dims;
  for (std::size_t v : {d.snippet_len, d.feature_dim, d.hidden, d.embed, d.classes})
    put_u32(out, static_cast<std::uint32_t>(v));
  for (const auto& b : params.blocks)
    for (double v : b.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw FormatError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kCheckpointMagic) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (const auto v = get_u32(in, path); v != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  ModelDims d;
  d.snippet_len = get_u32(in, path);
  d.feature_dim = get_u32(in, path);
  d.hidden = get_u32(in, path);
  d.embed = get_u32(in, path);
  d.classes = get_u32(in, path);
  if (d.snippet_len == 0 || d.feature_dim == 0 || d.hidden == 0 || d.embed == 0 || d.classes == 0) {
    throw FormatError(path.string() + ": zero dimension in checkpoint header");
  }
  ModelParams p{d, {}};
  for (auto [rows, cols] : block_shapes(d)) {
    std::vector<double> values(rows * cols);
    for (double& v : values) v = std::bit_cast<float>(get_u32(in, path));
    try {
      p.blocks.emplace_back(rows, cols, std::move(values));
    } catch (const ArgumentError&) {
      throw FormatError(path.string() + ": non-finite parameter");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return p;
}

}  // namespace ssalign
