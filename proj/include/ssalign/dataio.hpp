#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssalign/tensor.hpp"

namespace ssalign {

/// One video: n per-frame feature vectors (n×D) in temporal order plus its class.
struct FrameFeatureVideo {
  std::string id;
  std::size_t label = 0;
  Tensor2 frames;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t feature_dim() const { return frames.cols(); }
};

struct DomainDataset {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<FrameFeatureVideo> videos;

  std::size_t size() const { return videos.size(); }
  std::size_t min_frames() const;
  /// Throws FormatError if a label is out of range, a video has the wrong
  /// feature width, or a feature is non-finite.
  void validate() const;
};

/// Synthetic domain shift applied to target videos: a plane rotation of the
/// first two feature coordinates, a constant offset and additive noise.
struct ShiftSpec {
  double rotation_angle = 0.0;  ///< radians
  double bias_scale = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

struct BenchmarkSpec {
  std::size_t num_classes = 8;
  std::size_t feature_dim = 16;
  std::size_t n_source = 800;
  std::size_t k_shot = 5;
  std::size_t n_test = 400;
  std::size_t frames_per_video = 32;
  ShiftSpec shift;
};

struct SyntheticBenchmark {
  DomainDataset source;
  DomainDataset target_train;
  DomainDataset target_test;
};

// Feature file: "FSVD", u32 version, u32 n, u32 D, u32 label, then n·D float32
// row-major, all little-endian.
inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

void write_video_features(const FrameFeatureVideo& video, const std::filesystem::path& path);
FrameFeatureVideo read_video_features(const std::filesystem::path& path, std::string id);

/// Loads a JSON manifest and every feature file it references (paths are
/// relative to the manifest). Errors name the offending video.
DomainDataset load_manifest(const std::filesystem::path& path);

/// Writes `<dir>/<dataset.name>/<id>.fsvd` for every video and the manifest
/// `<dir>/<dataset.name>.json`. Returns the manifest path.
std::filesystem::path write_dataset(const DomainDataset& dataset, const std::filesystem::path& dir);

/// Class-conditional sinusoidal frame sequences. Source and target share the
/// latent classes; target videos additionally receive `spec.shift`.
/// Feature values are rounded to float32 so that a disk round trip is lossless.
SyntheticBenchmark generate_synthetic_benchmark(const BenchmarkSpec& spec);

}  // namespace ssalign
