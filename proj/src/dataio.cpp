#include "ssalign/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

#include "ssalign/errors.hpp"

namespace ssalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'S', 'V', 'D'};

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::size_t DomainDataset::min_frames() const {
  std::size_t n = videos.empty() ? 0 : videos.front().num_frames();
  for (const auto& v : videos) n = std::min(n, v.num_frames());
  return n;
}

void DomainDataset::validate() const {
  for (const auto& v : videos) {
    if (v.label >= num_classes) {
      throw FormatError("video '" + v.id + "': label " + std::to_string(v.label) +
                        " >= num_classes " + std::to_string(num_classes));
    }
    if (v.feature_dim() != feature_dim) {
      throw FormatError("video '" + v.id + "': feature dim " + std::to_string(v.feature_dim()) +
                        " != " + std::to_string(feature_dim));
    }
    if (!v.frames.all_finite()) throw FormatError("video '" + v.id + "': non-finite feature");
  }
}

void write_video_features(const FrameFeatureVideo& video, const fs::path& path) {
  std::vector<unsigned char> buf;
  buf.reserve(kFeatureHeaderBytes + 4 * video.frames.size());
  buf.insert(buf.end(), kMagic.begin(), kMagic.end());
  put_u32(buf, kFeatureFileVersion);
  put_u32(buf, checked_u32(video.num_frames(), "frame count"));
  put_u32(buf, checked_u32(video.feature_dim(), "feature dim"));
  put_u32(buf, checked_u32(video.label, "label"));
  for (double v : video.frames.data()) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

FrameFeatureVideo read_video_features(const fs::path& path, std::string id) {
  const auto bytes = read_all(path);
  if (bytes.size() < kFeatureHeaderBytes || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(path.string() + ": not a feature file (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFeatureFileVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::size_t n = get_u32(bytes.data() + 8);
  const std::size_t d = get_u32(bytes.data() + 12);
  const std::size_t label = get_u32(bytes.data() + 16);
  if (bytes.size() != kFeatureHeaderBytes + 4 * n * d) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " does not match " +
                      std::to_string(n) + "x" + std::to_string(d) + " header");
  }
  std::vector<double> values(n * d);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes.data() + kFeatureHeaderBytes + 4 * i));
  }
  FrameFeatureVideo video;
  video.id = std::move(id);
  video.label = label;
  try {
    video.frames = Tensor2(n, d, std::move(values));
  } catch (const ArgumentError&) {
    throw FormatError(path.string() + ": non-finite feature value");
  }
  return video;
}

DomainDataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }

  DomainDataset ds;
  try {
    ds.name = doc.at("name").get<std::string>();
    ds.num_classes = doc.at("num_classes").get<std::size_t>();
    ds.feature_dim = doc.at("feature_dim").get<std::size_t>();
    const fs::path base = path.parent_path();
    for (const auto& entry : doc.at("videos")) {
      const auto id = entry.at("id").get<std::string>();
      const auto rel = entry.at("path").get<std::string>();
      const auto label = entry.at("label").get<std::size_t>();
      const auto n_frames = entry.at("n_frames").get<std::size_t>();
      const fs::path file = base / rel;
      if (!fs::exists(file)) {
        throw FormatError("video '" + id + "': feature file not found: " + file.string());
      }
      auto video = read_video_features(file, id);
      if (video.num_frames() != n_frames) {
        throw FormatError("video '" + id + "': manifest declares " + std::to_string(n_frames) +
                          " frames, file has " + std::to_string(video.num_frames()));
      }
      if (video.feature_dim() != ds.feature_dim) {
        throw FormatError("video '" + id + "': feature dim " + std::to_string(video.feature_dim()) +
                          " != manifest " + std::to_string(ds.feature_dim));
      }
      if (label >= ds.num_classes) {
        throw FormatError("video '" + id + "': label " + std::to_string(label) +
                          " >= num_classes " + std::to_string(ds.num_classes));
      }
      if (video.label != label) {
        throw FormatError("video '" + id + "': manifest label " + std::to_string(label) +
                          " disagrees with file label " + std::to_string(video.label));
      }
      ds.videos.push_back(std::move(video));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return ds;
}

fs::path write_dataset(const DomainDataset& dataset, const fs::path& dir) {
  json videos = json::array();
  for (const auto& v : dataset.videos) {
    const fs::path rel = fs::path(dataset.name) / (v.id + ".fsvd");
    write_video_features(v, dir / rel);
    videos.push_back({{"id", v.id}, {"path", rel.generic_string()}, {"label", v.label},
                      {"n_frames", v.num_frames()}});
  }
  json doc = {{"name", dataset.name},
              {"num_classes", dataset.num_classes},
              {"feature_dim", dataset.feature_dim},
              {"videos", videos}};
  const fs::path manifest = dir / (dataset.name + ".json");
  fs::create_directories(dir);
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest " + manifest.string());
  out << doc.dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

namespace {

// Latent class geometry. Class means sit on a circle in the rotated coordinate
// pair, so a rotation moves class c towards its neighbour's region; the
// remaining coordinates carry a class mean plus a class-specific temporal
// oscillation that survives the shift.
constexpr double kCircleRadius = 3.0;
constexpr double kOtherMeanStd = 0.15;
constexpr double kOscillationAmp = 1.0;
constexpr double kFrameNoiseStd = 0.6;
constexpr double kVideoOffsetStd = 0.25;

struct LatentClass {
  std::vector<double> mean;
  std::vector<double> direction;
  double cycles = 1.0;  ///< oscillation periods per video
  double phase = 0.0;
};

std::vector<LatentClass> make_classes(std::size_t C, std::size_t D, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LatentClass> classes(C);
  for (std::size_t c = 0; c < C; ++c) {
    auto& k = classes[c];
    k.mean.assign(D, 0.0);
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
    k.mean[0] = kCircleRadius * std::cos(theta);
    if (D > 1) k.mean[1] = kCircleRadius * std::sin(theta);
    for (std::size_t j = 2; j < D; ++j) k.mean[j] = kOtherMeanStd * normal(rng);

    k.direction.assign(D, 0.0);
    double norm = 0.0;
    for (std::size_t j = (D > 2 ? 2 : 0); j < D; ++j) {
      k.direction[j] = normal(rng);
      norm += k.direction[j] * k.direction[j];
    }
    norm = std::sqrt(norm);
    for (double& v : k.direction) v /= norm;
    k.cycles = 0.5 + 1.5 * unit(rng);
    k.phase = 2.0 * std::numbers::pi * unit(rng);
  }
  return classes;
}

Tensor2 draw_frames(const LatentClass& k, std::size_t n, std::size_t D, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double jitter = 2.0 * std::numbers::pi * unit(rng);
  const double amp = kOscillationAmp * (0.75 + 0.5 * unit(rng));
  std::vector<double> offset(D);
  for (double& v : offset) v = kVideoOffsetStd * normal(rng);

  Tensor2 frames(n, D);
  for (std::size_t t = 0; t < n; ++t) {
    const double s = std::sin(2.0 * std::numbers::pi * k.cycles * static_cast<double>(t) /
                                  static_cast<double>(n) +
                              k.phase + jitter);
    for (std::size_t j = 0; j < D; ++j) {
      frames(t, j) = k.mean[j] + offset[j] + amp * s * k.direction[j] + kFrameNoiseStd * normal(rng);
    }
  }
  return frames;
}

struct TargetShift {
  double cos_a = 1.0;
  double sin_a = 0.0;
  std::vector<double> bias;
  double noise_std = 0.0;
};

void apply_shift(Tensor2& frames, const TargetShift& shift, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    if (frames.cols() > 1) {
      const double x = frames(t, 0), y = frames(t, 1);
      frames(t, 0) = shift.cos_a * x - shift.sin_a * y;
      frames(t, 1) = shift.sin_a * x + shift.cos_a * y;
    }
    for (std::size_t j = 0; j < frames.cols(); ++j) {
      frames(t, j) += shift.bias[j];
      if (shift.noise_std > 0.0) frames(t, j) += shift.noise_std * normal(rng);
    }
  }
}

void round_to_f32(Tensor2& t) {
  for (double& v : t.data()) v = to_f32(v);
}

std::string video_id(const std::string& prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  return prefix + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

}  // namespace

SyntheticBenchmark generate_synthetic_benchmark(const BenchmarkSpec& spec) {
  if (spec.num_classes < 1 || spec.feature_dim < 1) throw ArgumentError("classes and dim must be >= 1");
  if (spec.k_shot < 1) throw ArgumentError("k_shot must be >= 1");
  if (spec.n_source < 1 || spec.n_test < 1) throw ArgumentError("source and test counts must be >= 1");
  if (spec.frames_per_video < 1) throw ArgumentError("frames_per_video must be >= 1");
  if (!(spec.shift.noise_std >= 0.0)) throw ArgumentError("noise_std must be >= 0");

  const std::size_t C = spec.num_classes, D = spec.feature_dim, n = spec.frames_per_video;
  std::seed_seq class_seq{spec.shift.seed, std::uint64_t{0}};
  std::mt19937_64 class_rng(class_seq);
  const auto classes = make_classes(C, D, class_rng);

  TargetShift shift;
  shift.cos_a = std::cos(spec.shift.rotation_angle);
  shift.sin_a = std::sin(spec.shift.rotation_angle);
  shift.noise_std = spec.shift.noise_std;
  shift.bias.assign(D, 0.0);
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    for (double& v : shift.bias) {
      v = normal(class_rng);
      norm += v * v;
    }
    for (double& v : shift.bias) v *= spec.shift.bias_scale / std::sqrt(norm);
  }

  auto make_split = [&](const std::string& name, const std::string& prefix, std::size_t count,
                        bool shifted, std::uint64_t stream) {
    std::seed_seq seq{spec.shift.seed, stream};
    std::mt19937_64 rng(seq);
    DomainDataset ds{name, C, D, {}};
    ds.videos.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      FrameFeatureVideo v;
      v.id = video_id(prefix, i);
      v.label = i % C;
      v.frames = draw_frames(classes[v.label], n, D, rng);
      if (shifted) apply_shift(v.frames, shift, rng);
      round_to_f32(v.frames);
      ds.videos.push_back(std::move(v));
    }
    return ds;
  };

  SyntheticBenchmark out;
  out.source = make_split("source", "src_", spec.n_source, false, 1);
  out.target_train = make_split("target_train", "tgt_train_", spec.k_shot * C, true, 2);
  out.target_test = make_split("target_test", "tgt_test_", spec.n_test, true, 3);
  return out;
}

}  // namespace ssalign
