#include "ssalign/sampler.hpp"

#include <algorithm>
#include <cstdlib>

#include "ssalign/errors.hpp"

namespace ssalign {

namespace {

constexpr int kMaxRejections = 100;

/// Number of starts a left-to-right greedy sweep can place from `sorted`,
/// beginning at index `first`, stopping once `want` are placed.
std::size_t greedy_fit(const std::vector<std::size_t>& sorted, std::size_t first, std::size_t gap,
                       std::size_t want) {
  std::size_t placed = 1;
  std::size_t last = sorted[first];
  for (std::size_t i = first + 1; i < sorted.size() && placed < want; ++i) {
    if (sorted[i] >= last + gap) {
      last = sorted[i];
      ++placed;
    }
  }
  return placed;
}

bool pairwise_ok(const std::vector<std::size_t>& starts, std::size_t gap) {
  for (std::size_t i = 0; i < starts.size(); ++i)
    for (std::size_t j = i + 1; j < starts.size(); ++j) {
      const std::size_t d = starts[i] > starts[j] ? starts[i] - starts[j] : starts[j] - starts[i];
      if (d < gap) return false;
    }
  return true;
}

// Picks starts one at a time, each uniformly among the candidates from which
// the remaining ones can still be placed. Succeeds whenever a valid set exists.
std::vector<std::size_t> constructive_sweep(const std::vector<std::size_t>& sorted, std::size_t r,
                                            std::size_t gap, Rng& rng) {
  std::vector<std::size_t> chosen;
  std::size_t lo = 0;  // first index eligible for the next pick
  for (std::size_t k = 0; k < r; ++k) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = lo; i < sorted.size(); ++i) {
      if (!chosen.empty() && sorted[i] < chosen.back() + gap) continue;
      if (greedy_fit(sorted, i, gap, r - k) >= r - k) eligible.push_back(i);
    }
    if (eligible.empty()) return {};
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    const std::size_t idx = eligible[pick(rng)];
    chosen.push_back(sorted[idx]);
    lo = idx + 1;
  }
  return chosen;
}

}  // namespace

const std::set<std::size_t>& EpochSamplingState::used(const std::string& video_id) const {
  static const std::set<std::size_t> kEmpty;
  auto it = used_.find(video_id);
  return it == used_.end() ? kEmpty : it->second;
}

std::size_t snippet_count(std::size_t n, std::size_t m) {
  if (m == 0) throw ArgumentError("snippet length must be >= 1");
  if (n < m) {
    throw ArgumentError("video of " + std::to_string(n) + " frames is shorter than snippet length " +
                        std::to_string(m));
  }
  return n - m + 1;
}

bool target_sampling_feasible(std::size_t n, std::size_t r, std::size_t m, std::size_t min_gap) {
  if (r == 0 || m == 0 || n < m) return false;
  const std::size_t gap = std::max<std::size_t>(min_gap, 1);
  return (r - 1) * gap <= n - m;
}

std::vector<SnippetRef> sample_target_snippets(const FrameFeatureVideo& video, std::size_t r,
                                               std::size_t m, std::size_t min_gap,
                                               EpochSamplingState& state, Rng& rng) {
  if (r == 0) throw ArgumentError("r must be >= 1");
  const std::size_t n = video.num_frames();
  snippet_count(n, m);
  if (!target_sampling_feasible(n, r, m, min_gap)) {
    throw ConfigError("video '" + video.id + "': cannot place " + std::to_string(r) +
                      " snippets of length " + std::to_string(m) + " with gap " +
                      std::to_string(min_gap) + " in " + std::to_string(n) + " frames");
  }
  const std::size_t gap = std::max<std::size_t>(min_gap, 1);
  const std::size_t max_start = n - m;

  auto unused_starts = [&] {
    const auto& used = state.used(video.id);
    std::vector<std::size_t> c;
    for (std::size_t a = 0; a <= max_start; ++a)
      if (!used.count(a)) c.push_back(a);
    return c;
  };

  std::vector<std::size_t> candidates = unused_starts();
  if (candidates.empty() || greedy_fit(candidates, 0, gap, r) < r) {
    state.clear(video.id);
    candidates = unused_starts();
  }

  std::vector<std::size_t> starts;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  for (int attempt = 0; attempt < kMaxRejections && starts.empty(); ++attempt) {
    std::vector<std::size_t> draw(r);
    for (auto& s : draw) s = candidates[pick(rng)];
    if (pairwise_ok(draw, gap)) starts = std::move(draw);
  }
  if (starts.empty()) starts = constructive_sweep(candidates, r, gap, rng);
  if (starts.empty()) throw ConfigError("video '" + video.id + "': snippet sampling failed");

  std::vector<SnippetRef> out;
  out.reserve(r);
  for (std::size_t a : starts) {
    state.mark(video.id, a);
    out.push_back({video.id, a, m});
  }
  return out;
}

SnippetRef sample_source_snippet(const FrameFeatureVideo& video, std::size_t m, Rng& rng) {
  const std::size_t count = snippet_count(video.num_frames(), m);
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  return {video.id, pick(rng), m};
}

std::vector<SnippetRef> sequential_snippets(const FrameFeatureVideo& video, std::size_t r,
                                            std::size_t m) {
  if (r == 0) throw ArgumentError("r must be >= 1");
  if (r * m > video.num_frames()) {
    throw ConfigError("video '" + video.id + "': " + std::to_string(r) + " sequential snippets of " +
                      std::to_string(m) + " frames exceed " + std::to_string(video.num_frames()));
  }
  std::vector<SnippetRef> out;
  for (std::size_t l = 0; l < r; ++l) out.push_back({video.id, l * m, m});
  return out;
}

void reset_epoch(EpochSamplingState& state) { state.reset(); }

Tensor2 snippet_frames(const FrameFeatureVideo& video, const SnippetRef& ref) {
  if (ref.start + ref.length > video.num_frames()) {
    throw DimensionError("snippet [" + std::to_string(ref.start) + ", +" + std::to_string(ref.length) +
                         ") exceeds video '" + video.id + "'");
  }
  const std::size_t D = video.feature_dim();
  Tensor2 out(ref.length, D);
  std::copy_n(video.frames.data().begin() + static_cast<std::ptrdiff_t>(ref.start * D),
              ref.length * D, out.data().begin());
  return out;
}

}  // namespace ssalign
