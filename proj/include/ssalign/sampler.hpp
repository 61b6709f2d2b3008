#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ssalign/dataio.hpp"

namespace ssalign {

using Rng = std::mt19937_64;

/// A window of `length` adjacent frames of one video starting at `start` (0-based).
struct SnippetRef {
  std::string video_id;
  std::size_t start = 0;
  std::size_t length = 0;

  friend bool operator==(const SnippetRef&, const SnippetRef&) = default;
};

/// Start indices already handed out per target video during the current epoch.
class EpochSamplingState {
 public:
  const std::set<std::size_t>& used(const std::string& video_id) const;
  void mark(const std::string& video_id, std::size_t start) { used_[video_id].insert(start); }
  void clear(const std::string& video_id) { used_.erase(video_id); }
  void reset() { used_.clear(); }
  bool empty() const { return used_.empty(); }

 private:
  std::map<std::string, std::set<std::size_t>> used_;
};

/// n − m + 1. Throws ArgumentError when n < m.
std::size_t snippet_count(std::size_t n, std::size_t m);

/// True when `r` starts with pairwise gap ≥ `min_gap` fit in a video of `n` frames.
bool target_sampling_feasible(std::size_t n, std::size_t r, std::size_t m, std::size_t min_gap);

/// Stochastic sampling of `r` snippets from one target video: starts are
/// pairwise at least `min_gap` apart and avoid starts already used for this
/// video in the current epoch. If the unused starts cannot host `r` snippets
/// the video's used set is cleared first. Returned refs are in draw order.
std::vector<SnippetRef> sample_target_snippets(const FrameFeatureVideo& video, std::size_t r,
                                               std::size_t m, std::size_t min_gap,
                                               EpochSamplingState& state, Rng& rng);

/// One uniformly random snippet of a source video.
SnippetRef sample_source_snippet(const FrameFeatureVideo& video, std::size_t m, Rng& rng);

/// Fixed snippets at starts 0, m, 2m, … (used when stochastic sampling is disabled).
std::vector<SnippetRef> sequential_snippets(const FrameFeatureVideo& video, std::size_t r,
                                            std::size_t m);

void reset_epoch(EpochSamplingState& state);

/// Copies the m×D frame window a snippet refers to.
Tensor2 snippet_frames(const FrameFeatureVideo& video, const SnippetRef& ref);

}  // namespace ssalign
