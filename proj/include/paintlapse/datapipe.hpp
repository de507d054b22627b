#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "paintlapse/frame.hpp"

namespace paintlapse {

/// Controls how index sequences are sampled from a raw video.
struct ExtractionConfig {
  int64_t gamma = 5;                    // nominal gap between sampled frames
  int64_t epsilon = 2;                  // allowed deviation from gamma
  double min_change_fraction = 0.01;    // fraction of pixels that must change
  double pixel_change_threshold = 0.05; // per-channel intensity difference
  int64_t sequence_length = 3;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExtractionConfig& c);
void from_json(const nlohmann::json& j, ExtractionConfig& c);

struct IndexSequence {
  std::string video_id;
  std::vector<int64_t> indices;

  bool operator==(const IndexSequence&) const = default;
  auto operator<=>(const IndexSequence&) const = default;
};

/// Fraction of pixels where any channel differs by more than `threshold`.
double changed_fraction(const Frame& a, const Frame& b, double threshold);

/// Precomputed pairwise change test for one video. `passes(i, j)` is true
/// when frames i and j satisfy the minimum-change criterion.
class ChangeOracle {
 public:
  ChangeOracle(const PaintingVideo& video, const ExtractionConfig& cfg);
  bool passes(int64_t i, int64_t j) const;
  int64_t size() const { return size_; }

 private:
  int64_t size_;
  int64_t max_gap_;
  std::vector<char> table_;  // [i][gap - min_gap]
  int64_t min_gap_;
};

/// All index sequences of `cfg.sequence_length` frames whose gaps lie in
/// [gamma - epsilon, gamma + epsilon] and whose adjacent frames pass the
/// change test, in lexicographic order. When more than `count_limit` exist, a
/// uniform random subset of that size (drawn with `seed`) is returned instead,
/// still sorted.
std::vector<IndexSequence> extract_sequences(const PaintingVideo& video,
                                             const ExtractionConfig& cfg,
                                             std::optional<size_t> count_limit = std::nullopt,
                                             uint64_t seed = 0);

/// Number of valid sequences, saturating at UINT64_MAX.
uint64_t count_sequences(const PaintingVideo& video, const ExtractionConfig& cfg);

/// The single evaluation sequence for a test video: the valid sequence that
/// ends latest, and among those starts earliest (then lexicographically first).
std::optional<IndexSequence> select_test_sequence(const PaintingVideo& video,
                                                  const ExtractionConfig& cfg);

/// Re-checks every IndexSequence invariant directly against the video.
bool sequence_is_valid(const PaintingVideo& video, const ExtractionConfig& cfg,
                       const IndexSequence& seq);

/// Offsets of an evenly spread grid of `crop`-sized windows along one axis:
/// n = ceil(extent / crop), offset_i = round(i (extent - crop) / (n - 1)).
std::vector<int64_t> crop_offsets(int64_t extent, int64_t crop);

struct Crop {
  int64_t top = 0;
  int64_t left = 0;
  Frame frame;
};

std::vector<Crop> extract_crops(const Frame& frame, int64_t crop = 50);

/// The same window of every frame. The id gets an "@<top>_<left>" suffix.
PaintingVideo crop_video(const PaintingVideo& video, int64_t top, int64_t left, int64_t height,
                         int64_t width);
/// One cropped video per grid window of extract_crops.
std::vector<PaintingVideo> video_crops(const PaintingVideo& video, int64_t crop = 50);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

/// 70:15:15 by video count after a seeded shuffle. Validation and test sizes
/// are rounded to nearest; train takes the remainder.
DatasetSplit split_dataset(const std::vector<std::string>& ids, uint64_t seed);

/// Decides whether frame `index` of `video` is kept.
using FrameFilter = std::function<bool(const PaintingVideo& video, size_t index)>;

FrameFilter keep_all_frames();

struct OccluderHeuristic {
  double pixel_threshold = 0.25;  // per-channel change counted as occluded
  double area_fraction = 0.20;    // fraction of pixels that must change
  int64_t max_duration = 2;       // occluder must disappear within this many frames
};

/// Drops transient occluders: a run of at most `max_duration` frames that
/// each differ strongly from the frames on both sides of the run, where those
/// two bracketing frames agree with each other.
FrameFilter occluder_filter(const OccluderHeuristic& h = {});

PaintingVideo filter_artifact_frames(const PaintingVideo& video, const FrameFilter& keep);

/// Index file: one sequence per line, "<video_id> <i0>,<i1>,...".
void write_index_file(const std::string& path, const std::vector<IndexSequence>& seqs);
std::vector<IndexSequence> read_index_file(const std::string& path);

}  // namespace paintlapse
