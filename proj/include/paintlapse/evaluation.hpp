#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "paintlapse/datapipe.hpp"
#include "paintlapse/frame.hpp"

namespace paintlapse {

/// Mean absolute difference over every frame, channel and pixel.
double video_l1(const PaintingVideo& a, const PaintingVideo& b);

/// Returns sample i of a method; implementations derive their seed from i.
using VideoSampler = std::function<PaintingVideo(int64_t i)>;

/// min over i < k of video_l1(real, sampler(i)).
double best_of_k_l1(const PaintingVideo& real, const VideoSampler& sampler, int64_t k);

/// Binary H x W map of pixels whose change exceeds the threshold in any channel.
struct ChangeShape {
  torch::Tensor mask;  // bool [H, W]
  double threshold = 0.05;

  int64_t height() const { return mask.size(0); }
  int64_t width() const { return mask.size(1); }
  int64_t count() const;
  bool empty() const { return count() == 0; }
};

ChangeShape change_shape(const ChangeMap& delta, double threshold = 0.05);
/// Builds a shape directly from a boolean mask.
ChangeShape change_shape_from_mask(const torch::Tensor& mask, double threshold = 0.05);

/// |a & b| / |a | b|; 1 when both are empty.
double iou(const ChangeShape& a, const ChangeShape& b);

/// Change shapes of consecutive frame pairs.
std::vector<ChangeShape> video_change_shapes(const PaintingVideo& video, double threshold = 0.05);

/// For each change of `real`, the best IOU against any change of `synth`,
/// averaged over the changes of `real`. Both videos need the same length.
double change_iou_score(const PaintingVideo& real, const PaintingVideo& synth,
                        double threshold = 0.05);
double change_iou_score(const std::vector<ChangeShape>& real,
                        const std::vector<ChangeShape>& synth);

/// A synthesis method under evaluation. `sample(x_final, seed)` returns a
/// video that starts with the blank canvas and has at least 41 frames.
struct EvalMethod {
  std::string name;
  std::function<std::vector<Frame>(const Frame& x_final, uint64_t seed)> sample;
  bool deterministic = false;  // one sample stands for all k
};

struct EvalOptions {
  int64_t k = 2000;
  int64_t crops_per_video = 5;
  int64_t crop_size = 50;
  int64_t sequence_length = 40;
  ExtractionConfig extraction;  // sequence_length is overridden
  double change_threshold = 0.05;
  uint64_t seed = 0;
};

struct EvalCell {
  std::string video;
  int64_t crop_top = 0;
  int64_t crop_left = 0;
  std::string method;
  double l1 = 0;
  double iou = 0;
};

struct MethodSummary {
  std::string method;
  double l1_mean = 0, l1_std = 0;
  double iou_mean = 0, iou_std = 0;
  int64_t cells = 0;
};

struct SkippedVideo {
  std::string video;
  std::string reason;
};

struct MetricsReport {
  int64_t k = 0;
  int64_t crops_per_video = 0;
  uint64_t seed = 0;
  std::vector<MethodSummary> rows;
  std::vector<EvalCell> cells;
  std::vector<SkippedVideo> skipped;

  const MethodSummary& row(const std::string& method) const;
  /// Machine-readable: a summary block and one line per cell.
  std::string to_csv() const;
  /// Human-readable table with "mean (std)" cells.
  std::string to_table() const;
};

/// "0.49 (0.13)".
std::string format_mean_std(double mean, double std);

/// Best-of-k L1 and change IOU for every (test video, crop, method). Each test
/// video contributes its single latest sequence of `sequence_length` frames;
/// synthesized frames 1..sequence_length are compared against it. Sample i of
/// a cell uses derive_seed(cell seed, i) for every method, so sample sets are
/// nested in k.
MetricsReport evaluate_methods(const std::vector<PaintingVideo>& test_videos,
                               const std::vector<EvalMethod>& methods, const EvalOptions& options);

}  // namespace paintlapse
