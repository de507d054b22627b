#pragma once

#include <vector>

#include <json.hpp>

#include "paintlapse/frame.hpp"
#include "paintlapse/image_io.hpp"

namespace paintlapse {

/// Parameters of the procedural painting generator. Each video starts from a
/// white canvas; the canvas is partitioned into regions, and regions are
/// painted one after another in random order, first with a flat base colour
/// and then with textured detail. Each pass sweeps a ragged front across the
/// region along a random direction.
struct SyntheticSpec {
  int64_t height = 50;
  int64_t width = 50;
  int64_t min_regions = 4;
  int64_t max_regions = 6;
  int64_t min_fill_steps = 30;     // frames spent on one region
  int64_t max_fill_steps = 45;
  double coarse_fraction = 0.5;    // share of a region's frames for the base pass
  double edge_jitter = 2.0;        // raggedness of the painted front, in pixels
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct SyntheticVideo {
  PaintingVideo video;
  LabelImage region_map;                  // region label per pixel
  std::vector<int64_t> fill_order;        // region labels in painting order
  std::vector<int64_t> first_fill_frame;  // per region: first frame that touches it
};

/// Video `index` of a dataset; depends only on (spec, index).
SyntheticVideo generate_synthetic_video(const SyntheticSpec& spec, int64_t index);

std::vector<SyntheticVideo> generate_synthetic_dataset(const SyntheticSpec& spec, int64_t n_videos);

/// Order in which regions first become painted in `video`: a region counts as
/// painted at the first frame where at least `coverage` of its pixels differ
/// from white by more than `threshold` in some channel. Regions never painted
/// go last. Ties break by region label.
std::vector<int64_t> region_fill_order(const std::vector<Frame>& frames, const LabelImage& regions,
                                       double coverage = 0.5, double threshold = 0.05);

}  // namespace paintlapse
