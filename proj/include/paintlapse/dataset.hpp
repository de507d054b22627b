#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "paintlapse/datapipe.hpp"
#include "paintlapse/frame.hpp"
#include "paintlapse/synthetic.hpp"

namespace paintlapse {

/// Dataset directory layout:
///   videos/<id>/       frame directory (see video_io.hpp)
///   regions/<id>.png   ground-truth region map (synthetic data only)
///   split.json         {"train": [...], "val": [...], "test": [...]}
///   dataset.json       generator spec, seed and per-video fill orders
struct Dataset {
  std::vector<PaintingVideo> videos;
  DatasetSplit split;

  const PaintingVideo& video(const std::string& id) const;
  /// Videos of one split ("train", "val" or "test") in manifest order.
  std::vector<PaintingVideo> subset(const std::string& name) const;
};

/// Generates `n_videos` synthetic videos into `root`. The tree is first
/// written next to `root` and then renamed into place, replacing any previous
/// content, so a failure leaves no partial dataset behind.
void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec,
                             int64_t n_videos, uint64_t split_seed);

/// Reads every video under root/videos and the split manifest. Without a
/// manifest every video is placed in all three splits.
Dataset load_dataset(const std::filesystem::path& root);

/// Region map of a synthetic video, from root/regions/<id>.png.
LabelImage load_region_map(const std::filesystem::path& root, const std::string& id);

}  // namespace paintlapse
