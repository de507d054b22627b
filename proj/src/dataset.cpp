#include "paintlapse/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "paintlapse/image_io.hpp"
#include "paintlapse/video_io.hpp"

namespace paintlapse {

namespace fs = std::filesystem;

const PaintingVideo& Dataset::video(const std::string& id) const {
  for (const auto& v : videos) {
    if (v.id() == id) return v;
  }
  throw std::out_of_range("dataset has no video '" + id + "'");
}

std::vector<PaintingVideo> Dataset::subset(const std::string& name) const {
  const std::vector<std::string>* ids = nullptr;
  if (name == "train") ids = &split.train;
  if (name == "val") ids = &split.val;
  if (name == "test") ids = &split.test;
  if (!ids) throw std::invalid_argument("unknown split '" + name + "'");
  std::vector<PaintingVideo> out;
  for (const auto& id : *ids) out.push_back(video(id));
  return out;
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void write_synthetic_dataset(const fs::path& root, const SyntheticSpec& spec, int64_t n_videos,
                             uint64_t split_seed) {
  spec.validate();
  if (n_videos < 1) throw std::invalid_argument("write_synthetic_dataset: n_videos must be >= 1");
  const auto parent = root.has_parent_path() ? root.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const auto staging = parent / (root.filename().string() + ".partial");
  fs::remove_all(staging);
  try {
    fs::create_directories(staging / "videos");
    fs::create_directories(staging / "regions");
    std::vector<std::string> ids;
    nlohmann::json fill = nlohmann::json::object();
    for (int64_t i = 0; i < n_videos; ++i) {
      const auto sv = generate_synthetic_video(spec, i);
      const auto& id = sv.video.id();
      ids.push_back(id);
      write_video(staging / "videos" / id, sv.video);
      write_label_png(staging / "regions" / (id + ".png"), sv.region_map);
      fill[id] = {{"fill_order", sv.fill_order}, {"first_fill_frame", sv.first_fill_frame}};
    }
    write_json(staging / "split.json", split_dataset(ids, split_seed));
    write_json(staging / "dataset.json", {{"generator", "synthetic"},
                                          {"spec", spec},
                                          {"n_videos", n_videos},
                                          {"split_seed", split_seed},
                                          {"videos", fill}});
    fs::remove_all(root);
    fs::rename(staging, root);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
}

Dataset load_dataset(const fs::path& root) {
  const auto dir = root / "videos";
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("dataset '" + root.string() + "' has no videos/ directory");
  }
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) entries.push_back(e.path());
  }
  std::sort(entries.begin(), entries.end());
  Dataset ds;
  for (const auto& p : entries) ds.videos.push_back(ingest_video(p));
  const auto manifest = root / "split.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    ds.split = nlohmann::json::parse(in).get<DatasetSplit>();
  } else {
    for (const auto& v : ds.videos) {
      ds.split.train.push_back(v.id());
      ds.split.val.push_back(v.id());
      ds.split.test.push_back(v.id());
    }
  }
  return ds;
}

LabelImage load_region_map(const fs::path& root, const std::string& id) {
  return read_label_png(root / "regions" / (id + ".png"));
}

}  // namespace paintlapse
