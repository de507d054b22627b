#include "paintlapse/video_io.hpp"

#include <cstdio>
#include <fstream>
#include <regex>
#include <set>

#include <json.hpp>

#include "paintlapse/image_io.hpp"

namespace paintlapse {

namespace fs = std::filesystem;
using nlohmann::json;

std::string frame_file_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05zu.png", index);
  return buf;
}

namespace {

std::set<size_t> frame_indices(const fs::path& dir) {
  static const std::regex pattern(R"(frame_(\d{5,})\.png)");
  std::set<size_t> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.insert(std::stoul(m[1].str()));
  }
  return found;
}

}  // namespace

PaintingVideo ingest_video(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw VideoFormatError("'" + dir.string() + "' is not a directory");
  }
  const auto indices = frame_indices(dir);
  if (indices.empty()) throw VideoFormatError("'" + dir.string() + "' has no frame files", 0);

  std::vector<Frame> frames;
  frames.reserve(indices.size());
  size_t expected = 0;
  for (size_t idx : indices) {
    if (idx != expected) {
      throw VideoFormatError("'" + dir.string() + "': missing frame " + std::to_string(expected),
                             expected);
    }
    try {
      frames.push_back(read_png(dir / frame_file_name(idx)));
    } catch (const std::exception& e) {
      throw VideoFormatError("'" + dir.string() + "': bad frame " + std::to_string(idx) + ": " +
                                 e.what(),
                             idx);
    }
    if (!frames.back().same_shape(frames.front())) {
      throw VideoFormatError("'" + dir.string() + "': frame " + std::to_string(idx) +
                                 " differs in size from frame 0",
                             idx);
    }
    ++expected;
  }

  std::string id = dir.filename().string();
  if (id.empty()) id = dir.parent_path().filename().string();
  Medium medium = Medium::synthetic;
  std::optional<double> period;
  bool blank_start = false;
  const fs::path meta_path = dir / kMetaFileName;
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta;
    try {
      in >> meta;
      if (meta.contains("id")) id = meta.at("id").get<std::string>();
      if (meta.contains("medium")) medium = medium_from_string(meta.at("medium").get<std::string>());
      if (meta.contains("frame_period") && !meta.at("frame_period").is_null()) {
        period = meta.at("frame_period").get<double>();
      }
      if (meta.contains("blank_start")) blank_start = meta.at("blank_start").get<bool>();
    } catch (const std::exception& e) {
      throw VideoFormatError("'" + meta_path.string() + "': " + e.what());
    }
  }
  return PaintingVideo(id, medium, std::move(frames), period, blank_start);
}

void write_video(const fs::path& dir, const PaintingVideo& video) {
  fs::create_directories(dir);
  for (size_t idx : frame_indices(dir)) {
    if (idx >= video.size()) fs::remove(dir / frame_file_name(idx));
  }
  for (size_t i = 0; i < video.size(); ++i) write_png(dir / frame_file_name(i), video.frame(i));

  json meta;
  meta["id"] = video.id();
  meta["medium"] = to_string(video.medium());
  meta["frame_period"] = video.frame_period() ? json(*video.frame_period()) : json(nullptr);
  meta["blank_start"] = video.blank_start();
  std::ofstream out(dir / kMetaFileName);
  out << meta.dump(2) << '\n';
  if (!out) throw VideoFormatError("failed to write '" + (dir / kMetaFileName).string() + "'");
}

}  // namespace paintlapse
