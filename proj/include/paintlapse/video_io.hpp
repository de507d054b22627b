#pragma once

#include <filesystem>
#include <string>

#include "paintlapse/frame.hpp"

namespace paintlapse {

/// A frame directory on disk is `frame_00000.png, frame_00001.png, ...` plus
/// `meta.json` holding id, medium, frame_period and blank_start.
inline constexpr const char* kMetaFileName = "meta.json";

std::string frame_file_name(size_t index);

class VideoFormatError : public std::runtime_error {
 public:
  VideoFormatError(const std::string& what, std::optional<size_t> bad_index = std::nullopt)
      : std::runtime_error(what), bad_index_(bad_index) {}
  /// First frame index that was missing or unreadable, when applicable.
  const std::optional<size_t>& bad_index() const { return bad_index_; }

 private:
  std::optional<size_t> bad_index_;
};

/// Loads a frame directory. Without meta.json the directory name becomes the
/// id and the medium defaults to synthetic.
PaintingVideo ingest_video(const std::filesystem::path& dir);

/// Writes frames and metadata into `dir` (created if needed). Existing frame
/// files with higher indices are removed so the directory round-trips.
void write_video(const std::filesystem::path& dir, const PaintingVideo& video);

}  // namespace paintlapse
