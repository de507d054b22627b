#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace paintlapse {

/// Raised when two images or videos that must agree in shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const torch::Tensor& t);

/// A canvas image. Stored as a float32 tensor of shape [C, H, W] (channel
/// first) with every element finite and within [0, 1]. C is always 3.
///
/// Frames are values: the underlying storage is never modified after
/// construction, so copies may share it freely across threads.
class Frame {
 public:
  static constexpr int64_t kChannels = 3;

  Frame() = default;
  /// Validates and takes a [3, H, W] tensor of any floating dtype.
  explicit Frame(const torch::Tensor& chw);

  static Frame blank(int64_t height, int64_t width);
  static Frame filled(int64_t height, int64_t width, float value);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  int64_t channels() const { return data_.size(0); }
  bool empty() const { return !data_.defined(); }
  bool same_shape(const Frame& other) const;

  const torch::Tensor& tensor() const { return data_; }
  float at(int64_t c, int64_t y, int64_t x) const;

  /// Rectangular sub-image starting at (top, left).
  Frame crop(int64_t top, int64_t left, int64_t height, int64_t width) const;

  bool operator==(const Frame& other) const;

 private:
  torch::Tensor data_;
};

/// Signed per-pixel change between consecutive frames, values in [-1, 1].
class ChangeMap {
 public:
  ChangeMap() = default;
  explicit ChangeMap(const torch::Tensor& chw);

  static ChangeMap zeros(int64_t height, int64_t width);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  int64_t channels() const { return data_.size(0); }
  const torch::Tensor& tensor() const { return data_; }

  bool operator==(const ChangeMap& other) const;

 private:
  torch::Tensor data_;
};

enum class Medium { digital, watercolor, synthetic };

std::string to_string(Medium m);
Medium medium_from_string(const std::string& s);

/// An ordered recording of a painting being made. The final frame is the
/// completed painting.
class PaintingVideo {
 public:
  PaintingVideo() = default;
  PaintingVideo(std::string id, Medium medium, std::vector<Frame> frames,
                std::optional<double> frame_period = std::nullopt,
                bool blank_start = false);

  const std::string& id() const { return id_; }
  Medium medium() const { return medium_; }
  const std::optional<double>& frame_period() const { return frame_period_; }
  /// True when the recording begins from an empty (white) canvas.
  bool blank_start() const { return blank_start_; }

  const std::vector<Frame>& frames() const { return frames_; }
  const Frame& frame(size_t i) const { return frames_.at(i); }
  const Frame& final_frame() const { return frames_.back(); }
  size_t size() const { return frames_.size(); }
  int64_t height() const { return frames_.front().height(); }
  int64_t width() const { return frames_.front().width(); }

  /// Frames stacked into a [T, 3, H, W] tensor.
  torch::Tensor stacked() const;

  /// Same metadata, different frames.
  PaintingVideo with_frames(std::vector<Frame> frames) const;

 private:
  std::string id_;
  Medium medium_ = Medium::synthetic;
  std::optional<double> frame_period_;
  bool blank_start_ = false;
  std::vector<Frame> frames_;
};

/// clamp(prev + delta, 0, 1).
Frame apply_delta(const Frame& prev, const ChangeMap& delta);
/// curr - prev.
ChangeMap frame_delta(const Frame& curr, const Frame& prev);

/// Tensor forms used inside batched training code; any leading batch
/// dimensions are allowed and autograd flows through them.
torch::Tensor apply_delta(const torch::Tensor& prev, const torch::Tensor& delta);
void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

}  // namespace paintlapse
