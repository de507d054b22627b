#include "paintlapse/frame.hpp"

#include <sstream>

namespace paintlapse {

std::string shape_string(const torch::Tensor& t) {
  if (!t.defined()) return "[undefined]";
  std::ostringstream os;
  os << '[';
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) os << 'x';
    os << t.size(i);
  }
  os << ']';
  return os.str();
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

namespace {

torch::Tensor validated(const torch::Tensor& chw, double lo, double hi, const char* type) {
  if (!chw.defined() || chw.dim() != 3 || chw.size(0) != Frame::kChannels || chw.size(1) < 1 ||
      chw.size(2) < 1) {
    throw ShapeError(std::string(type) + ": expected [3, H, W] with H, W >= 1, got " +
                     shape_string(chw));
  }
  if (!chw.is_floating_point()) {
    throw std::invalid_argument(std::string(type) + ": expected floating point data");
  }
  auto data = chw.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (!torch::isfinite(data).all().item<bool>()) {
    throw std::invalid_argument(std::string(type) + ": contains NaN or Inf");
  }
  if (data.min().item<float>() < lo || data.max().item<float>() > hi) {
    std::ostringstream os;
    os << type << ": values outside [" << lo << ", " << hi << "]";
    throw std::invalid_argument(os.str());
  }
  // Never alias caller storage.
  if (data.data_ptr() == chw.data_ptr()) data = data.clone();
  return data;
}

}  // namespace

Frame::Frame(const torch::Tensor& chw) : data_(validated(chw, 0.0, 1.0, "Frame")) {}

Frame Frame::blank(int64_t height, int64_t width) { return filled(height, width, 1.0f); }

Frame Frame::filled(int64_t height, int64_t width, float value) {
  return Frame(torch::full({kChannels, height, width}, value, torch::kFloat32));
}

bool Frame::same_shape(const Frame& other) const {
  return data_.sizes() == other.data_.sizes();
}

float Frame::at(int64_t c, int64_t y, int64_t x) const {
  return data_.accessor<float, 3>()[c][y][x];
}

Frame Frame::crop(int64_t top, int64_t left, int64_t h, int64_t w) const {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > height() || left + w > width()) {
    std::ostringstream os;
    os << "Frame::crop: window (" << top << ", " << left << ", " << h << ", " << w
       << ") outside " << shape_string(data_);
    throw ShapeError(os.str());
  }
  return Frame(data_.slice(1, top, top + h).slice(2, left, left + w));
}

bool Frame::operator==(const Frame& other) const {
  return same_shape(other) && torch::equal(data_, other.data_);
}

ChangeMap::ChangeMap(const torch::Tensor& chw) : data_(validated(chw, -1.0, 1.0, "ChangeMap")) {}

ChangeMap ChangeMap::zeros(int64_t height, int64_t width) {
  return ChangeMap(torch::zeros({Frame::kChannels, height, width}, torch::kFloat32));
}

bool ChangeMap::operator==(const ChangeMap& other) const {
  return data_.sizes() == other.data_.sizes() && torch::equal(data_, other.data_);
}

std::string to_string(Medium m) {
  switch (m) {
    case Medium::digital: return "digital";
    case Medium::watercolor: return "watercolor";
    case Medium::synthetic: return "synthetic";
  }
  return "synthetic";
}

Medium medium_from_string(const std::string& s) {
  if (s == "digital") return Medium::digital;
  if (s == "watercolor") return Medium::watercolor;
  if (s == "synthetic") return Medium::synthetic;
  throw std::invalid_argument("unknown medium '" + s + "'");
}

PaintingVideo::PaintingVideo(std::string id, Medium medium, std::vector<Frame> frames,
                             std::optional<double> frame_period, bool blank_start)
    : id_(std::move(id)),
      medium_(medium),
      frame_period_(frame_period),
      blank_start_(blank_start),
      frames_(std::move(frames)) {
  if (frames_.empty()) throw std::invalid_argument("PaintingVideo '" + id_ + "': no frames");
  for (size_t i = 0; i < frames_.size(); ++i) {
    if (frames_[i].empty()) {
      throw std::invalid_argument("PaintingVideo '" + id_ + "': frame " + std::to_string(i) +
                                  " is empty");
    }
    if (!frames_[i].same_shape(frames_.front())) {
      throw ShapeError("PaintingVideo '" + id_ + "': frame " + std::to_string(i) + " has shape " +
                       shape_string(frames_[i].tensor()) + ", expected " +
                       shape_string(frames_.front().tensor()));
    }
  }
  if (frame_period_ && !(*frame_period_ > 0.0 && std::isfinite(*frame_period_))) {
    throw std::invalid_argument("PaintingVideo '" + id_ + "': frame period must be positive");
  }
}

torch::Tensor PaintingVideo::stacked() const {
  std::vector<torch::Tensor> ts;
  ts.reserve(frames_.size());
  for (const auto& f : frames_) ts.push_back(f.tensor());
  return torch::stack(ts);
}

PaintingVideo PaintingVideo::with_frames(std::vector<Frame> frames) const {
  return PaintingVideo(id_, medium_, std::move(frames), frame_period_, blank_start_);
}

torch::Tensor apply_delta(const torch::Tensor& prev, const torch::Tensor& delta) {
  check_same_shape(prev, delta, "apply_delta");
  return torch::clamp(prev + delta, 0.0, 1.0);
}

Frame apply_delta(const Frame& prev, const ChangeMap& delta) {
  return Frame(apply_delta(prev.tensor(), delta.tensor()));
}

ChangeMap frame_delta(const Frame& curr, const Frame& prev) {
  check_same_shape(curr.tensor(), prev.tensor(), "frame_delta");
  return ChangeMap(curr.tensor() - prev.tensor());
}

}  // namespace paintlapse
