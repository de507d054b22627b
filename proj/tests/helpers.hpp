#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "paintlapse/datapipe.hpp"
#include "paintlapse/frame.hpp"
#include "paintlapse/losses.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("paintlapse_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Frame random_frame(int64_t h, int64_t w, uint64_t seed) {
  auto rng = make_rng(seed);
  return Frame(torch::rand({3, h, w}, rng, torch::kFloat32));
}

/// Random frame quantised to multiples of 1/255 so PNG round trips are exact.
inline Frame random_8bit_frame(int64_t h, int64_t w, uint64_t seed) {
  auto rng = make_rng(seed);
  return Frame(torch::randint(0, 256, {3, h, w}, rng, torch::kFloat32) / 255.0f);
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

}  // namespace paintlapse::test

namespace paintlapse {

inline std::ostream& operator<<(std::ostream& os, const MetricsLog::Entry& e) {
  return os << e.step << ' ' << e.name << ' ' << e.value;
}

inline std::ostream& operator<<(std::ostream& os, const IndexSequence& s) {
  os << s.video_id << '[';
  for (size_t i = 0; i < s.indices.size(); ++i) os << (i ? " " : "") << s.indices[i];
  return os << ']';
}

}  // namespace paintlapse
