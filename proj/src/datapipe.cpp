#include "paintlapse/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "paintlapse/json_keys.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse {

using nlohmann::json;

void ExtractionConfig::validate() const {
  if (gamma <= 0) throw std::invalid_argument("ExtractionConfig: gamma must be > 0");
  if (epsilon < 0 || epsilon >= gamma) {
    throw std::invalid_argument("ExtractionConfig: need gamma > epsilon >= 0");
  }
  if (!(min_change_fraction > 0.0 && min_change_fraction <= 1.0)) {
    throw std::invalid_argument("ExtractionConfig: min_change_fraction must be in (0, 1]");
  }
  if (!(pixel_change_threshold > 0.0 && pixel_change_threshold < 1.0)) {
    throw std::invalid_argument("ExtractionConfig: pixel_change_threshold must be in (0, 1)");
  }
  if (sequence_length < 2) throw std::invalid_argument("ExtractionConfig: sequence_length < 2");
}

void to_json(json& j, const ExtractionConfig& c) {
  j = json{{"gamma", c.gamma},
           {"epsilon", c.epsilon},
           {"min_change_fraction", c.min_change_fraction},
           {"pixel_change_threshold", c.pixel_change_threshold},
           {"sequence_length", c.sequence_length}};
}

void from_json(const json& j, ExtractionConfig& c) {
  check_keys(j, {"gamma", "epsilon", "min_change_fraction", "pixel_change_threshold",
                 "sequence_length"},
             "extraction");
  read_key(j, "gamma", c.gamma);
  read_key(j, "epsilon", c.epsilon);
  read_key(j, "min_change_fraction", c.min_change_fraction);
  read_key(j, "pixel_change_threshold", c.pixel_change_threshold);
  read_key(j, "sequence_length", c.sequence_length);
}

double changed_fraction(const Frame& a, const Frame& b, double threshold) {
  check_same_shape(a.tensor(), b.tensor(), "changed_fraction");
  auto changed = (a.tensor() - b.tensor()).abs().gt(threshold).any(0);
  return changed.to(torch::kFloat64).mean().item<double>();
}

ChangeOracle::ChangeOracle(const PaintingVideo& video, const ExtractionConfig& cfg)
    : size_(static_cast<int64_t>(video.size())),
      max_gap_(cfg.gamma + cfg.epsilon),
      min_gap_(std::max<int64_t>(1, cfg.gamma - cfg.epsilon)) {
  const int64_t width = max_gap_ - min_gap_ + 1;
  table_.assign(static_cast<size_t>(size_ * width), 0);
  if (size_ < 2) return;
  const auto frames = video.stacked();
  const int64_t pixels = video.height() * video.width();
  for (int64_t gap = min_gap_; gap <= max_gap_ && gap < size_; ++gap) {
    auto a = frames.slice(0, 0, size_ - gap);
    auto b = frames.slice(0, gap, size_);
    auto counts = (b - a).abs().gt(cfg.pixel_change_threshold).any(1).sum({1, 2});
    auto acc = counts.accessor<int64_t, 1>();
    for (int64_t i = 0; i < size_ - gap; ++i) {
      const double frac = static_cast<double>(acc[i]) / static_cast<double>(pixels);
      table_[static_cast<size_t>(i * width + (gap - min_gap_))] =
          frac >= cfg.min_change_fraction ? 1 : 0;
    }
  }
}

bool ChangeOracle::passes(int64_t i, int64_t j) const {
  const int64_t gap = j - i;
  if (i < 0 || j >= size_ || gap < min_gap_ || gap > max_gap_) return false;
  return table_[static_cast<size_t>(i * (max_gap_ - min_gap_ + 1) + (gap - min_gap_))] != 0;
}

namespace {

constexpr uint64_t kSaturated = std::numeric_limits<uint64_t>::max();

uint64_t sat_add(uint64_t a, uint64_t b) { return a > kSaturated - b ? kSaturated : a + b; }

/// counts[k][i]: number of valid sequences of k+1 frames starting at i.
/// weights mirror counts in floating point for sampling once counts saturate.
struct SuffixCounts {
  std::vector<std::vector<uint64_t>> counts;
  std::vector<std::vector<double>> weights;
};

SuffixCounts count_suffixes(const ChangeOracle& oracle, const ExtractionConfig& cfg) {
  const int64_t n = oracle.size();
  const int64_t len = cfg.sequence_length;
  SuffixCounts s;
  s.counts.assign(len, std::vector<uint64_t>(n, 0));
  s.weights.assign(len, std::vector<double>(n, 0.0));
  for (int64_t i = 0; i < n; ++i) {
    s.counts[0][i] = 1;
    s.weights[0][i] = 1.0;
  }
  const int64_t lo = std::max<int64_t>(1, cfg.gamma - cfg.epsilon);
  const int64_t hi = cfg.gamma + cfg.epsilon;
  for (int64_t k = 1; k < len; ++k) {
    for (int64_t i = n - 1; i >= 0; --i) {
      for (int64_t j = i + lo; j <= i + hi && j < n; ++j) {
        if (s.counts[k - 1][j] == 0 || !oracle.passes(i, j)) continue;
        s.counts[k][i] = sat_add(s.counts[k][i], s.counts[k - 1][j]);
        s.weights[k][i] += s.weights[k - 1][j];
      }
    }
  }
  return s;
}

void enumerate_from(const ChangeOracle& oracle, const ExtractionConfig& cfg,
                    const SuffixCounts& s, std::vector<int64_t>& prefix,
                    std::vector<std::vector<int64_t>>& out) {
  const int64_t remaining = cfg.sequence_length - static_cast<int64_t>(prefix.size());
  if (remaining == 0) {
    out.push_back(prefix);
    return;
  }
  const int64_t i = prefix.back();
  const int64_t lo = std::max<int64_t>(1, cfg.gamma - cfg.epsilon);
  for (int64_t j = i + lo; j <= i + cfg.gamma + cfg.epsilon && j < oracle.size(); ++j) {
    if (s.counts[remaining - 1][j] == 0 || !oracle.passes(i, j)) continue;
    prefix.push_back(j);
    enumerate_from(oracle, cfg, s, prefix, out);
    prefix.pop_back();
  }
}

int64_t pick_weighted(const std::vector<std::pair<int64_t, double>>& options,
                      torch::Generator& rng) {
  double total = 0.0;
  for (const auto& [idx, w] : options) total += w;
  double r = uniform_real(rng) * total;
  for (const auto& [idx, w] : options) {
    if (r < w) return idx;
    r -= w;
  }
  return options.back().first;
}

std::vector<int64_t> sample_one(const ChangeOracle& oracle, const ExtractionConfig& cfg,
                                const SuffixCounts& s, torch::Generator& rng) {
  const int64_t len = cfg.sequence_length;
  std::vector<std::pair<int64_t, double>> options;
  for (int64_t i = 0; i < oracle.size(); ++i) {
    if (s.counts[len - 1][i] > 0) options.emplace_back(i, s.weights[len - 1][i]);
  }
  std::vector<int64_t> seq{pick_weighted(options, rng)};
  const int64_t lo = std::max<int64_t>(1, cfg.gamma - cfg.epsilon);
  for (int64_t k = len - 2; k >= 0; --k) {
    const int64_t i = seq.back();
    options.clear();
    for (int64_t j = i + lo; j <= i + cfg.gamma + cfg.epsilon && j < oracle.size(); ++j) {
      if (s.counts[k][j] > 0 && oracle.passes(i, j)) options.emplace_back(j, s.weights[k][j]);
    }
    seq.push_back(pick_weighted(options, rng));
  }
  return seq;
}

}  // namespace

std::vector<IndexSequence> extract_sequences(const PaintingVideo& video,
                                             const ExtractionConfig& cfg,
                                             std::optional<size_t> count_limit, uint64_t seed) {
  cfg.validate();
  std::vector<IndexSequence> result;
  if (static_cast<int64_t>(video.size()) < cfg.sequence_length) return result;

  const ChangeOracle oracle(video, cfg);
  const auto s = count_suffixes(oracle, cfg);
  uint64_t total = 0;
  for (auto c : s.counts[cfg.sequence_length - 1]) total = sat_add(total, c);
  if (total == 0 || (count_limit && *count_limit == 0)) return result;

  std::vector<std::vector<int64_t>> raw;
  const bool enumerate_all = !count_limit || total <= 2 * static_cast<uint64_t>(*count_limit);
  if (enumerate_all) {
    std::vector<int64_t> prefix;
    for (int64_t i = 0; i < oracle.size(); ++i) {
      if (s.counts[cfg.sequence_length - 1][i] == 0) continue;
      prefix.assign(1, i);
      enumerate_from(oracle, cfg, s, prefix, raw);
    }
    if (count_limit && raw.size() > *count_limit) {
      auto rng = make_rng(seed);
      auto perm = torch::randperm(static_cast<int64_t>(raw.size()), rng, torch::kLong);
      std::vector<std::vector<int64_t>> picked;
      for (size_t k = 0; k < *count_limit; ++k) picked.push_back(raw[perm[k].item<int64_t>()]);
      raw = std::move(picked);
    }
  } else {
    // More than twice the limit: rejection sampling of distinct sequences.
    auto rng = make_rng(seed);
    std::set<std::vector<int64_t>> picked;
    while (picked.size() < *count_limit) picked.insert(sample_one(oracle, cfg, s, rng));
    raw.assign(picked.begin(), picked.end());
  }
  std::sort(raw.begin(), raw.end());
  result.reserve(raw.size());
  for (auto& r : raw) result.push_back({video.id(), std::move(r)});
  return result;
}

uint64_t count_sequences(const PaintingVideo& video, const ExtractionConfig& cfg) {
  cfg.validate();
  if (static_cast<int64_t>(video.size()) < cfg.sequence_length) return 0;
  const ChangeOracle oracle(video, cfg);
  const auto s = count_suffixes(oracle, cfg);
  uint64_t total = 0;
  for (auto c : s.counts[cfg.sequence_length - 1]) total = sat_add(total, c);
  return total;
}

std::optional<IndexSequence> select_test_sequence(const PaintingVideo& video,
                                                  const ExtractionConfig& cfg) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(video.size());
  const int64_t len = cfg.sequence_length;
  if (n < len) return std::nullopt;
  const ChangeOracle oracle(video, cfg);
  const int64_t lo = std::max<int64_t>(1, cfg.gamma - cfg.epsilon);
  const int64_t hi = cfg.gamma + cfg.epsilon;

  // start[k][j]: earliest start of a valid (k+1)-frame sequence ending at j.
  std::vector<std::vector<int64_t>> start(len, std::vector<int64_t>(n, -1));
  std::vector<std::vector<int64_t>> pred(len, std::vector<int64_t>(n, -1));
  for (int64_t j = 0; j < n; ++j) start[0][j] = j;
  for (int64_t k = 1; k < len; ++k) {
    for (int64_t j = 0; j < n; ++j) {
      for (int64_t i = std::max<int64_t>(0, j - hi); i <= j - lo; ++i) {
        if (start[k - 1][i] < 0 || !oracle.passes(i, j)) continue;
        if (start[k][j] < 0 || start[k - 1][i] < start[k][j]) {
          start[k][j] = start[k - 1][i];
          pred[k][j] = i;
        }
      }
    }
  }
  for (int64_t end = n - 1; end >= 0; --end) {
    if (start[len - 1][end] < 0) continue;
    std::vector<int64_t> seq(len);
    seq[len - 1] = end;
    for (int64_t k = len - 1; k > 0; --k) seq[k - 1] = pred[k][seq[k]];
    return IndexSequence{video.id(), std::move(seq)};
  }
  return std::nullopt;
}

bool sequence_is_valid(const PaintingVideo& video, const ExtractionConfig& cfg,
                       const IndexSequence& seq) {
  if (static_cast<int64_t>(seq.indices.size()) != cfg.sequence_length) return false;
  for (size_t k = 0; k < seq.indices.size(); ++k) {
    const int64_t i = seq.indices[k];
    if (i < 0 || i >= static_cast<int64_t>(video.size())) return false;
    if (k == 0) continue;
    const int64_t prev = seq.indices[k - 1];
    const int64_t gap = i - prev;
    if (gap < 1 || gap < cfg.gamma - cfg.epsilon || gap > cfg.gamma + cfg.epsilon) return false;
    if (changed_fraction(video.frame(prev), video.frame(i), cfg.pixel_change_threshold) <
        cfg.min_change_fraction) {
      return false;
    }
  }
  return true;
}

std::vector<int64_t> crop_offsets(int64_t extent, int64_t crop) {
  if (crop < 1) throw std::invalid_argument("crop_offsets: crop size must be positive");
  if (extent < crop) {
    throw ShapeError("crop_offsets: extent " + std::to_string(extent) +
                     " is smaller than the crop size " + std::to_string(crop));
  }
  const int64_t n = (extent + crop - 1) / crop;
  if (n == 1) return {0};
  std::vector<int64_t> out;
  out.reserve(n);
  const int64_t span = extent - crop;
  for (int64_t i = 0; i < n; ++i) {
    // round-half-up of i * span / (n - 1) in integer arithmetic
    out.push_back((2 * i * span + (n - 1)) / (2 * (n - 1)));
  }
  return out;
}

std::vector<Crop> extract_crops(const Frame& frame, int64_t crop) {
  if (frame.height() < crop || frame.width() < crop) {
    throw ShapeError("extract_crops: frame " + shape_string(frame.tensor()) +
                     " is smaller than the crop size " + std::to_string(crop));
  }
  std::vector<Crop> out;
  for (int64_t top : crop_offsets(frame.height(), crop)) {
    for (int64_t left : crop_offsets(frame.width(), crop)) {
      out.push_back({top, left, frame.crop(top, left, crop, crop)});
    }
  }
  return out;
}

PaintingVideo crop_video(const PaintingVideo& video, int64_t top, int64_t left, int64_t height,
                         int64_t width) {
  std::vector<Frame> frames;
  frames.reserve(video.size());
  for (const auto& f : video.frames()) frames.push_back(f.crop(top, left, height, width));
  return PaintingVideo(video.id() + "@" + std::to_string(top) + "_" + std::to_string(left),
                       video.medium(), std::move(frames), video.frame_period(),
                       video.blank_start());
}

std::vector<PaintingVideo> video_crops(const PaintingVideo& video, int64_t crop) {
  std::vector<PaintingVideo> out;
  for (int64_t top : crop_offsets(video.height(), crop)) {
    for (int64_t left : crop_offsets(video.width(), crop)) {
      out.push_back(crop_video(video, top, left, crop, crop));
    }
  }
  return out;
}

void to_json(json& j, const DatasetSplit& s) {
  j = json{{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

void from_json(const json& j, DatasetSplit& s) {
  check_keys(j, {"train", "val", "test"}, "split");
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, uint64_t seed) {
  if (ids.size() < 3) throw std::invalid_argument("split_dataset: need at least 3 ids");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw std::invalid_argument("split_dataset: ids must be unique");
  }
  const auto n = static_cast<int64_t>(ids.size());
  auto rng = make_rng(seed);
  auto perm = torch::randperm(n, rng, torch::kLong);
  auto p = perm.accessor<int64_t, 1>();
  const auto n_val = static_cast<int64_t>(std::llround(0.15 * static_cast<double>(n)));
  const auto n_test = n_val;
  DatasetSplit s;
  for (int64_t k = 0; k < n; ++k) {
    const auto& id = ids[static_cast<size_t>(p[k])];
    if (k < n_val) {
      s.val.push_back(id);
    } else if (k < n_val + n_test) {
      s.test.push_back(id);
    } else {
      s.train.push_back(id);
    }
  }
  return s;
}

FrameFilter keep_all_frames() {
  return [](const PaintingVideo&, size_t) { return true; };
}

FrameFilter occluder_filter(const OccluderHeuristic& h) {
  return [h](const PaintingVideo& video, size_t index) {
    const auto n = static_cast<int64_t>(video.size());
    const auto idx = static_cast<int64_t>(index);
    auto differs = [&](int64_t a, int64_t b) {
      return changed_fraction(video.frame(a), video.frame(b), h.pixel_threshold) >=
             h.area_fraction;
    };
    // Try every run [a, b] containing idx of length <= max_duration.
    for (int64_t a = std::max<int64_t>(1, idx - h.max_duration + 1); a <= idx; ++a) {
      for (int64_t b = idx; b < std::min(n - 1, a + h.max_duration); ++b) {
        const int64_t before = a - 1;
        const int64_t after = b + 1;
        if (differs(before, after)) continue;
        bool occluded = true;
        for (int64_t k = a; k <= b && occluded; ++k) {
          occluded = differs(k, before) && differs(k, after);
        }
        if (occluded) return false;
      }
    }
    return true;
  };
}

PaintingVideo filter_artifact_frames(const PaintingVideo& video, const FrameFilter& keep) {
  std::vector<Frame> kept;
  for (size_t i = 0; i < video.size(); ++i) {
    if (keep(video, i)) kept.push_back(video.frame(i));
  }
  if (kept.empty()) return PaintingVideo();
  return video.with_frames(std::move(kept));
}

void write_index_file(const std::string& path, const std::vector<IndexSequence>& seqs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index file '" + path + "'");
  for (const auto& s : seqs) {
    out << s.video_id << ' ';
    for (size_t k = 0; k < s.indices.size(); ++k) out << (k ? "," : "") << s.indices[k];
    out << '\n';
  }
}

std::vector<IndexSequence> read_index_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read index file '" + path + "'");
  std::vector<IndexSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto space = line.rfind(' ');
    if (space == std::string::npos) throw std::runtime_error("malformed index line '" + line + "'");
    IndexSequence s{line.substr(0, space), {}};
    std::stringstream ss(line.substr(space + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) s.indices.push_back(std::stoll(tok));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace paintlapse
