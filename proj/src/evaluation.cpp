#include "paintlapse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "paintlapse/rng.hpp"

namespace paintlapse {

namespace {

void check_same_video_shape(const PaintingVideo& a, const PaintingVideo& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": videos have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " frames");
  }
  if (a.size() > 0) check_same_shape(a.frame(0).tensor(), b.frame(0).tensor(), what);
}

}  // namespace

double video_l1(const PaintingVideo& a, const PaintingVideo& b) {
  check_same_video_shape(a, b, "video_l1");
  return (a.stacked().to(torch::kFloat64) - b.stacked().to(torch::kFloat64))
      .abs()
      .mean()
      .item<double>();
}

double best_of_k_l1(const PaintingVideo& real, const VideoSampler& sampler, int64_t k) {
  if (k < 1) throw std::invalid_argument("best_of_k_l1: k must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < k; ++i) best = std::min(best, video_l1(real, sampler(i)));
  return best;
}

int64_t ChangeShape::count() const { return mask.sum().item<int64_t>(); }

ChangeShape change_shape(const ChangeMap& delta, double threshold) {
  return {delta.tensor().abs().gt(threshold).any(0), threshold};
}

ChangeShape change_shape_from_mask(const torch::Tensor& mask, double threshold) {
  if (mask.dim() != 2) throw ShapeError("change_shape: mask must be [H, W], got " + shape_string(mask));
  return {mask.to(torch::kBool), threshold};
}

double iou(const ChangeShape& a, const ChangeShape& b) {
  check_same_shape(a.mask, b.mask, "iou");
  const auto uni = a.mask.logical_or(b.mask).sum().item<int64_t>();
  if (uni == 0) return 1.0;
  const auto inter = a.mask.logical_and(b.mask).sum().item<int64_t>();
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ChangeShape> video_change_shapes(const PaintingVideo& video, double threshold) {
  std::vector<ChangeShape> out;
  if (video.size() < 2) return out;
  const auto frames = video.stacked();
  const auto masks = (frames.slice(0, 1) - frames.slice(0, 0, -1)).abs().gt(threshold).any(1);
  for (int64_t t = 0; t < masks.size(0); ++t) out.push_back({masks[t], threshold});
  return out;
}

double change_iou_score(const std::vector<ChangeShape>& real,
                        const std::vector<ChangeShape>& synth) {
  if (real.size() != synth.size()) {
    throw ShapeError("change_iou_score: " + std::to_string(real.size()) + " real changes vs " +
                     std::to_string(synth.size()) + " synthesized");
  }
  if (real.empty()) throw std::invalid_argument("change_iou_score: videos have no changes");
  double total = 0.0;
  for (const auto& r : real) {
    double best = 0.0;
    for (const auto& s : synth) best = std::max(best, iou(r, s));
    total += best;
  }
  return total / static_cast<double>(real.size());
}

double change_iou_score(const PaintingVideo& real, const PaintingVideo& synth, double threshold) {
  check_same_video_shape(real, synth, "change_iou_score");
  return change_iou_score(video_change_shapes(real, threshold),
                          video_change_shapes(synth, threshold));
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f (%.2f)", mean, std);
  return buf;
}

const MethodSummary& MetricsReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("MetricsReport: no row for method '" + method + "'");
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "method,l1_mean,l1_std,iou_mean,iou_std,cells,k,crops_per_video,seed\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.l1_mean << ',' << r.l1_std << ',' << r.iou_mean << ','
       << r.iou_std << ',' << r.cells << ',' << k << ',' << crops_per_video << ',' << seed << '\n';
  }
  os << "\nvideo,crop_top,crop_left,method,l1,iou\n";
  for (const auto& c : cells) {
    os << c.video << ',' << c.crop_top << ',' << c.crop_left << ',' << c.method << ',' << c.l1
       << ',' << c.iou << '\n';
  }
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << "k = " << k << ", crops per video = " << crops_per_video << ", seed = " << seed << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-14s %-14s %s\n", "method", "L1", "change IOU", "cells");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %-14s %-14s %lld\n", r.method.c_str(),
                  format_mean_std(r.l1_mean, r.l1_std).c_str(),
                  format_mean_std(r.iou_mean, r.iou_std).c_str(),
                  static_cast<long long>(r.cells));
    os << line;
  }
  for (const auto& s : skipped) os << "skipped " << s.video << ": " << s.reason << "\n";
  return os.str();
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

std::vector<std::pair<int64_t, int64_t>> pick_crops(const PaintingVideo& video,
                                                    const EvalOptions& o, uint64_t seed) {
  std::vector<std::pair<int64_t, int64_t>> all;
  for (auto top : crop_offsets(video.height(), o.crop_size)) {
    for (auto left : crop_offsets(video.width(), o.crop_size)) all.emplace_back(top, left);
  }
  if (static_cast<int64_t>(all.size()) <= o.crops_per_video) return all;
  auto rng = make_rng(seed);
  auto perm = torch::randperm(static_cast<int64_t>(all.size()), rng, torch::kLong);
  std::vector<int64_t> chosen(perm.data_ptr<int64_t>(), perm.data_ptr<int64_t>() + o.crops_per_video);
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::pair<int64_t, int64_t>> out;
  for (auto i : chosen) out.push_back(all[static_cast<size_t>(i)]);
  return out;
}

}  // namespace

MetricsReport evaluate_methods(const std::vector<PaintingVideo>& test_videos,
                               const std::vector<EvalMethod>& methods, const EvalOptions& o) {
  if (o.k < 1) throw std::invalid_argument("evaluate_methods: k must be >= 1");
  if (o.crops_per_video < 1) throw std::invalid_argument("evaluate_methods: crops_per_video < 1");
  ExtractionConfig ecfg = o.extraction;
  ecfg.sequence_length = o.sequence_length;
  ecfg.validate();

  MetricsReport report;
  report.k = o.k;
  report.crops_per_video = o.crops_per_video;
  report.seed = o.seed;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_method;

  for (size_t vi = 0; vi < test_videos.size(); ++vi) {
    const auto& video = test_videos[vi];
    if (video.height() < o.crop_size || video.width() < o.crop_size) {
      report.skipped.push_back({video.id(), "smaller than the crop size"});
      continue;
    }
    const auto seq = select_test_sequence(video, ecfg);
    if (!seq) {
      report.skipped.push_back(
          {video.id(), "no valid " + std::to_string(o.sequence_length) + "-frame sequence"});
      continue;
    }
    const uint64_t video_seed = derive_seed(o.seed, vi);
    const auto crops = pick_crops(video, o, derive_seed(video_seed, 0));
    for (size_t ci = 0; ci < crops.size(); ++ci) {
      const auto [top, left] = crops[ci];
      std::vector<Frame> real_frames;
      for (auto idx : seq->indices) {
        real_frames.push_back(video.frame(static_cast<size_t>(idx)).crop(top, left, o.crop_size, o.crop_size));
      }
      const PaintingVideo real(video.id(), video.medium(), std::move(real_frames));
      const auto real_shapes = video_change_shapes(real, o.change_threshold);
      const auto x_final = video.final_frame().crop(top, left, o.crop_size, o.crop_size);
      const uint64_t cell_seed = derive_seed(video_seed, ci + 1);

      for (const auto& m : methods) {
        double best_l1 = std::numeric_limits<double>::infinity();
        double best_iou = -1.0;
        const int64_t samples = m.deterministic ? 1 : o.k;
        for (int64_t i = 0; i < samples; ++i) {
          auto frames = m.sample(x_final, derive_seed(cell_seed, static_cast<uint64_t>(i)));
          if (static_cast<int64_t>(frames.size()) < o.sequence_length + 1) {
            throw std::runtime_error("evaluate_methods: method '" + m.name + "' returned " +
                                     std::to_string(frames.size()) + " frames, need " +
                                     std::to_string(o.sequence_length + 1));
          }
          std::vector<Frame> aligned(frames.begin() + 1, frames.begin() + 1 + o.sequence_length);
          const PaintingVideo synth(m.name, Medium::synthetic, std::move(aligned));
          best_l1 = std::min(best_l1, video_l1(real, synth));
          best_iou = std::max(best_iou, change_iou_score(
                                            real_shapes, video_change_shapes(synth, o.change_threshold)));
        }
        report.cells.push_back({video.id(), top, left, m.name, best_l1, best_iou});
        per_method[m.name].first.push_back(best_l1);
        per_method[m.name].second.push_back(best_iou);
      }
    }
  }

  for (const auto& m : methods) {
    const auto& [l1s, ious] = per_method[m.name];
    const auto [l1_mean, l1_std] = mean_std(l1s);
    const auto [iou_mean, iou_std] = mean_std(ious);
    report.rows.push_back({m.name, l1_mean, l1_std, iou_mean, iou_std,
                           static_cast<int64_t>(l1s.size())});
  }
  return report;
}

}  // namespace paintlapse
