#include "paintlapse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "paintlapse/json_keys.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (height < 8 || width < 8) throw std::invalid_argument("SyntheticSpec: canvas below 8x8");
  if (min_regions < 1 || max_regions < min_regions || max_regions > 255) {
    throw std::invalid_argument("SyntheticSpec: region count range must satisfy 1 <= min <= max <= 255");
  }
  if (min_fill_steps < 2 || max_fill_steps < min_fill_steps) {
    throw std::invalid_argument("SyntheticSpec: fill step range must satisfy 2 <= min <= max");
  }
  if (!(coarse_fraction > 0.0 && coarse_fraction < 1.0)) {
    throw std::invalid_argument("SyntheticSpec: coarse_fraction must be in (0, 1)");
  }
  if (!(edge_jitter >= 0.0)) throw std::invalid_argument("SyntheticSpec: edge_jitter must be >= 0");
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"height", s.height},
           {"width", s.width},
           {"min_regions", s.min_regions},
           {"max_regions", s.max_regions},
           {"min_fill_steps", s.min_fill_steps},
           {"max_fill_steps", s.max_fill_steps},
           {"coarse_fraction", s.coarse_fraction},
           {"edge_jitter", s.edge_jitter},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  check_keys(j, {"height", "width", "min_regions", "max_regions", "min_fill_steps",
                 "max_fill_steps", "coarse_fraction", "edge_jitter", "seed"},
             "synthetic");
  read_key(j, "height", s.height);
  read_key(j, "width", s.width);
  read_key(j, "min_regions", s.min_regions);
  read_key(j, "max_regions", s.max_regions);
  read_key(j, "min_fill_steps", s.min_fill_steps);
  read_key(j, "max_fill_steps", s.max_fill_steps);
  read_key(j, "coarse_fraction", s.coarse_fraction);
  read_key(j, "edge_jitter", s.edge_jitter);
  read_key(j, "seed", s.seed);
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Portable draws on top of mt19937_64 (whose output sequence is fixed by the
// standard, unlike the std distributions).
class Draw {
 public:
  explicit Draw(uint64_t seed) : engine_(seed) {}
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int64_t integer(int64_t lo, int64_t hi) {  // inclusive
    return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

struct Canvas {
  int64_t h, w;
  std::vector<float> rgb;  // CHW

  Frame snapshot() const {
    auto t = torch::from_blob(const_cast<float*>(rgb.data()), {3, h, w}, torch::kFloat32).clone();
    return Frame(t);
  }
  void set(int64_t p, const std::array<float, 3>& c) {
    for (int k = 0; k < 3; ++k) rgb[static_cast<size_t>(k * h * w + p)] = c[k];
  }
};

LabelImage make_regions(const SyntheticSpec& spec, Draw& draw) {
  const int64_t k = draw.integer(spec.min_regions, spec.max_regions);
  struct Seed {
    double y, x, sy, sx;
  };
  std::vector<Seed> seeds;
  for (int64_t i = 0; i < k; ++i) {
    seeds.push_back({draw.range(0, static_cast<double>(spec.height)),
                     draw.range(0, static_cast<double>(spec.width)), draw.range(0.6, 1.6),
                     draw.range(0.6, 1.6)});
  }
  LabelImage img{spec.height, spec.width, std::vector<uint8_t>(spec.height * spec.width)};
  std::vector<int64_t> area(k, 0);
  for (int64_t y = 0; y < spec.height; ++y) {
    for (int64_t x = 0; x < spec.width; ++x) {
      int64_t best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (int64_t i = 0; i < k; ++i) {
        const double dy = (y + 0.5 - seeds[i].y) * seeds[i].sy;
        const double dx = (x + 0.5 - seeds[i].x) * seeds[i].sx;
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      img.labels[y * spec.width + x] = static_cast<uint8_t>(best);
      ++area[best];
    }
  }
  // Relabel so labels are dense even if a cell ended up empty.
  std::vector<int64_t> remap(k, -1);
  int64_t next = 0;
  for (int64_t i = 0; i < k; ++i) {
    if (area[i] > 0) remap[i] = next++;
  }
  for (auto& l : img.labels) l = static_cast<uint8_t>(remap[l]);
  return img;
}

/// Pixels of a region in the order a sweep along a random direction reaches
/// them; the jitter makes the front ragged.
std::vector<int64_t> sweep_order(std::vector<int64_t> pixels, int64_t width, double jitter,
                                 Draw& draw) {
  const double angle = draw.range(0.0, 2.0 * kPi);
  const double cy = std::sin(angle), cx = std::cos(angle);
  std::vector<std::pair<double, int64_t>> keyed;
  keyed.reserve(pixels.size());
  for (int64_t p : pixels) {
    const double y = static_cast<double>(p / width), x = static_cast<double>(p % width);
    keyed.emplace_back(y * cy + x * cx + jitter * draw.unit(), p);
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 0; i < keyed.size(); ++i) pixels[i] = keyed[i].second;
  return pixels;
}

}  // namespace

SyntheticVideo generate_synthetic_video(const SyntheticSpec& spec, int64_t index) {
  spec.validate();
  Draw draw(derive_seed(spec.seed, static_cast<uint64_t>(index)));
  SyntheticVideo out;
  out.region_map = make_regions(spec, draw);
  const int64_t n_regions =
      1 + *std::max_element(out.region_map.labels.begin(), out.region_map.labels.end());
  const int64_t pixels = spec.height * spec.width;

  // Final appearance: flat base colour plus an oriented sinusoidal texture.
  std::vector<std::array<float, 3>> base(n_regions);
  struct Texture {
    double freq, cos_a, sin_a, phase, amp;
  };
  std::vector<Texture> texture(n_regions);
  for (int64_t r = 0; r < n_regions; ++r) {
    for (auto& c : base[r]) c = static_cast<float>(draw.range(0.05, 0.85));
    const double angle = draw.range(0.0, kPi);
    texture[r] = {draw.range(0.25, 0.7), std::cos(angle), std::sin(angle),
                  draw.range(0.0, 2.0 * kPi), draw.range(0.08, 0.18)};
  }
  auto final_colour = [&](int64_t p) {
    const int64_t r = out.region_map.labels[p];
    const auto& t = texture[r];
    const double y = static_cast<double>(p / spec.width);
    const double x = static_cast<double>(p % spec.width);
    const double shade = t.amp * std::sin(t.freq * (x * t.cos_a + y * t.sin_a) + t.phase);
    std::array<float, 3> c{};
    for (int k = 0; k < 3; ++k) {
      c[k] = static_cast<float>(std::clamp(base[r][k] + shade, 0.02, 0.9));
    }
    return c;
  };

  std::vector<std::vector<int64_t>> members(n_regions);
  for (int64_t p = 0; p < pixels; ++p) members[out.region_map.labels[p]].push_back(p);

  out.fill_order.resize(n_regions);
  std::iota(out.fill_order.begin(), out.fill_order.end(), 0);
  for (int64_t i = n_regions - 1; i > 0; --i) {
    std::swap(out.fill_order[i], out.fill_order[draw.integer(0, i)]);
  }
  out.first_fill_frame.assign(n_regions, -1);

  Canvas canvas{spec.height, spec.width, std::vector<float>(3 * pixels, 1.0f)};
  std::vector<Frame> frames{canvas.snapshot()};
  for (int64_t region : out.fill_order) {
    const int64_t steps = draw.integer(spec.min_fill_steps, spec.max_fill_steps);
    const int64_t coarse = std::clamp<int64_t>(
        std::llround(spec.coarse_fraction * static_cast<double>(steps)), 1, steps - 1);
    const auto base_order = sweep_order(members[region], spec.width, spec.edge_jitter, draw);
    const auto detail_order = sweep_order(members[region], spec.width, spec.edge_jitter, draw);
    out.first_fill_frame[region] = static_cast<int64_t>(frames.size());

    size_t done = 0;
    for (int64_t s = 0; s < steps; ++s) {
      const bool coarse_pass = s < coarse;
      if (s == coarse) done = 0;
      const auto& order = coarse_pass ? base_order : detail_order;
      const int64_t steps_left = coarse_pass ? coarse - s : steps - s;
      const auto remaining = static_cast<int64_t>(order.size() - done);
      const auto quota = static_cast<size_t>((remaining + steps_left - 1) / steps_left);
      for (size_t i = done; i < done + quota; ++i) {
        const int64_t p = order[i];
        canvas.set(p, coarse_pass ? base[region] : final_colour(p));
      }
      done += quota;
      frames.push_back(canvas.snapshot());
    }
  }

  char id[32];
  std::snprintf(id, sizeof(id), "synth_%05lld", static_cast<long long>(index));
  out.video = PaintingVideo(id, Medium::synthetic, std::move(frames), 1.0, /*blank_start=*/true);
  return out;
}

std::vector<SyntheticVideo> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                       int64_t n_videos) {
  spec.validate();
  std::vector<SyntheticVideo> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(n_videos, 0)));
  for (int64_t i = 0; i < n_videos; ++i) out.push_back(generate_synthetic_video(spec, i));
  return out;
}

std::vector<int64_t> region_fill_order(const std::vector<Frame>& frames, const LabelImage& regions,
                                       double coverage, double threshold) {
  if (frames.empty()) return {};
  if (frames.front().height() != regions.height || frames.front().width() != regions.width) {
    throw ShapeError("region_fill_order: region map does not match frame size");
  }
  const int64_t n_regions = 1 + *std::max_element(regions.labels.begin(), regions.labels.end());
  auto labels = torch::from_blob(const_cast<uint8_t*>(regions.labels.data()),
                                 {regions.height, regions.width}, torch::kUInt8)
                    .to(torch::kLong);
  auto area = torch::zeros({n_regions}, torch::kLong).index_add_(0, labels.flatten(),
                                                                 torch::ones_like(labels.flatten()));
  const int64_t never = std::numeric_limits<int64_t>::max();
  std::vector<int64_t> first(n_regions, never);
  for (size_t t = 0; t < frames.size(); ++t) {
    auto changed = (frames[t].tensor() - 1.0f).abs().gt(threshold).any(0).flatten().to(torch::kLong);
    auto hits = torch::zeros({n_regions}, torch::kLong).index_add_(0, labels.flatten(), changed);
    auto frac = hits.to(torch::kFloat64) / area.clamp_min(1).to(torch::kFloat64);
    auto acc = frac.accessor<double, 1>();
    for (int64_t r = 0; r < n_regions; ++r) {
      if (first[r] == never && acc[r] >= coverage) first[r] = static_cast<int64_t>(t);
    }
  }
  std::vector<int64_t> order(n_regions);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return first[a] < first[b]; });
  return order;
}

}  // namespace paintlapse
