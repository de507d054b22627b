#pragma once

// Scaled-down end-to-end experiment on synthetic paintings: train the full
// model, then measure completion, diversity, critic behaviour and the
// comparison against the baselines.

#include <chrono>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "paintlapse/baselines.hpp"
#include "paintlapse/evaluation.hpp"
#include "paintlapse/inference.hpp"
#include "paintlapse/rng.hpp"
#include "paintlapse/synthetic.hpp"
#include "paintlapse/training.hpp"

namespace paintlapse::experiment {

struct Settings {
  int64_t resolution = 32;
  int64_t train_videos = 64;
  int64_t heldout_videos = 16;
  int64_t base_channels = 16;
  int64_t latent_dim = 32;
  int64_t pairwise_steps = 1000;
  int64_t sequential_steps = 2000;
  int64_t block_steps = 500;
  int64_t sampling_batch = 4;
  int64_t unet_steps = 2000;
  int64_t k = 32;
  int64_t diversity_samples = 20;
  uint64_t seed = 2024;
  bool verbose = true;
};

struct Results {
  double final_l1 = 0;             // mean over held-out paintings
  int64_t distinct_orderings = 0;  // among diversity_samples samples of one painting
  double critic_grad_norm = 0;
  MetricsReport report;
  double train_seconds = 0;
  double total_seconds = 0;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline TrainConfig train_config(const Settings& s) {
  TrainConfig cfg;
  cfg.arch.height = cfg.arch.width = s.resolution;
  cfg.arch.base_channels = s.base_channels;
  cfg.arch.critic_channels = s.base_channels;
  cfg.arch.latent_dim = s.latent_dim;
  cfg.pairwise_steps = s.pairwise_steps;
  cfg.sequential_steps = s.sequential_steps;
  cfg.block_steps = s.block_steps;
  cfg.sampling_batch = s.sampling_batch;
  cfg.seed = s.seed;
  return cfg;
}

inline Results run(const Settings& s) {
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& msg) {
    if (s.verbose) std::printf("  [%7.1fs] %s\n", seconds_since(t0), msg.c_str()), std::fflush(stdout);
  };
  SyntheticSpec spec;
  spec.height = spec.width = s.resolution;
  spec.seed = s.seed;
  std::vector<PaintingVideo> train_videos;
  std::vector<SyntheticVideo> heldout;
  for (int64_t i = 0; i < s.train_videos + s.heldout_videos; ++i) {
    auto v = generate_synthetic_video(spec, i);
    if (i < s.train_videos) {
      train_videos.push_back(std::move(v.video));
    } else {
      heldout.push_back(std::move(v));
    }
  }
  const auto cfg = train_config(s);
  const auto data = TrainingData::build(train_videos, cfg);
  log("data: " + std::to_string(data.pairs.size()) + " pairs");

  auto state = TrainState::create(cfg);
  TrainHooks hooks;
  hooks.on_boundary = [&](const TrainState& st, const std::string& label) {
    log("finished " + label + " (step " + std::to_string(st.global_step) + ")");
  };
  const auto t_train = std::chrono::steady_clock::now();
  train_full(state, data, hooks);
  Results r;
  r.train_seconds = seconds_since(t_train);

  // (a) completion of held-out paintings
  double total = 0;
  for (size_t i = 0; i < heldout.size(); ++i) {
    const auto& x_final = heldout[i].video.final_frame();
    const auto frames = synthesize_video({x_final, cfg.tau, derive_seed(s.seed, 100 + i)}, state.params);
    total += (frames.back().tensor() - x_final.tensor()).abs().mean().item<double>();
  }
  r.final_l1 = total / static_cast<double>(heldout.size());
  log("final-frame L1 " + std::to_string(r.final_l1));

  // (b) diversity of region fill orderings
  const auto& painting = heldout.front();
  std::set<std::vector<int64_t>> orders;
  for (const auto& frames : synthesize_many({painting.video.final_frame(), cfg.tau, s.seed + 7},
                                            s.diversity_samples, state.params)) {
    orders.insert(region_fill_order(frames, painting.region_map));
  }
  r.distinct_orderings = static_cast<int64_t>(orders.size());
  log("distinct fill orderings " + std::to_string(r.distinct_orderings));

  // (c) critic interpolate gradient norm
  r.critic_grad_norm = measure_critic_grad_norm(state, data, 20);
  log("critic grad norm " + std::to_string(r.critic_grad_norm));

  // baselines and metrics
  UnetTrainConfig ucfg;
  ucfg.steps = s.unet_steps;
  ucfg.seed = s.seed;
  const auto unet = unet_train(data, ucfg, cfg.arch, state.features, cfg.weights);
  log("unet trained");
  std::vector<PaintingVideo> test;
  for (const auto& h : heldout) test.push_back(h.video);
  const auto& params = state.params;
  std::vector<EvalMethod> methods{
      {"ours",
       [&](const Frame& x, uint64_t seed) { return synthesize_video({x, 40, seed}, params); },
       false},
      {"interp", [](const Frame& x, uint64_t) { return interp_video(x, 40).frames(); }, true},
      {"unet", [&](const Frame& x, uint64_t) { return unet_predict(x, unet).frames(); }, true}};
  EvalOptions eo;
  eo.k = s.k;
  eo.crop_size = s.resolution;
  eo.extraction = cfg.extraction;
  eo.seed = s.seed;
  r.report = evaluate_methods(test, methods, eo);
  if (s.verbose) std::printf("%s", r.report.to_table().c_str());
  r.total_seconds = seconds_since(t0);
  return r;
}

}  // namespace paintlapse::experiment
