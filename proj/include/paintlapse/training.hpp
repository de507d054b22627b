#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "paintlapse/datapipe.hpp"
#include "paintlapse/losses.hpp"
#include "paintlapse/networks.hpp"

namespace paintlapse {

struct TrainConfig {
  ArchConfig arch;
  LossWeights weights;
  KlForm kl_form = KlForm::as_printed;
  ExtractionConfig extraction;        // gamma / epsilon / change test for pair and sequence pools
  int64_t tau = 40;                   // rollout length of the sampling stage
  std::vector<int64_t> seq_lengths{3, 5};
  int64_t critic_iters = 5;
  int64_t batch_size = 8;             // pairs (pairwise) or sequences (sequential CVAE)
  int64_t sampling_batch = 2;         // rollouts per sampling step
  int64_t critic_batch = 16;          // real and fake triples per critic update
  double learning_rate = 1e-4;        // theta and phi
  double critic_learning_rate = 1e-4; // psi
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adversarial_weight = 1.0;
  double starter_probability = 0.1;   // share of pairwise samples drawn from starter pairs
  int64_t pairwise_steps = 5000;
  int64_t sequential_steps = 4000;    // total over all sequential blocks
  int64_t block_steps = 200;
  int64_t cvae_blocks_per_cycle = 1;  // alternation ratio, CVAE : sampling
  int64_t sampling_blocks_per_cycle = 1;
  int64_t sequences_per_video = 64;   // cap on extracted sequences per video and length
  uint64_t feature_seed = 7;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Reference into TrainingData::videos. prev == -1 denotes the blank canvas.
struct PairRef {
  int64_t video = 0;
  int64_t prev = 0;
  int64_t next = 0;
};

struct SequenceRef {
  int64_t video = 0;
  std::vector<int64_t> indices;
};

/// Videos at training resolution plus the sampling pools derived from them.
struct TrainingData {
  std::vector<PaintingVideo> videos;
  std::vector<PairRef> pairs;       // every valid (i, j) pair
  std::vector<PairRef> starters;    // pairs leaving the blank canvas
  std::map<int64_t, std::vector<SequenceRef>> sequences;  // keyed by length
  Frame blank_canvas;

  /// Builds the pools with cfg.extraction and every length in cfg.seq_lengths
  /// and cfg.tau. All videos must match cfg.arch's resolution.
  static TrainingData build(std::vector<PaintingVideo> videos, const TrainConfig& cfg);

  const Frame& frame(int64_t video, int64_t index) const;  // index -1 -> blank
};

/// Pairwise training examples from extracted sequences: consecutive pairs of
/// each sequence, plus a starter pair from the blank canvas to the first
/// frame for videos recorded from a blank start. x_final is each video's
/// last frame.
struct PairBatch {
  torch::Tensor x_prev;   // [B, 3, H, W]
  torch::Tensor x_next;
  torch::Tensor x_final;
};
PairBatch make_pairwise_batch(const std::vector<IndexSequence>& sequences,
                              const std::vector<PaintingVideo>& videos);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::filesystem::path snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const std::filesystem::path& snapshot() const { return snapshot_; }

 private:
  std::filesystem::path snapshot_;
};

/// Everything needed to resume training bit-for-bit: parameters, optimizer
/// moments, generator state and stage counters.
class TrainState {
 public:
  TrainConfig config;
  ModelParams params;
  FeatureExtractor features = FeatureExtractor::seeded(0);
  std::unique_ptr<torch::optim::Adam> generator_opt;  // theta and phi
  std::unique_ptr<torch::optim::Adam> critic_opt;     // psi
  torch::Generator rng;
  int64_t global_step = 0;
  int64_t pairwise_steps = 0;
  int64_t cvae_steps = 0;
  int64_t sampling_steps = 0;
  int64_t critic_updates = 0;

  static TrainState create(const TrainConfig& cfg);
  /// Uses the pretrained feature weights at `features_path` instead of seeded ones.
  static TrainState create(const TrainConfig& cfg, const std::filesystem::path& features_path);

  int64_t sequential_steps() const { return cvae_steps + sampling_steps; }

  void save(const std::filesystem::path& path) const;
  static TrainState load(const std::filesystem::path& path);
};

/// Observers for a training run. All members are optional.
struct TrainHooks {
  MetricsLog* log = nullptr;
  /// Where a snapshot is written before a TrainingAborted is thrown.
  std::filesystem::path snapshot_dir;
  /// Called after the pairwise stage and after every sequential block with a
  /// label such as "pairwise" or "seq_cvae_block_3".
  std::function<void(const TrainState&, const std::string&)> on_boundary;
  /// Records the rollout step at which each final-frame term was computed.
  std::vector<int64_t>* final_term_steps = nullptr;
};

// Batch sampling and per-step losses; the stage loops below are built from these.

PairBatch sample_pairwise_batch(const TrainingData& data, const TrainConfig& cfg,
                                torch::Generator& rng);
PairwiseLoss pairwise_batch_loss(const ModelParams& params, const FeatureExtractor& v,
                                 const PairBatch& batch, const TrainConfig& cfg,
                                 torch::Generator& rng);

/// frames[t] is [B, 3, H, W] for t = 0..S-1.
struct SequenceBatch {
  std::vector<torch::Tensor> frames;
  torch::Tensor x_final;
};
SequenceBatch sample_sequence_batch(const TrainingData& data, int64_t length, int64_t batch,
                                    torch::Generator& rng);

struct SequenceLoss {
  torch::Tensor total;
  torch::Tensor kl;           // summed over steps
  torch::Tensor reconstruction;
  std::vector<torch::Tensor> per_step;  // total of each step t = 1..S-1
};
/// Rollout from the real first frame: x^_0 = x_0, target delta_t = x_t - x^_{t-1},
/// x^_t = apply(x^_{t-1}, delta^_t); the loss sums the pairwise loss of every
/// step. `enabled_steps[t-1]` masks step t out of the total; `detach_rollout`
/// stops gradients from flowing through x^_{t-1}.
SequenceLoss sequential_cvae_loss(const ModelParams& params, const FeatureExtractor& v,
                                  const SequenceBatch& batch, const TrainConfig& cfg,
                                  torch::Generator& rng,
                                  const std::vector<bool>& enabled_steps = {},
                                  bool detach_rollout = false);

/// Generator rollout of `steps` steps from the blank canvas with prior codes.
/// frames[0] is blank; deltas[t-1] produced frames[t].
struct Rollout {
  std::vector<torch::Tensor> frames;
  std::vector<torch::Tensor> deltas;
};
Rollout rollout_from_blank(const ModelParams& params, const torch::Tensor& x_final, int64_t steps,
                           torch::Generator& rng);

/// Mean interpolate gradient norm of the critic over `batches` fresh critic
/// batches, without updating anything.
double measure_critic_grad_norm(TrainState& state, const TrainingData& data, int64_t batches);

void train_pairwise(TrainState& state, const TrainingData& data, int64_t steps,
                    TrainHooks& hooks);
void train_sequential_cvae(TrainState& state, const TrainingData& data, int64_t steps,
                           TrainHooks& hooks);
void train_sequential_sampling(TrainState& state, const TrainingData& data, int64_t steps,
                               TrainHooks& hooks);

/// Pairwise stage for config.pairwise_steps, then alternating sequential
/// blocks until config.sequential_steps. Resumes from the counters in `state`.
void train_full(TrainState& state, const TrainingData& data, TrainHooks& hooks);

}  // namespace paintlapse
