#pragma once

#include <filesystem>

#include <json.hpp>
#include <torch/torch.h>

#include "paintlapse/frame.hpp"
#include "paintlapse/losses.hpp"
#include "paintlapse/training.hpp"

namespace paintlapse {

/// Frame t (t = 0..steps) = blank + (t / steps) (x_final - blank).
PaintingVideo interp_video(const Frame& x_final, int64_t steps = 40);

/// Encoder-decoder from the completed painting to a whole video at once:
/// all frames are emitted as stacked channels of a single output.
class UnetVideoImpl : public torch::nn::Module {
 public:
  UnetVideoImpl(int64_t base_channels, int64_t frames);
  /// [B, 3, H, W] -> [B, frames, 3, H, W] in [0, 1].
  torch::Tensor forward(const torch::Tensor& x_final);

 private:
  int64_t frames_;
  ConvEncoder encoder{nullptr};
  torch::nn::Conv2d up2{nullptr}, up1{nullptr}, up0{nullptr}, head{nullptr};
};
TORCH_MODULE(UnetVideo);

struct UnetTrainConfig {
  int64_t steps = 2000;
  int64_t batch_size = 4;
  double learning_rate = 1e-4;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const UnetTrainConfig& c);
void from_json(const nlohmann::json& j, UnetTrainConfig& c);

struct UnetBaselineParams {
  static constexpr int64_t kFrames = 40;

  int64_t height = 0;
  int64_t width = 0;
  int64_t base_channels = 0;
  UnetVideo net{nullptr};

  /// Picks the width whose parameter count is closest to `reference_count`
  /// and throws if that is not within 20% of it.
  static UnetBaselineParams create(int64_t height, int64_t width, int64_t reference_count,
                                   uint64_t seed);
  int64_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static UnetBaselineParams load(const std::filesystem::path& path);
};

int64_t unet_parameter_count(int64_t base_channels, int64_t frames = UnetBaselineParams::kFrames);

/// Regresses the 40 frames of training sequences of that length from each
/// video's final frame with the L1 + perceptual image losses summed over
/// frames. The parameter budget matches `model`'s generator and posterior.
UnetBaselineParams unet_train(const TrainingData& data, const UnetTrainConfig& cfg,
                              const ArchConfig& model_arch, const FeatureExtractor& features,
                              const LossWeights& weights, MetricsLog* log = nullptr);

/// Training loss of `params` on a [B, 40, 3, H, W] target.
torch::Tensor unet_loss(const UnetBaselineParams& params, const torch::Tensor& x_final,
                        const torch::Tensor& target, const FeatureExtractor& features,
                        const LossWeights& weights);

/// Blank frame followed by the 40 predicted frames.
PaintingVideo unet_predict(const Frame& x_final, const UnetBaselineParams& params);

}  // namespace paintlapse
