#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "paintlapse/checkpoint.hpp"
#include "paintlapse/frame.hpp"

namespace paintlapse {

/// Architecture descriptor shared by the generator, posterior encoder and
/// critic. Stored in every checkpoint.
struct ArchConfig {
  int64_t height = 50;
  int64_t width = 50;
  int64_t base_channels = 32;    // encoder widths: c, 2c, 4c, 4c
  int64_t latent_dim = 32;
  int64_t critic_channels = 32;  // critic widths: c, 2c, 4c
  double logvar_min = -10.0;
  double logvar_max = 10.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

/// Diagonal Gaussian over latent codes: mu and logvar of shape [D] or [B, D].
struct GaussianParams {
  torch::Tensor mu;
  torch::Tensor logvar;
};

/// Four-stage convolutional encoder: full resolution, then three stride-2
/// stages (each halves the spatial extent, rounding up). Returns every stage's
/// activation, finest first.
class ConvEncoderImpl : public torch::nn::Module {
 public:
  ConvEncoderImpl(int64_t in_channels, int64_t base_channels);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv0{nullptr}, conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(ConvEncoder);

/// g(z, x_prev, x_final) -> change in [-1, 1]. Conditioning frames are
/// concatenated at the input, z is broadcast over the bottleneck, and encoder
/// activations are skipped into the decoder.
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(int64_t base_channels, int64_t latent_dim);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& x_prev,
                        const torch::Tensor& x_final);

  int64_t latent_dim() const { return latent_dim_; }

 private:
  int64_t latent_dim_;
  ConvEncoder encoder{nullptr};
  torch::nn::Conv2d fuse{nullptr}, up2{nullptr}, up1{nullptr}, up0{nullptr}, head{nullptr};
};
TORCH_MODULE(Generator);

/// q(z | delta, x_prev, x_final) as a diagonal Gaussian.
class PosteriorEncoderImpl : public torch::nn::Module {
 public:
  PosteriorEncoderImpl(int64_t base_channels, int64_t latent_dim, double logvar_min,
                       double logvar_max);
  GaussianParams forward(const torch::Tensor& delta, const torch::Tensor& x_prev,
                         const torch::Tensor& x_final);

 private:
  int64_t latent_dim_;
  double logvar_min_, logvar_max_;
  ConvEncoder encoder{nullptr};
  torch::nn::Linear to_stats{nullptr};
};
TORCH_MODULE(PosteriorEncoder);

enum class CriticNormalization { none, batch };

struct CriticOptions {
  int64_t channels = 32;
  /// Gradient penalties are defined per sample, so batch statistics are
  /// rejected at construction.
  CriticNormalization normalization = CriticNormalization::none;
};

/// D(x_t, x_prev, x_final) -> one score per batch element.
class CriticImpl : public torch::nn::Module {
 public:
  explicit CriticImpl(const CriticOptions& options);
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& x_prev,
                        const torch::Tensor& x_final);

 private:
  torch::nn::Conv2d conv0{nullptr}, conv1{nullptr}, conv2{nullptr}, head{nullptr};
};
TORCH_MODULE(Critic);

/// Generator (theta), posterior encoder (phi) and critic (psi).
struct ModelParams {
  ArchConfig arch;
  uint64_t seed = 0;
  Generator generator{nullptr};
  PosteriorEncoder posterior{nullptr};
  Critic critic{nullptr};

  /// Fresh parameters drawn deterministically from `seed`.
  static ModelParams create(const ArchConfig& arch, uint64_t seed);

  ModelParams clone() const;
  void to(torch::ScalarType dtype);

  std::vector<torch::Tensor> generator_parameters() const;  // theta and phi
  std::vector<torch::Tensor> critic_parameters() const;     // psi
  int64_t parameter_count(bool include_critic = false) const;

  /// Names are prefixed "theta/", "phi/" and "psi/".
  void write(Checkpoint& ck) const;
  static ModelParams read(const Checkpoint& ck);

  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);
};

/// Fills every parameter of `module` from `rng` using uniform(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)), independent of torch's global generator.
void init_parameters(torch::nn::Module& module, torch::Generator& rng);

// Batched tensor forms ([B, ...]); autograd flows through them.
torch::Tensor generate_delta(const torch::Tensor& z, const torch::Tensor& x_prev,
                             const torch::Tensor& x_final, const ModelParams& params);
GaussianParams encode_posterior(const torch::Tensor& delta, const torch::Tensor& x_prev,
                                const torch::Tensor& x_final, const ModelParams& params);
torch::Tensor critic_score(const torch::Tensor& x_t, const torch::Tensor& x_prev,
                           const torch::Tensor& x_final, const ModelParams& params);

/// z = mu + exp(0.5 logvar) * n with n ~ N(0, I) drawn from rng.
torch::Tensor reparameterize(const GaussianParams& g, torch::Generator& rng);
/// Standard normal latent of shape [latent_dim], or [batch, latent_dim].
torch::Tensor sample_prior(int64_t latent_dim, torch::Generator& rng);
torch::Tensor sample_prior(int64_t batch, int64_t latent_dim, torch::Generator& rng);

// Single-frame forms. Run without autograd.
ChangeMap generate_delta(const torch::Tensor& z, const Frame& x_prev, const Frame& x_final,
                         const ModelParams& params);
GaussianParams encode_posterior(const ChangeMap& delta, const Frame& x_prev, const Frame& x_final,
                                const ModelParams& params);
double critic_score(const Frame& x_t, const Frame& x_prev, const Frame& x_final,
                    const ModelParams& params);

/// Fixed convolutional feature stack with per-location unit normalisation of
/// the channel vector. Three taps at full, 1/2 and 1/4 resolution.
class FeatureExtractor {
 public:
  enum class Mode { seeded_random, pretrained };
  static constexpr int64_t kMinSize = 8;

  /// Random but fixed weights drawn from `seed`.
  static FeatureExtractor seeded(uint64_t seed);
  /// Weights from a checkpoint file with tensors conv{0,1,2}.weight/.bias.
  static FeatureExtractor pretrained(const std::filesystem::path& path);

  Mode mode() const { return mode_; }
  uint64_t seed() const { return seed_; }
  size_t layer_count() const { return weights_.size(); }

  /// [B, 3, H, W] -> one [B, C_l, H_l, W_l] map per tap, in the input's dtype.
  std::vector<torch::Tensor> features(const torch::Tensor& x) const;

  void save(const std::filesystem::path& path) const;
  void write(Checkpoint& ck, const std::string& prefix = "") const;
  static FeatureExtractor read(const Checkpoint& ck, const std::string& prefix = "");

 private:
  FeatureExtractor() = default;
  Mode mode_ = Mode::seeded_random;
  uint64_t seed_ = 0;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

/// Divides each spatial location's channel vector by its L2 norm (zero
/// vectors stay zero).
torch::Tensor normalize_channels(const torch::Tensor& features);

std::vector<torch::Tensor> extract_features(const Frame& x, const FeatureExtractor& v);

}  // namespace paintlapse
