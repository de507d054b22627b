#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "paintlapse/networks.hpp"

namespace paintlapse {

struct LossWeights {
  double sigma1 = 0.01;    // L1 change reconstruction scale
  double sigma2 = 0.1;     // perceptual feature noise
  double gp_weight = 10.0; // gradient penalty

  void validate() const;
};

/// `as_printed`: 1/2 (-logvar + exp(logvar) + mu^2) per dimension.
/// `textbook`: the closed-form KL to N(0, I), which subtracts 1/2 per dimension.
/// Both have the same gradients.
enum class KlForm { as_printed, textbook };

// All tensor losses reduce to a 0-dim tensor: image terms average over every
// element, KL sums over latent dimensions and averages over the batch.

torch::Tensor kl_loss(const GaussianParams& g, KlForm form = KlForm::as_printed);
torch::Tensor delta_l1(const torch::Tensor& delta, const torch::Tensor& delta_hat);
/// Mean squared difference of normalised features, averaged over the taps.
torch::Tensor perceptual_l2(const torch::Tensor& x_a, const torch::Tensor& x_b,
                            const FeatureExtractor& v);

/// Unweighted components plus the weighted total
///   kl + l1 / sigma1 + perceptual / (2 sigma2^2).
struct PairwiseLoss {
  torch::Tensor total;
  torch::Tensor kl;
  torch::Tensor l1;
  torch::Tensor perceptual;
};

/// Reconstruction part only: l1 / sigma1 + perceptual / (2 sigma2^2), with the
/// perceptual term comparing apply_delta(x_prev, delta) to apply_delta(x_prev, delta_hat).
struct ReconstructionLoss {
  torch::Tensor weighted;
  torch::Tensor l1;
  torch::Tensor perceptual;
};
ReconstructionLoss reconstruction_loss(const torch::Tensor& delta, const torch::Tensor& delta_hat,
                                       const torch::Tensor& x_prev, const FeatureExtractor& v,
                                       const LossWeights& w);

PairwiseLoss pairwise_loss(const torch::Tensor& delta, const torch::Tensor& delta_hat,
                           const torch::Tensor& x_prev, const GaussianParams& g,
                           const FeatureExtractor& v, const LossWeights& w,
                           KlForm form = KlForm::as_printed);

/// fake - real; the critic minimises it, the generator minimises -fake.
double critic_wasserstein(double real_score_mean, double fake_score_mean);
torch::Tensor critic_wasserstein(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

using CriticFn = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& x_prev,
                                             const torch::Tensor& x_final)>;

struct GradientPenalty {
  torch::Tensor penalty;     // gp_weight * mean_b (|grad_b| - 1)^2
  torch::Tensor grad_norms;  // [B], detached
};

/// Penalty at x~ = u x_real + (1 - u) x_fake, u ~ U(0, 1) per batch element;
/// the gradient is taken with respect to x~ only. With `create_graph` the
/// penalty can itself be back-propagated into the critic parameters.
GradientPenalty gradient_penalty(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                                 const torch::Tensor& x_prev, const torch::Tensor& x_final,
                                 const CriticFn& critic, double gp_weight, torch::Generator& rng,
                                 bool create_graph = true);
GradientPenalty gradient_penalty(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                                 const torch::Tensor& x_prev, const torch::Tensor& x_final,
                                 const ModelParams& params, double gp_weight,
                                 torch::Generator& rng, bool create_graph = true);

// Value forms on domain types.
double kl_loss_value(const GaussianParams& g, KlForm form = KlForm::as_printed);
double delta_l1(const ChangeMap& delta, const ChangeMap& delta_hat);
double perceptual_l2(const Frame& x_a, const Frame& x_b, const FeatureExtractor& v);

struct PairwiseLossValue {
  double total = 0, kl = 0, l1 = 0, perceptual = 0;
};
PairwiseLossValue pairwise_loss(const ChangeMap& delta, const ChangeMap& delta_hat,
                                const Frame& x_prev, const GaussianParams& g,
                                const FeatureExtractor& v, const LossWeights& w,
                                KlForm form = KlForm::as_printed);
double gradient_penalty(const Frame& x_real, const Frame& x_fake, const Frame& x_prev,
                        const Frame& x_final, const ModelParams& params, const LossWeights& w,
                        torch::Generator& rng);

/// Line-oriented metrics log: "<step> <name> <value>" per line, values printed
/// with round-trip precision. Entries are also kept in memory.
class MetricsLog {
 public:
  struct Entry {
    int64_t step;
    std::string name;
    double value;
    bool operator==(const Entry&) const = default;
  };

  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path, bool append = false);

  void log(int64_t step, const std::string& name, double value);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry> entries_named(const std::string& name) const;
  void flush();

  static std::vector<Entry> read(const std::filesystem::path& path);

 private:
  std::ofstream out_;
  std::vector<Entry> entries_;
};

}  // namespace paintlapse
