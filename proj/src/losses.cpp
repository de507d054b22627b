#include "paintlapse/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace paintlapse {

void LossWeights::validate() const {
  if (!(sigma1 > 0) || !(sigma2 > 0) || !(gp_weight > 0)) {
    throw std::invalid_argument("LossWeights: sigma1, sigma2 and gp_weight must be positive");
  }
}

torch::Tensor kl_loss(const GaussianParams& g, KlForm form) {
  check_same_shape(g.mu, g.logvar, "kl_loss");
  auto per_dim = 0.5 * (-g.logvar + torch::exp(g.logvar) + g.mu.pow(2));
  if (form == KlForm::textbook) per_dim = per_dim - 0.5;
  auto per_sample = per_dim.sum(-1);
  return per_sample.dim() == 0 ? per_sample : per_sample.mean();
}

torch::Tensor delta_l1(const torch::Tensor& delta, const torch::Tensor& delta_hat) {
  check_same_shape(delta, delta_hat, "delta_l1");
  return (delta - delta_hat).abs().mean();
}

torch::Tensor perceptual_l2(const torch::Tensor& x_a, const torch::Tensor& x_b,
                            const FeatureExtractor& v) {
  check_same_shape(x_a, x_b, "perceptual_l2");
  auto a = x_a.dim() == 3 ? x_a.unsqueeze(0) : x_a;
  auto b = x_b.dim() == 3 ? x_b.unsqueeze(0) : x_b;
  const auto fa = v.features(a);
  const auto fb = v.features(b);
  auto total = torch::zeros({}, x_a.options());
  for (size_t i = 0; i < fa.size(); ++i) total = total + (fa[i] - fb[i]).pow(2).mean();
  return total / static_cast<double>(fa.size());
}

ReconstructionLoss reconstruction_loss(const torch::Tensor& delta, const torch::Tensor& delta_hat,
                                       const torch::Tensor& x_prev, const FeatureExtractor& v,
                                       const LossWeights& w) {
  ReconstructionLoss r;
  r.l1 = delta_l1(delta, delta_hat);
  r.perceptual = perceptual_l2(apply_delta(x_prev, delta), apply_delta(x_prev, delta_hat), v);
  r.weighted = r.l1 / w.sigma1 + r.perceptual / (2.0 * w.sigma2 * w.sigma2);
  return r;
}

PairwiseLoss pairwise_loss(const torch::Tensor& delta, const torch::Tensor& delta_hat,
                           const torch::Tensor& x_prev, const GaussianParams& g,
                           const FeatureExtractor& v, const LossWeights& w, KlForm form) {
  auto rec = reconstruction_loss(delta, delta_hat, x_prev, v, w);
  PairwiseLoss out;
  out.kl = kl_loss(g, form);
  out.l1 = rec.l1;
  out.perceptual = rec.perceptual;
  out.total = out.kl + rec.weighted;
  return out;
}

double critic_wasserstein(double real_score_mean, double fake_score_mean) {
  return fake_score_mean - real_score_mean;
}

torch::Tensor critic_wasserstein(const torch::Tensor& real_scores,
                                 const torch::Tensor& fake_scores) {
  return fake_scores.mean() - real_scores.mean();
}

GradientPenalty gradient_penalty(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                                 const torch::Tensor& x_prev, const torch::Tensor& x_final,
                                 const CriticFn& critic, double gp_weight, torch::Generator& rng,
                                 bool create_graph) {
  check_same_shape(x_real, x_fake, "gradient_penalty");
  check_same_shape(x_real, x_prev, "gradient_penalty");
  check_same_shape(x_real, x_final, "gradient_penalty");
  const int64_t batch = x_real.size(0);
  std::vector<int64_t> ushape(x_real.dim(), 1);
  ushape[0] = batch;
  auto u = torch::rand(ushape, rng, x_real.options().requires_grad(false));
  auto mixed = (u * x_real.detach() + (1.0 - u) * x_fake.detach()).requires_grad_(true);

  auto scores = critic(mixed, x_prev.detach(), x_final.detach());
  torch::Tensor grad;
  if (scores.requires_grad()) {
    grad = torch::autograd::grad({scores.sum()}, {mixed}, /*grad_outputs=*/{},
                                 /*retain_graph=*/create_graph, create_graph,
                                 /*allow_unused=*/true)[0];
  }
  // A critic that ignores its input has zero gradient.
  if (!grad.defined()) grad = torch::zeros_like(mixed);
  auto norms = grad.reshape({batch, -1}).norm(2, 1);
  GradientPenalty gp;
  gp.penalty = gp_weight * (norms - 1.0).pow(2).mean();
  gp.grad_norms = norms.detach();
  return gp;
}

GradientPenalty gradient_penalty(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                                 const torch::Tensor& x_prev, const torch::Tensor& x_final,
                                 const ModelParams& params, double gp_weight,
                                 torch::Generator& rng, bool create_graph) {
  CriticFn fn = [&params](const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& c) {
    return critic_score(a, b, c, params);
  };
  return gradient_penalty(x_real, x_fake, x_prev, x_final, fn, gp_weight, rng, create_graph);
}

double kl_loss_value(const GaussianParams& g, KlForm form) {
  torch::NoGradGuard guard;
  return kl_loss(g, form).item<double>();
}

double delta_l1(const ChangeMap& delta, const ChangeMap& delta_hat) {
  torch::NoGradGuard guard;
  return delta_l1(delta.tensor(), delta_hat.tensor()).item<double>();
}

double perceptual_l2(const Frame& x_a, const Frame& x_b, const FeatureExtractor& v) {
  torch::NoGradGuard guard;
  return perceptual_l2(x_a.tensor(), x_b.tensor(), v).item<double>();
}

PairwiseLossValue pairwise_loss(const ChangeMap& delta, const ChangeMap& delta_hat,
                                const Frame& x_prev, const GaussianParams& g,
                                const FeatureExtractor& v, const LossWeights& w, KlForm form) {
  torch::NoGradGuard guard;
  auto l = pairwise_loss(delta.tensor().unsqueeze(0), delta_hat.tensor().unsqueeze(0),
                         x_prev.tensor().unsqueeze(0), g, v, w, form);
  return {l.total.item<double>(), l.kl.item<double>(), l.l1.item<double>(),
          l.perceptual.item<double>()};
}

double gradient_penalty(const Frame& x_real, const Frame& x_fake, const Frame& x_prev,
                        const Frame& x_final, const ModelParams& params, const LossWeights& w,
                        torch::Generator& rng) {
  auto gp = gradient_penalty(x_real.tensor().unsqueeze(0), x_fake.tensor().unsqueeze(0),
                             x_prev.tensor().unsqueeze(0), x_final.tensor().unsqueeze(0), params,
                             w.gp_weight, rng, /*create_graph=*/false);
  return gp.penalty.item<double>();
}

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open metrics log '" + path.string() + "'");
}

void MetricsLog::log(int64_t step, const std::string& name, double value) {
  entries_.push_back({step, name, value});
  if (out_.is_open()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out_ << step << ' ' << name << ' ' << buf << '\n';
  }
}

std::vector<MetricsLog::Entry> MetricsLog::entries_named(const std::string& name) const {
  std::vector<Entry> out;
  for (const auto& e : entries_) {
    if (e.name == name) out.push_back(e);
  }
  return out;
}

void MetricsLog::flush() {
  if (out_.is_open()) out_.flush();
}

std::vector<MetricsLog::Entry> MetricsLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics log '" + path.string() + "'");
  std::vector<Entry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    Entry e{};
    std::string value;
    if (!(is >> e.step >> e.name >> value)) {
      throw std::runtime_error("malformed metrics line: '" + line + "'");
    }
    e.value = std::stod(value);
    out.push_back(e);
  }
  return out;
}

}  // namespace paintlapse
