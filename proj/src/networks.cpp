#include "paintlapse/networks.hpp"

#include <cmath>

#include "paintlapse/json_keys.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kSlope));
}

torch::Tensor upsample_to(const torch::Tensor& x, const torch::Tensor& like) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{like.size(2), like.size(3)})
                               .mode(torch::kNearest));
}

void check_images(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  check_same_shape(a, b, what);
  if (a.dim() != 4 || a.size(1) != Frame::kChannels) {
    throw ShapeError(std::string(what) + ": expected [B, 3, H, W], got " + shape_string(a));
  }
}

torch::Tensor batched(const Frame& f) { return f.tensor().unsqueeze(0); }

}  // namespace

void ArchConfig::validate() const {
  if (height < FeatureExtractor::kMinSize || width < FeatureExtractor::kMinSize) {
    throw std::invalid_argument("ArchConfig: frames must be at least 8x8");
  }
  if (base_channels < 1 || critic_channels < 1) {
    throw std::invalid_argument("ArchConfig: channel counts must be positive");
  }
  if (latent_dim < 1) throw std::invalid_argument("ArchConfig: latent_dim must be >= 1");
  if (!(logvar_min < logvar_max)) throw std::invalid_argument("ArchConfig: empty logvar range");
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = nlohmann::json{{"height", a.height},
                     {"width", a.width},
                     {"base_channels", a.base_channels},
                     {"latent_dim", a.latent_dim},
                     {"critic_channels", a.critic_channels},
                     {"logvar_min", a.logvar_min},
                     {"logvar_max", a.logvar_max}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  check_keys(j, {"height", "width", "base_channels", "latent_dim", "critic_channels",
                 "logvar_min", "logvar_max"},
             "arch");
  read_key(j, "height", a.height);
  read_key(j, "width", a.width);
  read_key(j, "base_channels", a.base_channels);
  read_key(j, "latent_dim", a.latent_dim);
  read_key(j, "critic_channels", a.critic_channels);
  read_key(j, "logvar_min", a.logvar_min);
  read_key(j, "logvar_max", a.logvar_max);
}

ConvEncoderImpl::ConvEncoderImpl(int64_t in_channels, int64_t c) {
  conv0 = register_module("conv0", conv(in_channels, c, 3, 1, 1));
  conv1 = register_module("conv1", conv(c, 2 * c, 3, 2, 1));
  conv2 = register_module("conv2", conv(2 * c, 4 * c, 3, 2, 1));
  conv3 = register_module("conv3", conv(4 * c, 4 * c, 3, 2, 1));
}

std::vector<torch::Tensor> ConvEncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  out.reserve(4);
  out.push_back(lrelu(conv0->forward(x)));
  out.push_back(lrelu(conv1->forward(out.back())));
  out.push_back(lrelu(conv2->forward(out.back())));
  out.push_back(lrelu(conv3->forward(out.back())));
  return out;
}

GeneratorImpl::GeneratorImpl(int64_t c, int64_t latent_dim) : latent_dim_(latent_dim) {
  encoder = register_module("encoder", ConvEncoder(2 * Frame::kChannels, c));
  fuse = register_module("fuse", conv(4 * c + latent_dim, 4 * c, 3, 1, 1));
  up2 = register_module("up2", conv(8 * c, 2 * c, 3, 1, 1));
  up1 = register_module("up1", conv(4 * c, c, 3, 1, 1));
  up0 = register_module("up0", conv(2 * c, c, 3, 1, 1));
  head = register_module("head", conv(c, Frame::kChannels, 3, 1, 1));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& x_prev,
                                     const torch::Tensor& x_final) {
  check_images(x_prev, x_final, "generate_delta");
  if (z.dim() != 2 || z.size(0) != x_prev.size(0) || z.size(1) != latent_dim_) {
    throw ShapeError("generate_delta: latent has shape " + shape_string(z) + ", expected [" +
                     std::to_string(x_prev.size(0)) + "x" + std::to_string(latent_dim_) + "]");
  }
  auto skips = encoder->forward(torch::cat({x_prev, x_final}, 1));
  const auto& bottom = skips[3];
  auto zmap = z.view({z.size(0), latent_dim_, 1, 1}).expand({-1, -1, bottom.size(2), bottom.size(3)});
  auto h = lrelu(fuse->forward(torch::cat({bottom, zmap}, 1)));
  h = lrelu(up2->forward(torch::cat({upsample_to(h, skips[2]), skips[2]}, 1)));
  h = lrelu(up1->forward(torch::cat({upsample_to(h, skips[1]), skips[1]}, 1)));
  h = lrelu(up0->forward(torch::cat({upsample_to(h, skips[0]), skips[0]}, 1)));
  return torch::tanh(head->forward(h));
}

PosteriorEncoderImpl::PosteriorEncoderImpl(int64_t c, int64_t latent_dim, double logvar_min,
                                           double logvar_max)
    : latent_dim_(latent_dim), logvar_min_(logvar_min), logvar_max_(logvar_max) {
  encoder = register_module("encoder", ConvEncoder(3 * Frame::kChannels, c));
  to_stats = register_module("to_stats", nn::Linear(4 * c, 2 * latent_dim));
}

GaussianParams PosteriorEncoderImpl::forward(const torch::Tensor& delta,
                                             const torch::Tensor& x_prev,
                                             const torch::Tensor& x_final) {
  check_images(x_prev, x_final, "encode_posterior");
  check_same_shape(delta, x_prev, "encode_posterior");
  auto h = encoder->forward(torch::cat({delta, x_prev, x_final}, 1))[3];
  auto stats = to_stats->forward(h.mean({2, 3}));
  auto parts = stats.split(latent_dim_, 1);
  return {parts[0], parts[1].clamp(logvar_min_, logvar_max_)};
}

CriticImpl::CriticImpl(const CriticOptions& options) {
  if (options.normalization != CriticNormalization::none) {
    throw std::invalid_argument(
        "Critic: normalisation layers couple batch elements, so per-sample input gradients "
        "needed by the gradient penalty are undefined");
  }
  const int64_t c = options.channels;
  if (c < 1) throw std::invalid_argument("Critic: channels must be positive");
  conv0 = register_module("conv0", conv(3 * Frame::kChannels, c, 4, 2, 1));
  conv1 = register_module("conv1", conv(c, 2 * c, 4, 2, 1));
  conv2 = register_module("conv2", conv(2 * c, 4 * c, 4, 2, 1));
  head = register_module("head", conv(4 * c, 1, 3, 1, 1));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& x_t, const torch::Tensor& x_prev,
                                  const torch::Tensor& x_final) {
  check_images(x_t, x_prev, "critic_score");
  check_images(x_t, x_final, "critic_score");
  auto h = lrelu(conv0->forward(torch::cat({x_t, x_prev, x_final}, 1)));
  h = lrelu(conv1->forward(h));
  h = lrelu(conv2->forward(h));
  return head->forward(h).mean({1, 2, 3});
}

void init_parameters(nn::Module& module, torch::Generator& rng) {
  torch::NoGradGuard guard;
  for (auto& sub : module.modules(/*include_self=*/true)) {
    auto params = sub->named_parameters(/*recurse=*/false);
    // fan_in comes from the owning layer's weight (bias shares it).
    const torch::Tensor* weight = params.find("weight");
    for (auto& item : params) {
      auto& p = item.value();
      const auto& w = weight ? *weight : p;
      const int64_t fan_in = w.dim() > 1 ? w[0].numel() : w.numel();
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
      p.copy_(torch::rand(p.sizes(), rng, p.options()).mul_(2.0 * bound).sub_(bound));
    }
  }
}

ModelParams ModelParams::create(const ArchConfig& arch, uint64_t seed) {
  arch.validate();
  ModelParams m;
  m.arch = arch;
  m.seed = seed;
  m.generator = Generator(arch.base_channels, arch.latent_dim);
  m.posterior = PosteriorEncoder(arch.base_channels, arch.latent_dim, arch.logvar_min,
                                 arch.logvar_max);
  m.critic = Critic(CriticOptions{arch.critic_channels, CriticNormalization::none});
  auto rng = make_rng(seed);
  init_parameters(*m.generator, rng);
  init_parameters(*m.posterior, rng);
  init_parameters(*m.critic, rng);
  return m;
}

namespace {

void copy_into(nn::Module& dst, const nn::Module& src) {
  torch::NoGradGuard guard;
  auto s = src.named_parameters();
  for (auto& item : dst.named_parameters()) item.value().copy_(s[item.key()]);
}

template <typename M>
void write_module(Checkpoint& ck, const std::string& prefix, const M& module) {
  for (const auto& item : module->named_parameters()) {
    ck.tensors[prefix + item.key()] = item.value().detach().clone();
  }
}

template <typename M>
void read_module(const Checkpoint& ck, const std::string& prefix, M& module) {
  torch::NoGradGuard guard;
  for (auto& item : module->named_parameters()) {
    const auto& src = ck.tensor(prefix + item.key());
    if (src.sizes() != item.value().sizes()) {
      throw CheckpointError("parameter '" + prefix + item.key() + "' has shape " +
                            shape_string(src) + ", architecture expects " +
                            shape_string(item.value()));
    }
    item.value().copy_(src);
  }
}

}  // namespace

ModelParams ModelParams::clone() const {
  ModelParams m = create(arch, seed);
  m.to(generator->parameters().front().scalar_type());
  copy_into(*m.generator, *generator);
  copy_into(*m.posterior, *posterior);
  copy_into(*m.critic, *critic);
  return m;
}

void ModelParams::to(torch::ScalarType dtype) {
  generator->to(dtype);
  posterior->to(dtype);
  critic->to(dtype);
}

std::vector<torch::Tensor> ModelParams::generator_parameters() const {
  auto ps = generator->parameters();
  auto qs = posterior->parameters();
  ps.insert(ps.end(), qs.begin(), qs.end());
  return ps;
}

std::vector<torch::Tensor> ModelParams::critic_parameters() const { return critic->parameters(); }

int64_t ModelParams::parameter_count(bool include_critic) const {
  int64_t n = 0;
  for (const auto& p : generator_parameters()) n += p.numel();
  if (include_critic) {
    for (const auto& p : critic_parameters()) n += p.numel();
  }
  return n;
}

void ModelParams::write(Checkpoint& ck) const {
  ck.meta["model"] = {{"arch", arch}, {"seed", seed}};
  write_module(ck, "theta/", generator);
  write_module(ck, "phi/", posterior);
  write_module(ck, "psi/", critic);
}

ModelParams ModelParams::read(const Checkpoint& ck) {
  if (!ck.meta.contains("model")) throw CheckpointError("checkpoint holds no model");
  const auto& m = ck.meta.at("model");
  ModelParams p = create(m.at("arch").get<ArchConfig>(), m.at("seed").get<uint64_t>());
  p.to(ck.tensor("theta/head.weight").scalar_type());
  read_module(ck, "theta/", p.generator);
  read_module(ck, "phi/", p.posterior);
  read_module(ck, "psi/", p.critic);
  return p;
}

void ModelParams::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  write(ck);
  ck.save(path);
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  return read(Checkpoint::load(path));
}

torch::Tensor generate_delta(const torch::Tensor& z, const torch::Tensor& x_prev,
                             const torch::Tensor& x_final, const ModelParams& params) {
  auto g = params.generator;
  return g->forward(z, x_prev, x_final);
}

GaussianParams encode_posterior(const torch::Tensor& delta, const torch::Tensor& x_prev,
                                const torch::Tensor& x_final, const ModelParams& params) {
  auto q = params.posterior;
  return q->forward(delta, x_prev, x_final);
}

torch::Tensor critic_score(const torch::Tensor& x_t, const torch::Tensor& x_prev,
                           const torch::Tensor& x_final, const ModelParams& params) {
  auto d = params.critic;
  return d->forward(x_t, x_prev, x_final);
}

torch::Tensor reparameterize(const GaussianParams& g, torch::Generator& rng) {
  check_same_shape(g.mu, g.logvar, "reparameterize");
  auto noise = torch::randn(g.mu.sizes(), rng, g.mu.options().requires_grad(false));
  return g.mu + torch::exp(0.5 * g.logvar) * noise;
}

torch::Tensor sample_prior(int64_t latent_dim, torch::Generator& rng) {
  if (latent_dim < 1) throw std::invalid_argument("sample_prior: latent_dim must be >= 1");
  return torch::randn({latent_dim}, rng, torch::kFloat32);
}

torch::Tensor sample_prior(int64_t batch, int64_t latent_dim, torch::Generator& rng) {
  if (latent_dim < 1) throw std::invalid_argument("sample_prior: latent_dim must be >= 1");
  if (batch < 1) throw std::invalid_argument("sample_prior: batch must be >= 1");
  return torch::randn({batch, latent_dim}, rng, torch::kFloat32);
}

ChangeMap generate_delta(const torch::Tensor& z, const Frame& x_prev, const Frame& x_final,
                         const ModelParams& params) {
  torch::NoGradGuard guard;
  check_same_shape(x_prev.tensor(), x_final.tensor(), "generate_delta");
  if (z.dim() != 1 || z.size(0) != params.arch.latent_dim) {
    throw ShapeError("generate_delta: latent has shape " + shape_string(z) + ", expected [" +
                     std::to_string(params.arch.latent_dim) + "]");
  }
  auto out = generate_delta(z.unsqueeze(0).to(torch::kFloat32), batched(x_prev), batched(x_final),
                            params);
  return ChangeMap(out.squeeze(0));
}

GaussianParams encode_posterior(const ChangeMap& delta, const Frame& x_prev, const Frame& x_final,
                                const ModelParams& params) {
  torch::NoGradGuard guard;
  auto g = encode_posterior(delta.tensor().unsqueeze(0), batched(x_prev), batched(x_final), params);
  return {g.mu.squeeze(0), g.logvar.squeeze(0)};
}

double critic_score(const Frame& x_t, const Frame& x_prev, const Frame& x_final,
                    const ModelParams& params) {
  torch::NoGradGuard guard;
  return critic_score(batched(x_t), batched(x_prev), batched(x_final), params).item<double>();
}

FeatureExtractor FeatureExtractor::seeded(uint64_t seed) {
  FeatureExtractor v;
  v.mode_ = Mode::seeded_random;
  v.seed_ = seed;
  auto rng = make_rng(seed);
  const std::vector<std::pair<int64_t, int64_t>> widths{{3, 16}, {16, 32}, {32, 64}};
  for (auto [in, out] : widths) {
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    v.weights_.push_back(torch::randn({out, in, 3, 3}, rng, torch::kFloat32).mul_(std));
    v.biases_.push_back(torch::zeros({out}, torch::kFloat32));
  }
  return v;
}

FeatureExtractor FeatureExtractor::read(const Checkpoint& ck, const std::string& prefix) {
  FeatureExtractor v;
  v.mode_ = Mode::pretrained;
  const auto key = prefix + "feature_extractor";
  if (ck.meta.contains(key)) {
    const auto& m = ck.meta.at(key);
    v.seed_ = m.value("seed", uint64_t{0});
    if (m.value("mode", std::string("pretrained")) == "seeded_random") v.mode_ = Mode::seeded_random;
  }
  int64_t in = Frame::kChannels;
  for (int i = 0; i < 3; ++i) {
    const std::string name = prefix + "conv" + std::to_string(i);
    auto w = ck.tensor(name + ".weight").to(torch::kFloat32);
    auto b = ck.tensor(name + ".bias").to(torch::kFloat32);
    if (w.dim() != 4 || w.size(1) != in || w.size(2) != 3 || w.size(3) != 3 ||
        b.dim() != 1 || b.size(0) != w.size(0)) {
      throw CheckpointError("feature weights '" + name + "' have unexpected shape " +
                            shape_string(w));
    }
    in = w.size(0);
    v.weights_.push_back(w);
    v.biases_.push_back(b);
  }
  return v;
}

FeatureExtractor FeatureExtractor::pretrained(const std::filesystem::path& path) {
  auto v = read(Checkpoint::load(path));
  v.mode_ = Mode::pretrained;
  return v;
}

void FeatureExtractor::write(Checkpoint& ck, const std::string& prefix) const {
  ck.meta[prefix + "feature_extractor"] = {
      {"seed", seed_}, {"mode", mode_ == Mode::seeded_random ? "seeded_random" : "pretrained"}};
  for (size_t i = 0; i < weights_.size(); ++i) {
    ck.tensors[prefix + "conv" + std::to_string(i) + ".weight"] = weights_[i];
    ck.tensors[prefix + "conv" + std::to_string(i) + ".bias"] = biases_[i];
  }
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  write(ck);
  ck.save(path);
}

torch::Tensor normalize_channels(const torch::Tensor& features) {
  return F::normalize(features, F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

std::vector<torch::Tensor> FeatureExtractor::features(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != Frame::kChannels) {
    throw ShapeError("extract_features: expected [B, 3, H, W], got " + shape_string(x));
  }
  if (x.size(2) < kMinSize || x.size(3) < kMinSize) {
    throw ShapeError("extract_features: input " + shape_string(x) +
                     " is smaller than the minimum 8x8");
  }
  std::vector<torch::Tensor> taps;
  auto h = x * 2.0 - 1.0;
  for (size_t i = 0; i < weights_.size(); ++i) {
    if (i > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    const auto w = weights_[i].to(x.scalar_type());
    const auto b = biases_[i].to(x.scalar_type());
    h = torch::relu(F::conv2d(h, w, F::Conv2dFuncOptions().bias(b).padding(1)));
    taps.push_back(normalize_channels(h));
  }
  return taps;
}

std::vector<torch::Tensor> extract_features(const Frame& x, const FeatureExtractor& v) {
  torch::NoGradGuard guard;
  auto taps = v.features(x.tensor().unsqueeze(0));
  for (auto& t : taps) t = t.squeeze(0);
  return taps;
}

}  // namespace paintlapse
