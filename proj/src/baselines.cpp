#include "paintlapse/baselines.hpp"

#include <cmath>

#include "paintlapse/json_keys.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

PaintingVideo interp_video(const Frame& x_final, int64_t steps) {
  if (steps < 1) throw std::invalid_argument("interp_video: steps must be >= 1");
  const auto target = x_final.tensor().to(torch::kFloat64);
  std::vector<Frame> frames;
  frames.reserve(static_cast<size_t>(steps + 1));
  for (int64_t t = 0; t <= steps; ++t) {
    const double a = static_cast<double>(t) / static_cast<double>(steps);
    frames.emplace_back(1.0 + a * (target - 1.0));
  }
  return PaintingVideo("interp", Medium::synthetic, std::move(frames), std::nullopt, true);
}

namespace {

nn::Conv2d conv3(int64_t in, int64_t out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(1).padding(1));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor up_cat(const torch::Tensor& h, const torch::Tensor& skip) {
  auto up = F::interpolate(h, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                  .mode(torch::kNearest));
  return torch::cat({up, skip}, 1);
}

}  // namespace

UnetVideoImpl::UnetVideoImpl(int64_t c, int64_t frames) : frames_(frames) {
  encoder = register_module("encoder", ConvEncoder(Frame::kChannels, c));
  up2 = register_module("up2", conv3(8 * c, 2 * c));
  up1 = register_module("up1", conv3(4 * c, 2 * c));
  up0 = register_module("up0", conv3(3 * c, 2 * c));
  head = register_module("head", conv3(2 * c, frames * Frame::kChannels));
}

torch::Tensor UnetVideoImpl::forward(const torch::Tensor& x_final) {
  if (x_final.dim() != 4 || x_final.size(1) != Frame::kChannels) {
    throw ShapeError("unet: expected [B, 3, H, W], got " + shape_string(x_final));
  }
  auto skips = encoder->forward(x_final);
  auto h = lrelu(up2->forward(up_cat(skips[3], skips[2])));
  h = lrelu(up1->forward(up_cat(h, skips[1])));
  h = lrelu(up0->forward(up_cat(h, skips[0])));
  auto out = 0.5 * (torch::tanh(head->forward(h)) + 1.0);
  return out.view({x_final.size(0), frames_, Frame::kChannels, x_final.size(2), x_final.size(3)});
}

void UnetTrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("UnetTrainConfig: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("UnetTrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("UnetTrainConfig: learning_rate must be > 0");
}

void to_json(nlohmann::json& j, const UnetTrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, UnetTrainConfig& c) {
  check_keys(j, {"steps", "batch_size", "learning_rate", "seed"}, "unet");
  read_key(j, "steps", c.steps);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "seed", c.seed);
}

int64_t unet_parameter_count(int64_t c, int64_t frames) {
  const auto conv_params = [](int64_t in, int64_t out) { return in * out * 9 + out; };
  const int64_t encoder = conv_params(3, c) + conv_params(c, 2 * c) + conv_params(2 * c, 4 * c) +
                          conv_params(4 * c, 4 * c);
  return encoder + conv_params(8 * c, 2 * c) + conv_params(4 * c, 2 * c) +
         conv_params(3 * c, 2 * c) + conv_params(2 * c, frames * Frame::kChannels);
}

UnetBaselineParams UnetBaselineParams::create(int64_t height, int64_t width,
                                              int64_t reference_count, uint64_t seed) {
  int64_t best = 1;
  for (int64_t c = 1; c <= 512; ++c) {
    if (std::llabs(unet_parameter_count(c) - reference_count) <
        std::llabs(unet_parameter_count(best) - reference_count)) {
      best = c;
    }
  }
  const auto count = unet_parameter_count(best);
  const double ratio = static_cast<double>(count) / static_cast<double>(reference_count);
  if (ratio < 0.8 || ratio > 1.2) {
    throw std::invalid_argument("unet: no width gives a parameter count within 20% of " +
                                std::to_string(reference_count) + " (closest " +
                                std::to_string(count) + ")");
  }
  UnetBaselineParams p;
  p.height = height;
  p.width = width;
  p.base_channels = best;
  p.net = UnetVideo(best, kFrames);
  auto rng = make_rng(seed);
  init_parameters(*p.net, rng);
  return p;
}

int64_t UnetBaselineParams::parameter_count() const {
  int64_t n = 0;
  for (const auto& t : net->parameters()) n += t.numel();
  return n;
}

void UnetBaselineParams::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.meta["kind"] = "unet_baseline";
  ck.meta["unet"] = {{"height", height}, {"width", width}, {"base_channels", base_channels},
                     {"frames", kFrames}};
  for (const auto& item : net->named_parameters()) {
    ck.tensors["unet/" + item.key()] = item.value().detach().clone();
  }
  ck.save(path);
}

UnetBaselineParams UnetBaselineParams::load(const std::filesystem::path& path) {
  const auto ck = Checkpoint::load(path);
  if (ck.meta.value("kind", std::string()) != "unet_baseline") {
    throw CheckpointError(path.string() + " is not a unet baseline checkpoint");
  }
  const auto& m = ck.meta.at("unet");
  UnetBaselineParams p;
  p.height = m.at("height");
  p.width = m.at("width");
  p.base_channels = m.at("base_channels");
  p.net = UnetVideo(p.base_channels, kFrames);
  torch::NoGradGuard guard;
  for (auto& item : p.net->named_parameters()) {
    const auto& src = ck.tensor("unet/" + item.key());
    if (src.sizes() != item.value().sizes()) {
      throw CheckpointError("unet parameter '" + item.key() + "' has shape " + shape_string(src));
    }
    item.value().copy_(src);
  }
  return p;
}

torch::Tensor unet_loss(const UnetBaselineParams& params, const torch::Tensor& x_final,
                        const torch::Tensor& target, const FeatureExtractor& features,
                        const LossWeights& weights) {
  auto net = params.net;
  const auto pred = net->forward(x_final);
  check_same_shape(pred, target, "unet_loss");
  const auto frames = pred.size(1);
  const auto flat_pred = pred.flatten(0, 1);
  const auto flat_target = target.flatten(0, 1);
  // Per-frame means, summed over the frames.
  const auto l1 = (flat_pred - flat_target).abs().mean() * static_cast<double>(frames);
  const auto perc = perceptual_l2(flat_pred, flat_target, features) * static_cast<double>(frames);
  return l1 / weights.sigma1 + perc / (2.0 * weights.sigma2 * weights.sigma2);
}

UnetBaselineParams unet_train(const TrainingData& data, const UnetTrainConfig& cfg,
                              const ArchConfig& model_arch, const FeatureExtractor& features,
                              const LossWeights& weights, MetricsLog* log) {
  cfg.validate();
  const auto reference = ModelParams::create(model_arch, 0).parameter_count(false);
  auto params = UnetBaselineParams::create(model_arch.height, model_arch.width, reference,
                                           derive_seed(cfg.seed, 0));
  auto rng = make_rng(derive_seed(cfg.seed, 1));
  torch::optim::Adam opt(params.net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const auto batch =
        sample_sequence_batch(data, UnetBaselineParams::kFrames, cfg.batch_size, rng);
    const auto target = torch::stack(batch.frames, 1);
    const auto loss = unet_loss(params, batch.x_final, target, features, weights);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      const auto path = std::filesystem::temp_directory_path() /
                        ("unet_abort_step_" + std::to_string(step) + ".ckpt");
      params.save(path);
      throw TrainingAborted("non-finite unet loss at step " + std::to_string(step) +
                                "; snapshot written to " + path.string(),
                            path);
    }
    if (log) log->log(step, "unet_loss", value);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  return params;
}

PaintingVideo unet_predict(const Frame& x_final, const UnetBaselineParams& params) {
  if (x_final.height() != params.height || x_final.width() != params.width) {
    throw ShapeError("unet_predict: input " + shape_string(x_final.tensor()) + " but the model is " +
                     std::to_string(params.height) + "x" + std::to_string(params.width));
  }
  torch::NoGradGuard guard;
  auto net = params.net;
  const auto dtype = net->parameters().front().scalar_type();
  const auto pred = net->forward(x_final.tensor().to(dtype).unsqueeze(0)).squeeze(0);
  std::vector<Frame> frames{Frame::blank(params.height, params.width)};
  for (int64_t t = 0; t < pred.size(0); ++t) frames.emplace_back(pred[t].to(torch::kFloat32));
  return PaintingVideo("unet", Medium::synthetic, std::move(frames), std::nullopt, true);
}

}  // namespace paintlapse
