#include "paintlapse/inference.hpp"

#include "paintlapse/rng.hpp"

namespace paintlapse {

std::vector<Frame> synthesize_video(const SynthesisRequest& request, const ModelParams& params) {
  if (request.steps < 1) throw std::invalid_argument("synthesize_video: steps must be >= 1");
  if (request.x_final.empty()) throw std::invalid_argument("synthesize_video: empty final frame");
  if (request.x_final.height() != params.arch.height ||
      request.x_final.width() != params.arch.width) {
    throw ShapeError("synthesize_video: final frame " + shape_string(request.x_final.tensor()) +
                     " does not match the model's " + std::to_string(params.arch.height) + "x" +
                     std::to_string(params.arch.width));
  }
  torch::NoGradGuard guard;
  auto rng = make_rng(request.seed);
  const auto dtype = params.generator->parameters().front().scalar_type();
  const auto x_final = request.x_final.tensor().to(dtype).unsqueeze(0);
  auto x = torch::ones_like(x_final);
  std::vector<Frame> out{Frame::blank(params.arch.height, params.arch.width)};
  out.reserve(static_cast<size_t>(request.steps + 1));
  for (int64_t t = 0; t < request.steps; ++t) {
    const auto z = sample_prior(1, params.arch.latent_dim, rng).to(dtype);
    x = apply_delta(x, generate_delta(z, x, x_final, params));
    out.emplace_back(x.squeeze(0).to(torch::kFloat32));
  }
  return out;
}

std::vector<std::vector<Frame>> synthesize_many(const SynthesisRequest& request, int64_t count,
                                                const ModelParams& params) {
  std::vector<std::vector<Frame>> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(count, 0)));
  for (int64_t i = 0; i < count; ++i) {
    SynthesisRequest r = request;
    r.seed = derive_seed(request.seed, static_cast<uint64_t>(i));
    out.push_back(synthesize_video(r, params));
  }
  return out;
}

}  // namespace paintlapse
