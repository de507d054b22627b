#pragma once

#include <cstdint>
#include <vector>

#include "paintlapse/frame.hpp"
#include "paintlapse/networks.hpp"

namespace paintlapse {

struct SynthesisRequest {
  Frame x_final;
  int64_t steps = 40;
  uint64_t seed = 0;
};

/// Blank canvas followed by `steps` generated frames (steps + 1 in total).
/// Each step draws its latent code from the prior; the posterior encoder is
/// never consulted. The result depends only on (params, request).
std::vector<Frame> synthesize_video(const SynthesisRequest& request, const ModelParams& params);

/// `count` independent videos; sample i uses derive_seed(request.seed, i).
std::vector<std::vector<Frame>> synthesize_many(const SynthesisRequest& request, int64_t count,
                                                const ModelParams& params);

}  // namespace paintlapse
