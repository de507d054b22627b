#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace paintlapse {

/// Mixes a master seed with a stream index (splitmix64 finaliser). Used for
/// per-sample and per-worker streams so results do not depend on scheduling.
uint64_t derive_seed(uint64_t master, uint64_t index);

/// A fresh CPU generator seeded with `seed`.
torch::Generator make_rng(uint64_t seed);

/// Uniform integer in [0, n) drawn from `rng`.
int64_t uniform_index(torch::Generator& rng, int64_t n);
/// Uniform real in [0, 1).
double uniform_real(torch::Generator& rng);

}  // namespace paintlapse
