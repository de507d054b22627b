#include "paintlapse/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace paintlapse {

uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

torch::Generator make_rng(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

int64_t uniform_index(torch::Generator& rng, int64_t n) {
  if (n <= 0) throw std::invalid_argument("uniform_index: empty range");
  return torch::randint(n, {1}, rng, torch::kLong).item<int64_t>();
}

double uniform_real(torch::Generator& rng) {
  return torch::rand({1}, rng, torch::kFloat64).item<double>();
}

}  // namespace paintlapse
