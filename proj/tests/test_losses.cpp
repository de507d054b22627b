#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "paintlapse/losses.hpp"

using namespace paintlapse;
using paintlapse::test::TempDir;

namespace {

constexpr double kExact = 1e-9;
constexpr double kGradTol = 1e-3;
constexpr int kInstances = 30;

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

GaussianParams gaussian(std::vector<double> mu, std::vector<double> logvar) {
  return {torch::tensor(mu, f64()), torch::tensor(logvar, f64())};
}

FeatureExtractor feature_extractor() { return FeatureExtractor::seeded(7); }

// Inputs kept away from the clamp and L1 kinks.
torch::Tensor random_image(torch::Generator& rng) {
  return 0.25 + 0.5 * torch::rand({1, 3, 8, 8}, rng, f64());
}
torch::Tensor random_change(torch::Generator& rng) {
  return 0.4 * torch::rand({1, 3, 8, 8}, rng, f64()) - 0.2;
}

// Two-layer critic on x_t with parameters packed in one vector, so the
// penalty can be differentiated with respect to them.
constexpr int64_t kHidden = 4;
constexpr int64_t kInputs = 3 * 8 * 8;
torch::Tensor small_critic(const torch::Tensor& packed, const torch::Tensor& x_t) {
  auto w1 = packed.narrow(0, 0, kHidden * kInputs).view({kHidden, kInputs});
  auto w2 = packed.narrow(0, kHidden * kInputs, kHidden);
  auto h = torch::tanh(torch::matmul(x_t.reshape({x_t.size(0), -1}), w1.t()));
  return torch::matmul(h, w2);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("kl examples") {
    CHECK(std::abs(kl_loss_value(gaussian({0, 0}, {0, 0})) - 1.0) < kExact);
    CHECK(std::abs(kl_loss_value(gaussian({1, 0}, {0, 0})) - 1.5) < kExact);
    CHECK(std::abs(kl_loss_value(gaussian({0}, {1})) - 0.5 * (std::exp(1.0) - 1.0)) < kExact);
    CHECK(std::abs(kl_loss_value(gaussian({0, 0}, {0, 0}), KlForm::textbook)) < kExact);
  }

  TEST_CASE("kl forms differ by a constant") {
    auto rng = make_rng(3);
    for (int i = 0; i < 5; ++i) {
      GaussianParams g{torch::randn({4, 6}, rng, f64()), torch::randn({4, 6}, rng, f64())};
      CHECK(std::abs(kl_loss_value(g) - kl_loss_value(g, KlForm::textbook) - 3.0) < kExact);
    }
  }

  TEST_CASE("delta_l1 examples") {
    const auto zero = ChangeMap::zeros(5, 5);
    const ChangeMap half(torch::full({3, 5, 5}, 0.5));
    CHECK(delta_l1(zero, zero) == 0.0);
    CHECK(std::abs(delta_l1(zero, half) - 0.5) < kExact);
    auto rng = make_rng(4);
    const ChangeMap a(torch::rand({3, 6, 6}, rng) - 0.5);
    const ChangeMap b(torch::rand({3, 6, 6}, rng) - 0.5);
    CHECK(delta_l1(a, b) == delta_l1(b, a));
  }

  TEST_CASE("perceptual identity and symmetry") {
    const auto v = feature_extractor();
    const auto a = test::random_frame(16, 16, 1);
    const auto b = test::random_frame(16, 16, 2);
    CHECK(perceptual_l2(a, a, v) == 0.0);
    CHECK(perceptual_l2(a, b, v) == perceptual_l2(b, a, v));
    CHECK(perceptual_l2(a, b, v) > 0.0);
  }

  TEST_CASE("perceptual reference pair matches the loop implementation") {
    const auto v = feature_extractor();
    const oracle::LoopPerceptual loops(v);
    const auto white = Frame::blank(50, 50);
    const Frame gray(torch::full({3, 50, 50}, 0.5f));
    const double expected = loops.distance(white, gray);
    CHECK(expected > 0.0);
    const double as_double =
        perceptual_l2(white.tensor().to(torch::kFloat64), gray.tensor().to(torch::kFloat64), v)
            .item<double>();
    CHECK(std::abs(as_double - expected) < kExact);
    CHECK(std::abs(perceptual_l2(white, gray, v) - expected) < 1e-5);
  }

  TEST_CASE("perceptual random pairs match the loop implementation") {
    const auto v = feature_extractor();
    const oracle::LoopPerceptual loops(v);
    for (uint64_t s = 0; s < 5; ++s) {
      const auto a = test::random_frame(12, 17, 10 + s);
      const auto b = test::random_frame(12, 17, 20 + s);
      const double got =
          perceptual_l2(a.tensor().to(torch::kFloat64), b.tensor().to(torch::kFloat64), v)
              .item<double>();
      CHECK(std::abs(got - loops.distance(a, b)) < kExact);
    }
  }

  TEST_CASE("pairwise loss with exact reconstruction is the kl term") {
    const auto v = feature_extractor();
    LossWeights w;
    const auto delta = ChangeMap(torch::rand({3, 8, 8}) - 0.5);
    const auto x_prev = Frame(torch::full({3, 8, 8}, 0.5f));
    const GaussianParams g{torch::zeros({1, 32}, f64()), torch::zeros({1, 32}, f64())};
    const auto l = pairwise_loss(delta, delta, x_prev, g, v, w);
    CHECK(std::abs(l.total - 16.0) < kExact);
    CHECK(std::abs(l.kl - 16.0) < kExact);
    CHECK(l.l1 == 0.0);
    CHECK(l.perceptual == 0.0);
  }

  TEST_CASE("pairwise components recombine and scale with sigma1") {
    const auto v = feature_extractor();
    auto rng = make_rng(5);
    for (int i = 0; i < 10; ++i) {
      const auto delta = random_change(rng);
      const auto delta_hat = random_change(rng);
      const auto x_prev = random_image(rng);
      GaussianParams g{torch::randn({1, 8}, rng, f64()), torch::randn({1, 8}, rng, f64())};
      LossWeights w;
      const auto l = pairwise_loss(delta, delta_hat, x_prev, g, v, w);
      const double kl = l.kl.item<double>(), l1 = l.l1.item<double>(),
                   perc = l.perceptual.item<double>();
      CHECK(std::abs(l.total.item<double>() - (kl + l1 / 0.01 + perc / (2 * 0.01))) < kExact);

      LossWeights doubled = w;
      doubled.sigma1 = 2 * w.sigma1;
      const auto l2 = pairwise_loss(delta, delta_hat, x_prev, g, v, doubled);
      const double contrib = l.total.item<double>() - kl - perc / (2 * 0.01);
      const double contrib2 = l2.total.item<double>() - kl - perc / (2 * 0.01);
      CHECK(std::abs(contrib2 - 0.5 * contrib) < kExact * std::max(1.0, contrib));
    }
  }

  TEST_CASE("critic wasserstein examples") {
    CHECK(critic_wasserstein(0.7, 0.7) == 0.0);
    CHECK(std::abs(critic_wasserstein(0.5, 2.0) - 1.5) < kExact);
    CHECK(critic_wasserstein(0.5, 2.0) == -critic_wasserstein(2.0, 0.5));
    const auto real = torch::tensor({0.25, 0.75}, f64());
    const auto fake = torch::tensor({1.5, 2.5}, f64());
    CHECK(std::abs(critic_wasserstein(real, fake).item<double>() - 1.5) < kExact);
  }

  TEST_CASE("gradient penalty of a unit-norm linear critic is zero") {
    auto rng = make_rng(6);
    auto dir = torch::randn({3, 8, 8}, rng, f64());
    dir = dir / dir.norm();
    CriticFn linear = [dir](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) {
      return (x * dir).sum({1, 2, 3});
    };
    const auto real = torch::rand({4, 3, 8, 8}, rng, f64());
    const auto fake = torch::rand({4, 3, 8, 8}, rng, f64());
    const auto gp = gradient_penalty(real, fake, fake, real, linear, 10.0, rng);
    CHECK(std::abs(gp.penalty.item<double>()) < kExact);
  }

  TEST_CASE("gradient penalty of a constant critic is the weight") {
    auto rng = make_rng(7);
    CriticFn constant = [](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) {
      return torch::full({x.size(0)}, 3.0, x.options());
    };
    const auto real = torch::rand({4, 3, 8, 8}, rng, f64());
    const auto fake = torch::rand({4, 3, 8, 8}, rng, f64());
    const auto gp = gradient_penalty(real, fake, fake, real, constant, 10.0, rng);
    CHECK(std::abs(gp.penalty.item<double>() - 10.0) < kExact);
  }

  TEST_CASE("gradient penalty is non-negative") {
    ArchConfig arch;
    arch.height = arch.width = 16;
    arch.base_channels = arch.critic_channels = 4;
    arch.latent_dim = 8;
    for (uint64_t s = 0; s < 10; ++s) {
      const auto params = ModelParams::create(arch, s);
      auto rng = make_rng(s);
      const double gp = gradient_penalty(test::random_frame(16, 16, s), test::random_frame(16, 16, s + 50),
                                         test::random_frame(16, 16, s + 100),
                                         test::random_frame(16, 16, s + 150), params, LossWeights{}, rng);
      CHECK(gp >= 0.0);
      CHECK(std::isfinite(gp));
    }
  }

  TEST_CASE("loss gradients match finite differences") {
    const auto v = feature_extractor();
    const LossWeights w;
    auto rng = make_rng(8);
    double worst_kl = 0, worst_l1 = 0, worst_perc = 0, worst_pair = 0, worst_w = 0, worst_gp = 0;
    for (int i = 0; i < kInstances; ++i) {
      const auto target = random_change(rng);
      const auto x_prev = random_image(rng);
      const auto other = random_image(rng);

      const auto kl_x = torch::randn({2 * 8}, rng, f64());
      worst_kl = std::max(worst_kl, oracle::gradient_check(
                                        [](const torch::Tensor& x) {
                                          return kl_loss({x.narrow(0, 0, 8), x.narrow(0, 8, 8)});
                                        },
                                        kl_x));

      worst_l1 = std::max(worst_l1, oracle::gradient_check(
                                        [&](const torch::Tensor& x) { return delta_l1(target, x); },
                                        random_change(rng)));

      worst_perc = std::max(worst_perc, oracle::gradient_check(
                                            [&](const torch::Tensor& x) {
                                              return perceptual_l2(x, other, v);
                                            },
                                            random_image(rng)));

      const int64_t n = target.numel();
      const auto pair_x = torch::cat({random_change(rng).flatten(), 0.5 * torch::randn({16}, rng, f64())});
      worst_pair = std::max(
          worst_pair, oracle::gradient_check(
                          [&](const torch::Tensor& x) {
                            const auto dh = x.narrow(0, 0, n).view(target.sizes());
                            GaussianParams g{x.narrow(0, n, 8).view({1, 8}),
                                             x.narrow(0, n + 8, 8).view({1, 8})};
                            return pairwise_loss(target, dh, x_prev, g, v, w).total;
                          },
                          pair_x));

      const auto scores = torch::randn({8}, rng, f64());
      worst_w = std::max(worst_w, oracle::gradient_check(
                                      [](const torch::Tensor& x) {
                                        return critic_wasserstein(x.narrow(0, 0, 4), x.narrow(0, 4, 4));
                                      },
                                      scores));

      const auto real = torch::rand({2, 3, 8, 8}, rng, f64());
      const auto fake = torch::rand({2, 3, 8, 8}, rng, f64());
      const auto packed = 0.3 * torch::randn({kHidden * kInputs + kHidden}, rng, f64());
      const uint64_t u_seed = 1000 + static_cast<uint64_t>(i);
      worst_gp = std::max(worst_gp, oracle::gradient_check(
                                        [&](const torch::Tensor& p) {
                                          CriticFn critic = [&p](const torch::Tensor& x,
                                                                 const torch::Tensor&,
                                                                 const torch::Tensor&) {
                                            return small_critic(p, x);
                                          };
                                          auto u_rng = make_rng(u_seed);
                                          torch::AutoGradMode enable(true);
                                          return gradient_penalty(real, fake, fake, real, critic,
                                                                  10.0, u_rng, true)
                                              .penalty;
                                        },
                                        packed));
    }
    MESSAGE("worst relative errors: kl " << worst_kl << " l1 " << worst_l1 << " perceptual "
                                         << worst_perc << " pairwise " << worst_pair
                                         << " wasserstein " << worst_w << " gp " << worst_gp);
    CHECK(worst_kl <= kGradTol);
    CHECK(worst_l1 <= kGradTol);
    CHECK(worst_perc <= kGradTol);
    CHECK(worst_pair <= kGradTol);
    CHECK(worst_w <= kGradTol);
    CHECK(worst_gp <= kGradTol);
  }

  TEST_CASE("loss shape mismatches throw") {
    CHECK_THROWS_AS(kl_loss({torch::zeros({2}), torch::zeros({3})}), ShapeError);
    CHECK_THROWS_AS(delta_l1(torch::zeros({1, 3, 4, 4}), torch::zeros({1, 3, 4, 5})), ShapeError);
    LossWeights bad;
    bad.sigma1 = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("metrics log round trips exactly") {
    TempDir dir("metrics");
    const auto path = dir / "metrics.log";
    std::vector<MetricsLog::Entry> written;
    {
      MetricsLog log(path);
      auto rng = make_rng(9);
      for (int64_t s = 0; s < 50; ++s) {
        const double value = torch::randn({1}, rng, f64()).item<double>() * std::pow(10.0, s % 7 - 3);
        log.log(s, s % 2 ? "pairwise_loss" : "critic_loss", value);
      }
      log.flush();
      written = log.entries();
      CHECK(log.entries_named("pairwise_loss").size() == 25);
    }
    CHECK(MetricsLog::read(path) == written);
  }
}
