#include <doctest.h>

#include "helpers.hpp"
#include "oracles.hpp"
#include "paintlapse/networks.hpp"

using namespace paintlapse;
using paintlapse::test::TempDir;

namespace {

ArchConfig small_arch(int64_t size = 16) {
  ArchConfig a;
  a.height = a.width = size;
  a.base_channels = 4;
  a.latent_dim = 32;
  a.critic_channels = 4;
  return a;
}

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("generator output matches the frame shape and is deterministic") {
    ArchConfig arch;  // 50x50, paper-scale widths
    const auto params = ModelParams::create(arch, 3);
    auto rng = make_rng(1);
    const auto z = sample_prior(arch.latent_dim, rng);
    const auto x = test::random_frame(50, 50, 2);
    const auto xf = test::random_frame(50, 50, 3);
    const auto a = generate_delta(z, x, xf, params);
    const auto b = generate_delta(z, x, xf, params);
    CHECK(a.height() == 50);
    CHECK(a.width() == 50);
    CHECK(a.channels() == 3);
    CHECK(test::bit_equal(a.tensor(), b.tensor()));
  }

  TEST_CASE("fresh generator on white inputs has small mean output") {
    ArchConfig arch;
    const auto params = ModelParams::create(arch, 0);
    auto rng = make_rng(0);
    const auto d = generate_delta(sample_prior(arch.latent_dim, rng), Frame::blank(50, 50),
                                  Frame::blank(50, 50), params);
    CHECK(d.tensor().abs().mean().item<double>() < 0.5);
  }

  TEST_CASE("generator output is bounded for extreme parameters") {
    auto params = ModelParams::create(small_arch(), 0);
    {
      torch::NoGradGuard guard;
      for (auto& p : params.generator->parameters()) p.mul_(1000.0);
    }
    auto rng = make_rng(4);
    const auto d = generate_delta(sample_prior(32, rng), test::random_frame(16, 16, 1),
                                  test::random_frame(16, 16, 2), params);
    CHECK(d.tensor().abs().max().item<float>() <= 1.0f);
  }

  TEST_CASE("generator rejects wrong latent length and mismatched frames") {
    const auto params = ModelParams::create(small_arch(), 0);
    auto rng = make_rng(0);
    CHECK_THROWS_AS(generate_delta(sample_prior(31, rng), Frame::blank(16, 16), Frame::blank(16, 16), params),
                    ShapeError);
    CHECK_THROWS_AS(generate_delta(sample_prior(32, rng), Frame::blank(16, 16), Frame::blank(8, 16), params),
                    ShapeError);
  }

  TEST_CASE("posterior is deterministic, sized and clamped") {
    ArchConfig arch;
    auto params = ModelParams::create(arch, 1);
    const auto x = test::random_frame(50, 50, 4);
    const auto xf = test::random_frame(50, 50, 5);
    const auto delta = ChangeMap(torch::ones({3, 50, 50}));
    const auto a = encode_posterior(delta, x, xf, params);
    const auto b = encode_posterior(delta, x, xf, params);
    CHECK(a.mu.numel() == 32);
    CHECK(a.logvar.numel() == 32);
    CHECK(test::bit_equal(a.mu, b.mu));
    CHECK(test::bit_equal(a.logvar, b.logvar));
    {
      torch::NoGradGuard guard;
      for (auto& p : params.posterior->parameters()) p.mul_(500.0);
    }
    for (float v : {-1.0f, 1.0f}) {
      const auto g = encode_posterior(ChangeMap(torch::full({3, 50, 50}, v)), x, xf, params);
      CHECK(g.logvar.min().item<double>() >= -10.0);
      CHECK(g.logvar.max().item<double>() <= 10.0);
      CHECK(torch::isfinite(g.mu).all().item<bool>());
    }
    CHECK_THROWS_AS(encode_posterior(ChangeMap::zeros(49, 50), x, xf, params), ShapeError);
  }

  TEST_CASE("reparameterize and prior examples") {
    GaussianParams g{torch::linspace(-1, 1, 32), torch::full({32}, -10.0)};
    auto rng = make_rng(7);
    const auto z = reparameterize(g, rng);
    CHECK((z - g.mu).abs().max().item<double>() < 0.01 * 5);  // |n| < 5 with overwhelming probability
    CHECK((z - g.mu).abs().mean().item<double>() < 0.01);

    GaussianParams unit{torch::zeros({10000, 8}), torch::zeros({10000, 8})};
    auto r2 = make_rng(11);
    const auto draws = reparameterize(unit, r2);
    CHECK(draws.mean(0).abs().max().item<double>() < 0.05);
    CHECK((draws.var(0) - 1.0).abs().max().item<double>() < 0.1);

    auto a = make_rng(3), b = make_rng(3);
    CHECK(test::bit_equal(reparameterize(g, a), reparameterize(g, b)));
  }

  TEST_CASE("prior draws: moments, determinism, stream independence") {
    auto rng = make_rng(5);
    const auto draws = sample_prior(10000, 32, rng);
    CHECK(draws.mean(0).abs().max().item<double>() < 0.05);
    auto a = make_rng(8), b = make_rng(8), c = make_rng(derive_seed(8, 1));
    const auto za = sample_prior(32, a);
    CHECK(test::bit_equal(za, sample_prior(32, b)));
    CHECK_FALSE(torch::equal(za, sample_prior(32, c)));
    CHECK_THROWS(sample_prior(0, a));
  }

  TEST_CASE("critic score is finite and deterministic on boundary inputs") {
    const auto params = ModelParams::create(ArchConfig{}, 2);
    for (float v : {0.0f, 1.0f}) {
      const auto f = Frame::filled(50, 50, v);
      const double s1 = critic_score(f, f, f, params);
      const double s2 = critic_score(f, f, f, params);
      CHECK(std::isfinite(s1));
      CHECK(s1 == s2);
    }
    CHECK_THROWS_AS(critic_score(Frame::blank(50, 50), Frame::blank(40, 50), Frame::blank(50, 50), params),
                    ShapeError);
  }

  TEST_CASE("critic gradient matches finite differences on 8x8 inputs") {
    auto params = ModelParams::create(small_arch(8), 9);
    params.to(torch::kFloat64);
    auto rng = make_rng(12);
    for (int i = 0; i < 30; ++i) {
      const auto prev = torch::rand({1, 3, 8, 8}, rng, torch::kFloat64);
      const auto fin = torch::rand({1, 3, 8, 8}, rng, torch::kFloat64);
      const auto x = torch::rand({1, 3, 8, 8}, rng, torch::kFloat64);
      const double err = oracle::gradient_check(
          [&](const torch::Tensor& xt) { return critic_score(xt, prev, fin, params).sum(); }, x);
      CHECK(err <= 1e-3);
    }
  }

  TEST_CASE("critic refuses normalisation layers at construction") {
    CHECK_THROWS(Critic(CriticOptions{8, CriticNormalization::batch}));
    CHECK_NOTHROW(Critic(CriticOptions{8, CriticNormalization::none}));
  }

  TEST_CASE("encoder halves the spatial extent three times") {
    ConvEncoder enc(6, 4);
    const auto acts = enc->forward(torch::zeros({1, 6, 50, 50}));
    REQUIRE(acts.size() == 4);
    CHECK(acts[0].size(2) == 50);
    CHECK(acts[1].size(2) == 25);
    CHECK(acts[2].size(2) == 13);
    CHECK(acts[3].size(2) == 7);
    CHECK(acts[3].size(2) >= 4);
  }

  TEST_CASE("parameters round trip bit-exactly through a checkpoint") {
    TempDir dir("params");
    const auto params = ModelParams::create(small_arch(), 21);
    params.save(dir / "m.ckpt");
    const auto back = ModelParams::load(dir / "m.ckpt");
    CHECK(back.arch.latent_dim == 32);
    CHECK(back.seed == 21);
    auto rng = make_rng(2);
    const auto z = sample_prior(32, rng);
    const auto x = test::random_frame(16, 16, 1), xf = test::random_frame(16, 16, 2);
    CHECK(test::bit_equal(generate_delta(z, x, xf, params).tensor(), generate_delta(z, x, xf, back).tensor()));
    CHECK(critic_score(x, x, xf, params) == critic_score(x, x, xf, back));
    const auto d = frame_delta(x, xf);
    CHECK(test::bit_equal(encode_posterior(d, x, xf, params).mu, encode_posterior(d, x, xf, back).mu));
  }

  TEST_CASE("same seed gives identical parameters; different seeds differ") {
    const auto a = ModelParams::create(small_arch(), 5);
    const auto b = ModelParams::create(small_arch(), 5);
    const auto c = ModelParams::create(small_arch(), 6);
    const auto pa = a.generator_parameters(), pb = b.generator_parameters(), pc = c.generator_parameters();
    bool same = true, differ = false;
    for (size_t i = 0; i < pa.size(); ++i) {
      same = same && torch::equal(pa[i], pb[i]);
      differ = differ || !torch::equal(pa[i], pc[i]);
    }
    CHECK(same);
    CHECK(differ);
  }

  TEST_CASE("clone is independent of the original") {
    auto a = ModelParams::create(small_arch(), 5);
    auto b = a.clone();
    {
      torch::NoGradGuard guard;
      for (auto& p : b.generator->parameters()) p.add_(1.0);
    }
    CHECK_FALSE(torch::equal(a.generator->parameters()[0], b.generator->parameters()[0]));
  }

  TEST_CASE("features are unit-normalised per location and deterministic") {
    const auto v = FeatureExtractor::seeded(3);
    const auto x = test::random_frame(20, 20, 4);
    const auto f1 = extract_features(x, v);
    const auto f2 = extract_features(x, FeatureExtractor::seeded(3));
    REQUIRE(f1.size() == 3);
    for (size_t l = 0; l < f1.size(); ++l) {
      CHECK(test::bit_equal(f1[l], f2[l]));
      const auto norms = f1[l].norm(2, 0);
      const auto ok = norms.lt(1e-12).logical_or((norms - 1).abs().le(1e-5));
      CHECK(ok.all().item<bool>());
    }
    CHECK_THROWS_AS(extract_features(test::random_frame(7, 20, 1), v), ShapeError);
  }

  TEST_CASE("feature extractor round trips through a weights file") {
    TempDir dir("feat");
    const auto v = FeatureExtractor::seeded(13);
    v.save(dir / "v.ckpt");
    const auto p = FeatureExtractor::pretrained(dir / "v.ckpt");
    CHECK(p.mode() == FeatureExtractor::Mode::pretrained);
    const auto x = test::random_frame(12, 12, 4);
    const auto a = extract_features(x, v), b = extract_features(x, p);
    for (size_t l = 0; l < a.size(); ++l) CHECK(test::bit_equal(a[l], b[l]));
  }
}
