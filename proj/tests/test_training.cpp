#include <doctest.h>

#include "helpers.hpp"
#include "paintlapse/synthetic.hpp"
#include "paintlapse/training.hpp"

using namespace paintlapse;
using paintlapse::test::TempDir;

namespace {

constexpr int64_t kSize = 16;

TrainConfig small_config() {
  TrainConfig c;
  c.arch.height = c.arch.width = kSize;
  c.arch.base_channels = 4;
  c.arch.latent_dim = 8;
  c.arch.critic_channels = 4;
  c.extraction.gamma = 2;
  c.extraction.epsilon = 1;
  c.tau = 5;
  c.seq_lengths = {3};
  c.critic_iters = 2;
  c.batch_size = 3;
  c.sampling_batch = 2;
  c.critic_batch = 4;
  c.pairwise_steps = 4;
  c.sequential_steps = 6;
  c.block_steps = 2;
  c.sequences_per_video = 8;
  c.seed = 5;
  return c;
}

std::vector<PaintingVideo> small_videos(int64_t n = 4) {
  SyntheticSpec spec;
  spec.height = spec.width = kSize;
  spec.min_regions = 2;
  spec.max_regions = 3;
  spec.min_fill_steps = 6;
  spec.max_fill_steps = 8;
  spec.seed = 3;
  std::vector<PaintingVideo> out;
  for (auto& sv : generate_synthetic_dataset(spec, n)) out.push_back(sv.video);
  return out;
}

const TrainingData& shared_data() {
  static const TrainingData data = TrainingData::build(small_videos(), small_config());
  return data;
}

std::vector<torch::Tensor> theta(const ModelParams& p) {
  std::vector<torch::Tensor> out;
  for (const auto& t : p.generator->parameters()) out.push_back(t);
  return out;
}

bool params_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!test::bit_equal(a[i], b[i])) return false;
  }
  return true;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& ts) {
  std::vector<torch::Tensor> out;
  for (const auto& t : ts) out.push_back(t.detach().clone());
  return out;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config json is strict and round trips") {
    const auto cfg = small_config();
    nlohmann::json j = cfg;
    const auto back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);
    j["critic_iter"] = 3;
    CHECK_THROWS(j.get<TrainConfig>());
    nlohmann::json k = cfg;
    k["kl_form"] = "other";
    CHECK_THROWS(k.get<TrainConfig>());
  }

  TEST_CASE("config validation") {
    auto c = small_config();
    c.seq_lengths = {6};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.critic_iters = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.cvae_blocks_per_cycle = c.sampling_blocks_per_cycle = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("training data pools") {
    const auto& data = shared_data();
    const auto cfg = small_config();
    CHECK_FALSE(data.pairs.empty());
    CHECK_FALSE(data.starters.empty());
    for (const auto& s : data.starters) CHECK(s.prev == 0);
    for (const auto& p : data.pairs) {
      const auto gap = p.next - p.prev;
      CHECK(gap >= 1);
      CHECK(gap <= 3);
    }
    for (int64_t len : {int64_t{3}, cfg.tau}) {
      REQUIRE(data.sequences.count(len));
      CHECK_FALSE(data.sequences.at(len).empty());
      for (const auto& s : data.sequences.at(len)) CHECK(static_cast<int64_t>(s.indices.size()) == len);
    }
    auto other = small_config();
    other.arch.height = other.arch.width = 24;
    CHECK_THROWS_AS(TrainingData::build(small_videos(1), other), ShapeError);
  }

  TEST_CASE("pairwise batch adds a starter pair for non-blank first frames") {
    const auto videos = small_videos(1);
    const std::vector<IndexSequence> from_blank{{videos[0].id(), {0, 2, 4}}};
    CHECK(make_pairwise_batch(from_blank, videos).x_prev.size(0) == 2);
    const std::vector<IndexSequence> mid{{videos[0].id(), {3, 5, 7}}};
    const auto b = make_pairwise_batch(mid, videos);
    REQUIRE(b.x_prev.size(0) == 3);
    CHECK(b.x_prev[0].eq(1.0f).all().item<bool>());
    CHECK(torch::equal(b.x_next[0], videos[0].frame(3).tensor()));
    CHECK(torch::equal(b.x_final[2], videos[0].final_frame().tensor()));
    CHECK_THROWS(make_pairwise_batch({{"missing", {0, 1}}}, videos));
  }

  TEST_CASE("logged first pairwise loss equals a direct computation") {
    auto state = TrainState::create(small_config());
    const auto params = state.params.clone();
    auto rng = state.rng.clone();
    const auto batch = sample_pairwise_batch(shared_data(), state.config, rng);
    const double direct =
        pairwise_batch_loss(params, state.features, batch, state.config, rng).total.item<double>();
    MetricsLog log;
    TrainHooks hooks;
    hooks.log = &log;
    train_pairwise(state, shared_data(), 1, hooks);
    const auto logged = log.entries_named("pairwise_loss");
    REQUIRE(logged.size() == 1);
    CHECK(logged[0].value == direct);
    CHECK(state.pairwise_steps == 1);
  }

  TEST_CASE("two-frame sequential loss equals the pairwise loss") {
    const auto cfg = small_config();
    const auto params = ModelParams::create(cfg.arch, 9);
    const auto v = FeatureExtractor::seeded(cfg.feature_seed);
    auto draw = make_rng(1);
    const auto seq = sample_sequence_batch(shared_data(), 3, 3, draw);
    SequenceBatch two{{seq.frames[0], seq.frames[1]}, seq.x_final};
    auto r1 = make_rng(2);
    auto r2 = make_rng(2);
    const auto s = sequential_cvae_loss(params, v, two, cfg, r1);
    const auto p = pairwise_batch_loss(params, v, {seq.frames[0], seq.frames[1], seq.x_final}, cfg, r2);
    CHECK(s.total.item<double>() == p.total.item<double>());
    CHECK(s.kl.item<double>() == p.kl.item<double>());
  }

  TEST_CASE("step-2 loss reaches theta through the rollout") {
    const auto cfg = small_config();
    const auto params = ModelParams::create(cfg.arch, 9);
    const auto v = FeatureExtractor::seeded(cfg.feature_seed);
    auto draw = make_rng(1);
    const auto seq = sample_sequence_batch(shared_data(), 3, 3, draw);
    auto grads = [&](bool detach) {
      auto rng = make_rng(4);
      const auto l = sequential_cvae_loss(params, v, seq, cfg, rng, {false, true}, detach);
      return torch::autograd::grad({l.total}, theta(params));
    };
    const auto full = grads(false);
    const auto cut = grads(true);
    double norm = 0, diff = 0;
    for (size_t i = 0; i < full.size(); ++i) {
      norm += full[i].pow(2).sum().item<double>();
      diff += (full[i] - cut[i]).pow(2).sum().item<double>();
    }
    CHECK(norm > 0.0);
    CHECK(diff > 0.0);
  }

  TEST_CASE("sampling stage counts critic updates and applies the final term at tau") {
    auto state = TrainState::create(small_config());
    std::vector<int64_t> final_steps;
    MetricsLog log;
    TrainHooks hooks;
    hooks.log = &log;
    hooks.final_term_steps = &final_steps;
    const auto features_before = extract_features(Frame::blank(kSize, kSize), state.features);
    train_sequential_sampling(state, shared_data(), 3, hooks);
    CHECK(state.sampling_steps == 3);
    CHECK(state.critic_updates == 3 * state.config.critic_iters);
    CHECK(log.entries_named("critic_loss").size() == 6);
    CHECK(final_steps == std::vector<int64_t>(3, state.config.tau));
    const auto features_after = extract_features(Frame::blank(kSize, kSize), state.features);
    CHECK(params_equal(features_before, features_after));
  }

  TEST_CASE("block schedule follows the alternation ratio") {
    auto cfg = small_config();
    cfg.pairwise_steps = 1;
    cfg.sequential_steps = 7;
    cfg.block_steps = 1;
    cfg.cvae_blocks_per_cycle = 2;
    cfg.sampling_blocks_per_cycle = 1;
    auto state = TrainState::create(cfg);
    std::vector<std::string> labels;
    MetricsLog log;
    TrainHooks hooks;
    hooks.log = &log;
    hooks.on_boundary = [&](const TrainState&, const std::string& label) { labels.push_back(label); };
    train_full(state, shared_data(), hooks);
    CHECK(labels == std::vector<std::string>{"pairwise", "seq_cvae_block_0", "seq_cvae_block_1",
                                             "seq_sample_block_2", "seq_cvae_block_3",
                                             "seq_cvae_block_4", "seq_sample_block_5",
                                             "seq_cvae_block_6"});
    CHECK(state.cvae_steps == 5);
    CHECK(state.sampling_steps == 2);
    const auto first_seq = log.entries_named("seq_cvae_loss").front().step;
    for (const auto& e : log.entries_named("pairwise_loss")) CHECK(e.step < first_seq);
  }

  TEST_CASE("resuming from a boundary checkpoint reproduces the log") {
    TempDir dir("resume");
    const auto cfg = small_config();
    MetricsLog full_log;
    {
      auto state = TrainState::create(cfg);
      TrainHooks hooks;
      hooks.log = &full_log;
      hooks.on_boundary = [&](const TrainState& s, const std::string& label) {
        if (label == "seq_cvae_block_0") s.save(dir / "boundary.ckpt");
      };
      train_full(state, shared_data(), hooks);
    }
    auto resumed = TrainState::load(dir / "boundary.ckpt");
    CHECK(resumed.pairwise_steps == cfg.pairwise_steps);
    CHECK(resumed.cvae_steps == 2);
    MetricsLog tail;
    TrainHooks hooks;
    hooks.log = &tail;
    train_full(resumed, shared_data(), hooks);
    std::vector<MetricsLog::Entry> expected;
    for (const auto& e : full_log.entries()) {
      if (e.step >= resumed.config.pairwise_steps + 2) expected.push_back(e);
    }
    CHECK_FALSE(expected.empty());
    CHECK(tail.entries() == expected);
  }

  TEST_CASE("same seed gives identical logs") {
    auto run = [] {
      auto state = TrainState::create(small_config());
      MetricsLog log;
      TrainHooks hooks;
      hooks.log = &log;
      train_full(state, shared_data(), hooks);
      return log.entries();
    };
    CHECK(run() == run());
  }

  TEST_CASE("train state save and load is exact") {
    TempDir dir("state");
    auto state = TrainState::create(small_config());
    TrainHooks hooks;
    train_pairwise(state, shared_data(), 2, hooks);
    state.save(dir / "s.ckpt");
    auto loaded = TrainState::load(dir / "s.ckpt");
    CHECK(params_equal(state.params.generator_parameters(), loaded.params.generator_parameters()));
    CHECK(params_equal(state.params.critic_parameters(), loaded.params.critic_parameters()));
    CHECK(torch::equal(state.rng.get_state(), loaded.rng.get_state()));
    CHECK(loaded.global_step == 2);
    CHECK(nlohmann::json(loaded.config) == nlohmann::json(state.config));

    MetricsLog a, b;
    TrainHooks ha, hb;
    ha.log = &a;
    hb.log = &b;
    train_pairwise(state, shared_data(), 3, ha);
    train_pairwise(loaded, shared_data(), 3, hb);
    CHECK(a.entries() == b.entries());
  }

  TEST_CASE("kl falls to its floor without reconstruction terms") {
    auto cfg = small_config();
    cfg.weights.sigma1 = 1e12;
    cfg.weights.sigma2 = 1e12;
    cfg.learning_rate = 3e-3;
    auto state = TrainState::create(cfg);
    MetricsLog log;
    TrainHooks hooks;
    hooks.log = &log;
    train_pairwise(state, shared_data(), 300, hooks);
    const auto kl = log.entries_named("pairwise_kl");
    double tail = 0;
    for (size_t i = kl.size() - 20; i < kl.size(); ++i) tail += kl[i].value / 20.0;
    const double floor = 0.5 * static_cast<double>(cfg.arch.latent_dim);
    MESSAGE("kl first " << kl.front().value << " tail " << tail << " floor " << floor);
    CHECK(tail >= floor - 1e-9);
    CHECK(tail - floor < 0.05 * floor);
    CHECK(tail <= kl.front().value);
  }

  TEST_CASE("training never changes the feature extractor") {
    auto state = TrainState::create(small_config());
    Checkpoint before;
    state.features.write(before);
    TrainHooks hooks;
    train_full(state, shared_data(), hooks);
    Checkpoint after;
    state.features.write(after);
    REQUIRE(before.tensors.size() == after.tensors.size());
    for (const auto& [name, t] : before.tensors) CHECK(test::bit_equal(t, after.tensors.at(name)));
  }

  TEST_CASE("single sequence overfit halves the image-similarity loss") {
    auto cfg = small_config();
    cfg.learning_rate = 1e-3;
    auto state = TrainState::create(cfg);
    auto draw = make_rng(4);
    const auto batch = sample_sequence_batch(shared_data(), 3, 1, draw);
    double first = 0, last = 0;
    for (int i = 0; i < 500; ++i) {
      auto loss = sequential_cvae_loss(state.params, state.features, batch, cfg, state.rng);
      const double recon = loss.reconstruction.item<double>();
      if (i == 0) first = recon;
      last = recon;
      state.generator_opt->zero_grad();
      loss.total.backward();
      state.generator_opt->step();
    }
    MESSAGE("image-similarity " << first << " -> " << last);
    CHECK(last < 0.5 * first);
  }

  TEST_CASE("single pair overfit drives the l1 term down") {
    SyntheticSpec spec;
    spec.height = spec.width = 50;
    spec.seed = 9;
    const auto v = generate_synthetic_video(spec, 0).video;
    auto cfg = small_config();
    cfg.arch.height = cfg.arch.width = 50;
    cfg.arch.base_channels = 8;
    cfg.learning_rate = 1e-3;
    auto state = TrainState::create(cfg);
    const auto mid = v.size() / 2;
    const PairBatch batch{v.frame(mid).tensor().unsqueeze(0), v.frame(mid + 5).tensor().unsqueeze(0),
                          v.final_frame().tensor().unsqueeze(0)};
    double first = 0, last = 0;
    for (int i = 0; i < 500; ++i) {
      auto loss = pairwise_batch_loss(state.params, state.features, batch, cfg, state.rng);
      const double l1 = loss.l1.item<double>() / cfg.weights.sigma1;
      if (i == 0) first = l1;
      last = l1;
      state.generator_opt->zero_grad();
      loss.total.backward();
      state.generator_opt->step();
    }
    MESSAGE("l1 term " << first << " -> " << last);
    CHECK(last < 0.1 * first);
  }

  TEST_CASE("non-finite loss aborts with a snapshot") {
    TempDir dir("abort");
    auto state = TrainState::create(small_config());
    {
      torch::NoGradGuard guard;
      state.params.generator->parameters()[0].fill_(std::numeric_limits<float>::quiet_NaN());
    }
    TrainHooks hooks;
    hooks.snapshot_dir = dir.path();
    try {
      train_pairwise(state, shared_data(), 1, hooks);
      FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
      CHECK(std::filesystem::exists(e.snapshot()));
      CHECK(std::string(e.what()).find(e.snapshot().string()) != std::string::npos);
      CHECK(TrainState::load(e.snapshot()).global_step == 0);
    }
  }
}
