#include "paintlapse/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "paintlapse/json_keys.hpp"
#include "paintlapse/rng.hpp"

namespace paintlapse {

using nlohmann::json;

void TrainConfig::validate() const {
  arch.validate();
  weights.validate();
  extraction.validate();
  if (tau < 2) throw std::invalid_argument("TrainConfig: tau must be >= 2");
  if (seq_lengths.empty()) throw std::invalid_argument("TrainConfig: seq_lengths is empty");
  for (auto s : seq_lengths) {
    if (s < 2) throw std::invalid_argument("TrainConfig: sequence lengths must be >= 2");
    if (s > tau) throw std::invalid_argument("TrainConfig: sequence lengths must not exceed tau");
  }
  if (critic_iters < 1) throw std::invalid_argument("TrainConfig: critic_iters must be >= 1");
  if (batch_size < 1 || sampling_batch < 1 || critic_batch < 1) {
    throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
  }
  if (!(learning_rate > 0) || !(critic_learning_rate > 0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  }
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw std::invalid_argument("TrainConfig: Adam betas must be in [0, 1)");
  }
  if (!(starter_probability >= 0 && starter_probability <= 1)) {
    throw std::invalid_argument("TrainConfig: starter_probability must be in [0, 1]");
  }
  if (pairwise_steps < 0 || sequential_steps < 0) {
    throw std::invalid_argument("TrainConfig: step counts must be >= 0");
  }
  if (block_steps < 1) throw std::invalid_argument("TrainConfig: block_steps must be >= 1");
  if (cvae_blocks_per_cycle < 0 || sampling_blocks_per_cycle < 0 ||
      cvae_blocks_per_cycle + sampling_blocks_per_cycle == 0) {
    throw std::invalid_argument("TrainConfig: alternation ratio needs a positive block count");
  }
  if (sequences_per_video < 1) {
    throw std::invalid_argument("TrainConfig: sequences_per_video must be >= 1");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"arch", c.arch},
           {"weights",
            {{"sigma1", c.weights.sigma1},
             {"sigma2", c.weights.sigma2},
             {"gp_weight", c.weights.gp_weight}}},
           {"kl_form", c.kl_form == KlForm::as_printed ? "as_printed" : "textbook"},
           {"extraction", c.extraction},
           {"tau", c.tau},
           {"seq_lengths", c.seq_lengths},
           {"critic_iters", c.critic_iters},
           {"batch_size", c.batch_size},
           {"sampling_batch", c.sampling_batch},
           {"critic_batch", c.critic_batch},
           {"learning_rate", c.learning_rate},
           {"critic_learning_rate", c.critic_learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adversarial_weight", c.adversarial_weight},
           {"starter_probability", c.starter_probability},
           {"pairwise_steps", c.pairwise_steps},
           {"sequential_steps", c.sequential_steps},
           {"block_steps", c.block_steps},
           {"alternation_ratio", {c.cvae_blocks_per_cycle, c.sampling_blocks_per_cycle}},
           {"sequences_per_video", c.sequences_per_video},
           {"feature_seed", c.feature_seed},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j, {"arch", "weights", "kl_form", "extraction", "tau", "seq_lengths", "critic_iters",
                 "batch_size", "sampling_batch", "critic_batch", "learning_rate",
                 "critic_learning_rate", "adam_beta1", "adam_beta2", "adversarial_weight",
                 "starter_probability", "pairwise_steps", "sequential_steps", "block_steps",
                 "alternation_ratio", "sequences_per_video", "feature_seed", "seed"},
             "train");
  read_key(j, "arch", c.arch);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"sigma1", "sigma2", "gp_weight"}, "train.weights");
    read_key(w, "sigma1", c.weights.sigma1);
    read_key(w, "sigma2", c.weights.sigma2);
    read_key(w, "gp_weight", c.weights.gp_weight);
  }
  if (j.contains("kl_form")) {
    const auto form = j.at("kl_form").get<std::string>();
    if (form == "as_printed") {
      c.kl_form = KlForm::as_printed;
    } else if (form == "textbook") {
      c.kl_form = KlForm::textbook;
    } else {
      throw ConfigError("train.kl_form: expected 'as_printed' or 'textbook', got '" + form + "'");
    }
  }
  read_key(j, "extraction", c.extraction);
  read_key(j, "tau", c.tau);
  read_key(j, "seq_lengths", c.seq_lengths);
  read_key(j, "critic_iters", c.critic_iters);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "sampling_batch", c.sampling_batch);
  read_key(j, "critic_batch", c.critic_batch);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "critic_learning_rate", c.critic_learning_rate);
  read_key(j, "adam_beta1", c.adam_beta1);
  read_key(j, "adam_beta2", c.adam_beta2);
  read_key(j, "adversarial_weight", c.adversarial_weight);
  read_key(j, "starter_probability", c.starter_probability);
  read_key(j, "pairwise_steps", c.pairwise_steps);
  read_key(j, "sequential_steps", c.sequential_steps);
  read_key(j, "block_steps", c.block_steps);
  if (j.contains("alternation_ratio")) {
    const auto ratio = j.at("alternation_ratio").get<std::vector<int64_t>>();
    if (ratio.size() != 2) throw ConfigError("train.alternation_ratio: expected [cvae, sampling]");
    c.cvae_blocks_per_cycle = ratio[0];
    c.sampling_blocks_per_cycle = ratio[1];
  }
  read_key(j, "sequences_per_video", c.sequences_per_video);
  read_key(j, "feature_seed", c.feature_seed);
  read_key(j, "seed", c.seed);
}

namespace {

bool is_blank(const Frame& f) { return f.tensor().eq(1.0f).all().item<bool>(); }

torch::Tensor blank_like(const torch::Tensor& x) { return torch::ones_like(x); }

}  // namespace

TrainingData TrainingData::build(std::vector<PaintingVideo> videos, const TrainConfig& cfg) {
  cfg.validate();
  TrainingData data;
  data.videos = std::move(videos);
  data.blank_canvas = Frame::blank(cfg.arch.height, cfg.arch.width);

  std::set<int64_t> lengths(cfg.seq_lengths.begin(), cfg.seq_lengths.end());
  lengths.insert(cfg.tau);
  for (auto len : lengths) data.sequences[len];

  for (size_t vi = 0; vi < data.videos.size(); ++vi) {
    const auto& video = data.videos[vi];
    const auto v = static_cast<int64_t>(vi);
    if (video.height() != cfg.arch.height || video.width() != cfg.arch.width) {
      throw ShapeError("TrainingData: video '" + video.id() + "' is " +
                       std::to_string(video.height()) + "x" + std::to_string(video.width()) +
                       " but the model expects " + std::to_string(cfg.arch.height) + "x" +
                       std::to_string(cfg.arch.width));
    }
    ExtractionConfig pair_cfg = cfg.extraction;
    pair_cfg.sequence_length = 2;
    for (const auto& s : extract_sequences(video, pair_cfg)) {
      data.pairs.push_back({v, s.indices[0], s.indices[1]});
    }
    if (video.blank_start()) {
      if (is_blank(video.frame(0))) {
        for (const auto& p : data.pairs) {
          if (p.video == v && p.prev == 0) data.starters.push_back(p);
        }
      } else {
        data.starters.push_back({v, -1, 0});
      }
    }
    for (auto len : lengths) {
      ExtractionConfig seq_cfg = cfg.extraction;
      seq_cfg.sequence_length = len;
      const auto seed = derive_seed(cfg.seed, vi * 1024 + static_cast<uint64_t>(len));
      for (auto& s : extract_sequences(video, seq_cfg,
                                       static_cast<size_t>(cfg.sequences_per_video), seed)) {
        data.sequences[len].push_back({v, std::move(s.indices)});
      }
    }
  }
  return data;
}

const Frame& TrainingData::frame(int64_t video, int64_t index) const {
  if (index < 0) return blank_canvas;
  return videos.at(static_cast<size_t>(video)).frame(static_cast<size_t>(index));
}

PairBatch make_pairwise_batch(const std::vector<IndexSequence>& sequences,
                              const std::vector<PaintingVideo>& videos) {
  std::vector<torch::Tensor> prev, next, fin;
  for (const auto& seq : sequences) {
    auto it = std::find_if(videos.begin(), videos.end(),
                           [&](const PaintingVideo& v) { return v.id() == seq.video_id; });
    if (it == videos.end()) {
      throw std::invalid_argument("make_pairwise_batch: unknown video '" + seq.video_id + "'");
    }
    const auto& video = *it;
    const auto& final_t = video.final_frame().tensor();
    const auto& first = video.frame(static_cast<size_t>(seq.indices.at(0)));
    if (video.blank_start() && !is_blank(first)) {
      prev.push_back(torch::ones_like(first.tensor()));
      next.push_back(first.tensor());
      fin.push_back(final_t);
    }
    for (size_t k = 1; k < seq.indices.size(); ++k) {
      prev.push_back(video.frame(static_cast<size_t>(seq.indices[k - 1])).tensor());
      next.push_back(video.frame(static_cast<size_t>(seq.indices[k])).tensor());
      fin.push_back(final_t);
    }
  }
  if (prev.empty()) throw std::invalid_argument("make_pairwise_batch: no pairs");
  return {torch::stack(prev), torch::stack(next), torch::stack(fin)};
}

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, double lr,
                                              const TrainConfig& cfg) {
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(lr).betas({cfg.adam_beta1, cfg.adam_beta2}));
}

std::string serialize_optimizer(const torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive archive;
  opt.save(archive);
  std::ostringstream os;
  archive.save_to(os);
  return os.str();
}

void deserialize_optimizer(torch::optim::Optimizer& opt, const std::string& blob) {
  torch::serialize::InputArchive archive;
  std::istringstream is(blob);
  archive.load_from(is);
  opt.load(archive);
}

TrainState finish_create(const TrainConfig& cfg, FeatureExtractor features) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.params = ModelParams::create(cfg.arch, cfg.seed);
  s.features = std::move(features);
  s.generator_opt = make_adam(s.params.generator_parameters(), cfg.learning_rate, cfg);
  s.critic_opt = make_adam(s.params.critic_parameters(), cfg.critic_learning_rate, cfg);
  s.rng = make_rng(derive_seed(cfg.seed, 1));
  return s;
}

}  // namespace

TrainState TrainState::create(const TrainConfig& cfg) {
  return finish_create(cfg, FeatureExtractor::seeded(cfg.feature_seed));
}

TrainState TrainState::create(const TrainConfig& cfg, const std::filesystem::path& features_path) {
  return finish_create(cfg, FeatureExtractor::pretrained(features_path));
}

void TrainState::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.meta["kind"] = "train_state";
  ck.meta["code_version"] = PAINTLAPSE_VERSION;
  ck.meta["train_config"] = config;
  ck.meta["counters"] = {{"global_step", global_step},
                         {"pairwise_steps", pairwise_steps},
                         {"cvae_steps", cvae_steps},
                         {"sampling_steps", sampling_steps},
                         {"critic_updates", critic_updates}};
  params.write(ck);
  features.write(ck, "features/");
  ck.blobs["optim/generator"] = serialize_optimizer(*generator_opt);
  ck.blobs["optim/critic"] = serialize_optimizer(*critic_opt);
  ck.tensors["rng_state"] = rng.get_state();
  ck.save(path);
}

TrainState TrainState::load(const std::filesystem::path& path) {
  const auto ck = Checkpoint::load(path);
  if (ck.meta.value("kind", std::string()) != "train_state") {
    throw CheckpointError(path.string() + " is not a training checkpoint");
  }
  TrainState s;
  s.config = ck.meta.at("train_config").get<TrainConfig>();
  s.params = ModelParams::read(ck);
  s.features = FeatureExtractor::read(ck, "features/");
  s.generator_opt = make_adam(s.params.generator_parameters(), s.config.learning_rate, s.config);
  s.critic_opt = make_adam(s.params.critic_parameters(), s.config.critic_learning_rate, s.config);
  deserialize_optimizer(*s.generator_opt, ck.blob("optim/generator"));
  deserialize_optimizer(*s.critic_opt, ck.blob("optim/critic"));
  s.rng = make_rng(0);
  s.rng.set_state(ck.tensor("rng_state"));
  const auto& c = ck.meta.at("counters");
  s.global_step = c.at("global_step");
  s.pairwise_steps = c.at("pairwise_steps");
  s.cvae_steps = c.at("cvae_steps");
  s.sampling_steps = c.at("sampling_steps");
  s.critic_updates = c.at("critic_updates");
  return s;
}

PairBatch sample_pairwise_batch(const TrainingData& data, const TrainConfig& cfg,
                                torch::Generator& rng) {
  if (data.pairs.empty() && data.starters.empty()) {
    throw std::invalid_argument("sample_pairwise_batch: no training pairs");
  }
  std::vector<torch::Tensor> prev, next, fin;
  for (int64_t b = 0; b < cfg.batch_size; ++b) {
    const bool starter = data.pairs.empty() ||
                         (!data.starters.empty() && uniform_real(rng) < cfg.starter_probability);
    const auto& pool = starter ? data.starters : data.pairs;
    const auto& p = pool[static_cast<size_t>(uniform_index(rng, static_cast<int64_t>(pool.size())))];
    prev.push_back(data.frame(p.video, p.prev).tensor());
    next.push_back(data.frame(p.video, p.next).tensor());
    fin.push_back(data.videos[static_cast<size_t>(p.video)].final_frame().tensor());
  }
  return {torch::stack(prev), torch::stack(next), torch::stack(fin)};
}

PairwiseLoss pairwise_batch_loss(const ModelParams& params, const FeatureExtractor& v,
                                 const PairBatch& batch, const TrainConfig& cfg,
                                 torch::Generator& rng) {
  const auto delta = batch.x_next - batch.x_prev;
  const auto g = encode_posterior(delta, batch.x_prev, batch.x_final, params);
  const auto z = reparameterize(g, rng);
  const auto delta_hat = generate_delta(z, batch.x_prev, batch.x_final, params);
  return pairwise_loss(delta, delta_hat, batch.x_prev, g, v, cfg.weights, cfg.kl_form);
}

SequenceBatch sample_sequence_batch(const TrainingData& data, int64_t length, int64_t batch,
                                    torch::Generator& rng) {
  auto it = data.sequences.find(length);
  if (it == data.sequences.end() || it->second.empty()) {
    throw std::invalid_argument("sample_sequence_batch: no training sequences of length " +
                                std::to_string(length));
  }
  const auto& pool = it->second;
  std::vector<std::vector<torch::Tensor>> per_t(static_cast<size_t>(length));
  std::vector<torch::Tensor> fin;
  for (int64_t b = 0; b < batch; ++b) {
    const auto& ref = pool[static_cast<size_t>(uniform_index(rng, static_cast<int64_t>(pool.size())))];
    for (int64_t t = 0; t < length; ++t) {
      per_t[static_cast<size_t>(t)].push_back(data.frame(ref.video, ref.indices[t]).tensor());
    }
    fin.push_back(data.videos[static_cast<size_t>(ref.video)].final_frame().tensor());
  }
  SequenceBatch out;
  for (auto& frames : per_t) out.frames.push_back(torch::stack(frames));
  out.x_final = torch::stack(fin);
  return out;
}

SequenceLoss sequential_cvae_loss(const ModelParams& params, const FeatureExtractor& v,
                                  const SequenceBatch& batch, const TrainConfig& cfg,
                                  torch::Generator& rng, const std::vector<bool>& enabled_steps,
                                  bool detach_rollout) {
  const auto steps = static_cast<int64_t>(batch.frames.size()) - 1;
  if (steps < 1) throw std::invalid_argument("sequential_cvae_loss: need at least two frames");
  if (!enabled_steps.empty() && static_cast<int64_t>(enabled_steps.size()) != steps) {
    throw std::invalid_argument("sequential_cvae_loss: enabled_steps must have one entry per step");
  }
  const auto& x_final = batch.x_final;
  SequenceLoss out;
  const auto zero = torch::zeros({}, x_final.options());
  out.total = zero;
  out.kl = zero;
  out.reconstruction = zero;
  auto x_hat = batch.frames[0];
  for (int64_t t = 1; t <= steps; ++t) {
    const auto x_prev = detach_rollout ? x_hat.detach() : x_hat;
    const auto delta = batch.frames[static_cast<size_t>(t)] - x_prev;
    const auto g = encode_posterior(delta, x_prev, x_final, params);
    const auto z = reparameterize(g, rng);
    const auto delta_hat = generate_delta(z, x_prev, x_final, params);
    const auto l = pairwise_loss(delta, delta_hat, x_prev, g, v, cfg.weights, cfg.kl_form);
    out.per_step.push_back(l.total);
    if (enabled_steps.empty() || enabled_steps[static_cast<size_t>(t - 1)]) {
      out.total = out.total + l.total;
      out.kl = out.kl + l.kl;
      out.reconstruction = out.reconstruction + (l.total - l.kl);
    }
    x_hat = apply_delta(x_prev, delta_hat);
  }
  return out;
}

Rollout rollout_from_blank(const ModelParams& params, const torch::Tensor& x_final, int64_t steps,
                           torch::Generator& rng) {
  Rollout r;
  r.frames.push_back(blank_like(x_final));
  const auto batch = x_final.size(0);
  for (int64_t t = 1; t <= steps; ++t) {
    const auto z = sample_prior(batch, params.arch.latent_dim, rng).to(x_final.scalar_type());
    auto delta = generate_delta(z, r.frames.back(), x_final, params);
    r.frames.push_back(apply_delta(r.frames.back(), delta));
    r.deltas.push_back(std::move(delta));
  }
  return r;
}

namespace {

[[noreturn]] void abort_training(TrainState& state, const TrainHooks& hooks,
                                 const std::string& why) {
  auto dir = hooks.snapshot_dir.empty() ? std::filesystem::temp_directory_path() : hooks.snapshot_dir;
  std::filesystem::create_directories(dir);
  const auto path = dir / ("abort_step_" + std::to_string(state.global_step) + ".ckpt");
  state.save(path);
  throw TrainingAborted(why + " at step " + std::to_string(state.global_step) +
                            "; snapshot written to " + path.string(),
                        path);
}

void require_finite(TrainState& state, const TrainHooks& hooks, const torch::Tensor& value,
                    const std::string& what) {
  if (!std::isfinite(value.item<double>())) abort_training(state, hooks, "non-finite " + what);
}

void log(const TrainHooks& hooks, int64_t step, const std::string& name, const torch::Tensor& v) {
  if (hooks.log) hooks.log->log(step, name, v.item<double>());
}

void log(const TrainHooks& hooks, int64_t step, const std::string& name, double v) {
  if (hooks.log) hooks.log->log(step, name, v);
}

/// Critic training triples: fakes from a detached rollout, reals from the
/// matching τ-sequences. Both sides share x_final per rollout; the penalty
/// point uses the fake triple's conditioning frames.
struct CriticBatch {
  torch::Tensor real_t, real_prev, fake_t, fake_prev, x_final;
};

CriticBatch draw_critic_batch(const SequenceBatch& real, const Rollout& fake, int64_t size,
                              torch::Generator& rng) {
  const auto b_count = real.x_final.size(0);
  const auto real_steps = static_cast<int64_t>(real.frames.size()) - 1;
  const auto fake_steps = static_cast<int64_t>(fake.deltas.size());
  std::vector<torch::Tensor> rt, rp, ft, fp, fin;
  for (int64_t k = 0; k < size; ++k) {
    const auto b = uniform_index(rng, b_count);
    const auto tf = 1 + uniform_index(rng, fake_steps);
    const auto tr = 1 + uniform_index(rng, real_steps);
    ft.push_back(fake.frames[static_cast<size_t>(tf)][b]);
    fp.push_back(fake.frames[static_cast<size_t>(tf - 1)][b]);
    rt.push_back(real.frames[static_cast<size_t>(tr)][b]);
    rp.push_back(real.frames[static_cast<size_t>(tr - 1)][b]);
    fin.push_back(real.x_final[b]);
  }
  return {torch::stack(rt), torch::stack(rp), torch::stack(ft).detach(), torch::stack(fp).detach(),
          torch::stack(fin)};
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.requires_grad_(on);
}

}  // namespace

double measure_critic_grad_norm(TrainState& state, const TrainingData& data, int64_t batches) {
  auto rng = make_rng(derive_seed(state.config.seed ^ 0x6e6f726dULL,
                                  static_cast<uint64_t>(state.global_step)));
  const auto& cfg = state.config;
  double total = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i < batches; ++i) {
    const auto real = sample_sequence_batch(data, cfg.tau, cfg.sampling_batch, rng);
    Rollout fake;
    {
      torch::NoGradGuard guard;
      fake = rollout_from_blank(state.params, real.x_final, cfg.tau, rng);
    }
    const auto cb = draw_critic_batch(real, fake, cfg.critic_batch, rng);
    const auto gp = gradient_penalty(cb.real_t, cb.fake_t, cb.fake_prev, cb.x_final, state.params,
                                     cfg.weights.gp_weight, rng, false);
    total += gp.grad_norms.sum().item<double>();
    count += gp.grad_norms.size(0);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

void train_pairwise(TrainState& state, const TrainingData& data, int64_t steps,
                    TrainHooks& hooks) {
  const auto& cfg = state.config;
  for (int64_t i = 0; i < steps; ++i) {
    const auto batch = sample_pairwise_batch(data, cfg, state.rng);
    const auto loss = pairwise_batch_loss(state.params, state.features, batch, cfg, state.rng);
    require_finite(state, hooks, loss.total, "pairwise loss");
    log(hooks, state.global_step, "pairwise_loss", loss.total);
    log(hooks, state.global_step, "pairwise_kl", loss.kl);
    log(hooks, state.global_step, "pairwise_l1", loss.l1);
    log(hooks, state.global_step, "pairwise_perceptual", loss.perceptual);
    state.generator_opt->zero_grad();
    loss.total.backward();
    state.generator_opt->step();
    ++state.pairwise_steps;
    ++state.global_step;
  }
}

void train_sequential_cvae(TrainState& state, const TrainingData& data, int64_t steps,
                           TrainHooks& hooks) {
  const auto& cfg = state.config;
  for (int64_t i = 0; i < steps; ++i) {
    const auto length = cfg.seq_lengths[static_cast<size_t>(
        uniform_index(state.rng, static_cast<int64_t>(cfg.seq_lengths.size())))];
    const auto batch = sample_sequence_batch(data, length, cfg.batch_size, state.rng);
    const auto loss = sequential_cvae_loss(state.params, state.features, batch, cfg, state.rng);
    require_finite(state, hooks, loss.total, "sequential CVAE loss");
    log(hooks, state.global_step, "seq_cvae_loss", loss.total);
    log(hooks, state.global_step, "seq_cvae_kl", loss.kl);
    log(hooks, state.global_step, "seq_cvae_recon", loss.reconstruction);
    state.generator_opt->zero_grad();
    loss.total.backward();
    state.generator_opt->step();
    ++state.cvae_steps;
    ++state.global_step;
  }
}

void train_sequential_sampling(TrainState& state, const TrainingData& data, int64_t steps,
                               TrainHooks& hooks) {
  const auto& cfg = state.config;
  constexpr double kDivergence = 1e6;
  const auto critic_params = state.params.critic_parameters();
  for (int64_t i = 0; i < steps; ++i) {
    const auto real = sample_sequence_batch(data, cfg.tau, cfg.sampling_batch, state.rng);
    const auto fake = rollout_from_blank(state.params, real.x_final, cfg.tau, state.rng);

    for (int64_t it = 0; it < cfg.critic_iters; ++it) {
      const auto cb = draw_critic_batch(real, fake, cfg.critic_batch, state.rng);
      const auto real_scores = critic_score(cb.real_t, cb.real_prev, cb.x_final, state.params);
      const auto fake_scores = critic_score(cb.fake_t, cb.fake_prev, cb.x_final, state.params);
      const auto largest = torch::cat({real_scores, fake_scores}).abs().max().item<double>();
      if (!std::isfinite(largest) || largest > kDivergence) {
        abort_training(state, hooks, "critic diverged (|score| = " + std::to_string(largest) + ")");
      }
      const auto wd = critic_wasserstein(real_scores, fake_scores);
      const auto gp = gradient_penalty(cb.real_t, cb.fake_t, cb.fake_prev, cb.x_final,
                                       state.params, cfg.weights.gp_weight, state.rng);
      const auto loss = wd + gp.penalty;
      require_finite(state, hooks, loss, "critic loss");
      log(hooks, state.global_step, "critic_loss", loss);
      log(hooks, state.global_step, "critic_wasserstein", wd);
      log(hooks, state.global_step, "gradient_penalty", gp.penalty);
      log(hooks, state.global_step, "critic_grad_norm", gp.grad_norms.mean());
      state.critic_opt->zero_grad();
      loss.backward();
      state.critic_opt->step();
      ++state.critic_updates;
    }

    set_requires_grad(critic_params, false);
    std::vector<torch::Tensor> xt(fake.frames.begin() + 1, fake.frames.end());
    std::vector<torch::Tensor> xp(fake.frames.begin(), fake.frames.end() - 1);
    const auto scores = critic_score(torch::cat(xt), torch::cat(xp),
                                     real.x_final.repeat({cfg.tau, 1, 1, 1}), state.params);
    set_requires_grad(critic_params, true);
    const auto adversarial = -scores.mean();

    const auto& last_prev = fake.frames[static_cast<size_t>(cfg.tau - 1)];
    const auto final_term = reconstruction_loss(real.x_final - last_prev, fake.deltas.back(),
                                                last_prev, state.features, cfg.weights);
    if (hooks.final_term_steps) hooks.final_term_steps->push_back(cfg.tau);
    const auto loss = cfg.adversarial_weight * adversarial + final_term.weighted;
    require_finite(state, hooks, loss, "sampling-stage generator loss");
    log(hooks, state.global_step, "seq_sample_adv", adversarial);
    log(hooks, state.global_step, "seq_sample_final", final_term.weighted);
    log(hooks, state.global_step, "seq_sample_loss", loss);
    state.generator_opt->zero_grad();
    loss.backward();
    state.generator_opt->step();
    ++state.sampling_steps;
    ++state.global_step;
  }
}

void train_full(TrainState& state, const TrainingData& data, TrainHooks& hooks) {
  const auto& cfg = state.config;
  cfg.validate();
  if (state.pairwise_steps < cfg.pairwise_steps) {
    log(hooks, state.global_step, "stage_pairwise", static_cast<double>(state.pairwise_steps));
    train_pairwise(state, data, cfg.pairwise_steps - state.pairwise_steps, hooks);
    if (hooks.on_boundary) hooks.on_boundary(state, "pairwise");
  }
  const int64_t cycle = cfg.cvae_blocks_per_cycle + cfg.sampling_blocks_per_cycle;
  while (state.sequential_steps() < cfg.sequential_steps) {
    const int64_t done = state.sequential_steps();
    const int64_t block = done / cfg.block_steps;
    const int64_t n = std::min(cfg.block_steps - done % cfg.block_steps,
                               cfg.sequential_steps - done);
    const bool cvae = block % cycle < cfg.cvae_blocks_per_cycle;
    const std::string label = (cvae ? "seq_cvae_block_" : "seq_sample_block_") + std::to_string(block);
    log(hooks, state.global_step, cvae ? "stage_seq_cvae" : "stage_seq_sample",
        static_cast<double>(block));
    if (cvae) {
      train_sequential_cvae(state, data, n, hooks);
    } else {
      train_sequential_sampling(state, data, n, hooks);
    }
    if (hooks.on_boundary) hooks.on_boundary(state, label);
  }
  if (hooks.log) hooks.log->flush();
}

}  // namespace paintlapse
