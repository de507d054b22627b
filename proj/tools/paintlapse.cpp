// Command-line entry point: data generation, extraction, training, synthesis
// and evaluation. Exit codes: 0 success, 1 usage or configuration error,
// 2 runtime failure.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "paintlapse/baselines.hpp"
#include "paintlapse/config.hpp"
#include "paintlapse/dataset.hpp"
#include "paintlapse/evaluation.hpp"
#include "paintlapse/image_io.hpp"
#include "paintlapse/inference.hpp"
#include "paintlapse/rng.hpp"
#include "paintlapse/training.hpp"
#include "paintlapse/video_io.hpp"

namespace fs = std::filesystem;
using namespace paintlapse;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string runs_dir = "runs";
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  cfg.validate();
  return cfg;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

/// Creates the run directory and records the resolved config and provenance.
fs::path open_run_dir(const Common& c, const RunConfig& cfg, const std::string& command,
                      const std::vector<std::string>& argv, nlohmann::json extra = {}) {
  fs::path dir;
  if (!c.out.empty()) {
    dir = c.out;
  } else {
    const auto base = fs::path(c.runs_dir) / (timestamp() + "-" + command);
    dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  fs::create_directories(dir);
  cfg.save(dir / "config.json");
  nlohmann::json run = {{"command", command},
                        {"argv", argv},
                        {"code_version", PAINTLAPSE_VERSION},
                        {"seed", cfg.seed},
                        {"data_root", resolve_data_root(cfg).string()}};
  if (!extra.is_null()) run.update(extra);
  std::ofstream(dir / "run.json") << run.dump(2) << '\n';
  return dir;
}

void update_run_json(const fs::path& dir, const nlohmann::json& extra) {
  nlohmann::json run;
  {
    std::ifstream in(dir / "run.json");
    run = nlohmann::json::parse(in);
  }
  run.update(extra);
  std::ofstream(dir / "run.json") << run.dump(2) << '\n';
}

/// Videos at the model resolution: unchanged when they match, otherwise
/// tiled into square crops of the model size.
std::vector<PaintingVideo> at_resolution(const std::vector<PaintingVideo>& videos,
                                         const ArchConfig& arch) {
  std::vector<PaintingVideo> out;
  for (const auto& v : videos) {
    if (v.height() == arch.height && v.width() == arch.width) {
      out.push_back(v);
    } else if (arch.height == arch.width && v.height() >= arch.height && v.width() >= arch.width) {
      for (auto& c : video_crops(v, arch.height)) out.push_back(std::move(c));
    } else {
      throw ShapeError("video '" + v.id() + "' is " + std::to_string(v.height()) + "x" +
                       std::to_string(v.width()) + " and cannot be tiled into " +
                       std::to_string(arch.height) + "x" + std::to_string(arch.width) + " crops");
    }
  }
  return out;
}

ModelParams load_model(const fs::path& path) {
  const auto kind = Checkpoint::load(path).meta.value("kind", std::string());
  if (kind == "train_state") return TrainState::load(path).params;
  if (kind == "unet_baseline") throw UsageError(path.string() + " is a unet checkpoint");
  return ModelParams::load(path);
}

TrainState make_state(const RunConfig& cfg) {
  return cfg.features_path.empty() ? TrainState::create(cfg.train)
                                   : TrainState::create(cfg.train, cfg.features_path);
}

FeatureExtractor make_features(const RunConfig& cfg) {
  return cfg.features_path.empty() ? FeatureExtractor::seeded(cfg.train.feature_seed)
                                   : FeatureExtractor::pretrained(cfg.features_path);
}

// Subcommands.

int cmd_gen_data(const Common& c, std::optional<int64_t> n_videos) {
  auto cfg = resolve_config(c);
  if (n_videos) cfg.n_videos = *n_videos;
  if (cfg.n_videos < 3) throw ConfigError("n_videos must be >= 3 for a train/val/test split");
  const fs::path root = c.out.empty() ? resolve_data_root(cfg) : fs::path(c.out);
  write_synthetic_dataset(root, cfg.synthetic, cfg.n_videos, cfg.seed);
  std::cout << "wrote " << cfg.n_videos << " videos to " << root.string() << "\n";
  return 0;
}

int cmd_extract(const Common& c, const std::vector<std::string>& argv) {
  const auto cfg = resolve_config(c);
  const auto root = resolve_data_root(cfg);
  const auto ds = load_dataset(root);
  const auto dir = open_run_dir(c, cfg, "extract", argv);
  MetricsLog log(dir / "metrics.log");

  const auto train = at_resolution(ds.subset("train"), cfg.train.arch);
  std::set<int64_t> lengths(cfg.train.seq_lengths.begin(), cfg.train.seq_lengths.end());
  lengths.insert(cfg.train.tau);
  for (auto len : lengths) {
    ExtractionConfig ec = cfg.extraction;
    ec.sequence_length = len;
    std::vector<IndexSequence> all;
    for (size_t vi = 0; vi < train.size(); ++vi) {
      const auto seed = derive_seed(cfg.train.seed, vi * 1024 + static_cast<uint64_t>(len));
      for (auto& s : extract_sequences(train[vi], ec,
                                       static_cast<size_t>(cfg.train.sequences_per_video), seed)) {
        all.push_back(std::move(s));
      }
    }
    write_index_file((dir / ("train_len" + std::to_string(len) + ".txt")).string(), all);
    log.log(0, "train_sequences_len" + std::to_string(len), static_cast<double>(all.size()));
    std::cout << "train length " << len << ": " << all.size() << " sequences\n";
  }

  ExtractionConfig ec = cfg.extraction;
  ec.sequence_length = cfg.eval.sequence_length;
  std::vector<IndexSequence> test;
  for (const auto& v : ds.subset("test")) {
    if (auto s = select_test_sequence(v, ec)) test.push_back(*s);
  }
  write_index_file((dir / "test.txt").string(), test);
  log.log(0, "test_sequences", static_cast<double>(test.size()));
  std::cout << "test: " << test.size() << " sequences\nrun directory: " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& stage, std::optional<int64_t> steps,
              const std::string& checkpoint, const std::vector<std::string>& argv) {
  auto cfg = resolve_config(c);
  std::optional<TrainState> state;
  if (!checkpoint.empty()) {
    if (stage == "unet") throw UsageError("--checkpoint resumes CVAE training only");
    state.emplace(TrainState::load(checkpoint));
    cfg.train = state->config;  // a resumed run continues with the config it was started with
  }
  if (stage == "full" && steps) {
    throw UsageError("--steps is not used with --stage full; set budgets in the config");
  }
  const auto ds = load_dataset(resolve_data_root(cfg));
  auto videos = at_resolution(ds.subset("train"), cfg.train.arch);
  const auto data = TrainingData::build(std::move(videos), cfg.train);
  const auto dir = open_run_dir(c, cfg, "train", argv,
                                {{"stage", stage}, {"resumed_from", checkpoint}});
  MetricsLog log(dir / "metrics.log");

  if (stage == "unet") {
    auto ucfg = cfg.unet;
    if (steps) ucfg.steps = *steps;
    const auto unet = unet_train(data, ucfg, cfg.train.arch, make_features(cfg), cfg.train.weights, &log);
    unet.save(dir / "unet.ckpt");
    log.flush();
    update_run_json(dir, {{"unet_parameters", unet.parameter_count()}});
    std::cout << "unet checkpoint: " << (dir / "unet.ckpt").string() << "\n";
    return 0;
  }

  if (!state) state.emplace(make_state(cfg));
  TrainHooks hooks;
  hooks.log = &log;
  hooks.snapshot_dir = dir;
  hooks.on_boundary = [&](const TrainState& s, const std::string& label) {
    fs::create_directories(dir / "checkpoints");
    s.save(dir / "checkpoints" / (label + ".ckpt"));
    std::cout << "step " << s.global_step << ": finished " << label << std::endl;
  };
  if (stage == "pairwise") {
    train_pairwise(*state, data, steps.value_or(cfg.train.pairwise_steps), hooks);
  } else if (stage == "seq-cvae") {
    train_sequential_cvae(*state, data, steps.value_or(cfg.train.sequential_steps), hooks);
  } else if (stage == "seq-sample") {
    train_sequential_sampling(*state, data, steps.value_or(cfg.train.sequential_steps), hooks);
  } else {
    train_full(*state, data, hooks);
  }
  if (stage != "full") hooks.on_boundary(*state, stage);
  log.flush();
  state->save(dir / "state.ckpt");
  state->params.save(dir / "model.ckpt");
  update_run_json(dir, {{"global_step", state->global_step},
                        {"pairwise_steps", state->pairwise_steps},
                        {"cvae_steps", state->cvae_steps},
                        {"sampling_steps", state->sampling_steps}});
  std::cout << "checkpoint: " << (dir / "state.ckpt").string() << "\n";
  return 0;
}

int cmd_synthesize(const Common& c, const std::string& method, const std::string& painting,
                   int64_t samples, int64_t steps, const std::string& checkpoint,
                   const std::vector<std::string>& argv) {
  const auto cfg = resolve_config(c);
  if (samples < 1) throw UsageError("--samples must be >= 1");
  if (steps < 1) throw UsageError("--steps must be >= 1");
  if (method != "interp" && checkpoint.empty()) throw UsageError("--method " + method + " needs --checkpoint");
  if (method == "unet" && steps != UnetBaselineParams::kFrames) {
    throw UsageError("the unet baseline always produces " +
                     std::to_string(UnetBaselineParams::kFrames) + " steps");
  }
  const auto x_final = read_png(painting);
  const auto dir = open_run_dir(c, cfg, "synthesize", argv, {{"method", method}});

  std::vector<std::vector<Frame>> videos;
  if (method == "ours") {
    const auto params = load_model(checkpoint);
    videos = synthesize_many({x_final, steps, cfg.seed}, samples, params);
  } else if (method == "interp") {
    videos.assign(static_cast<size_t>(samples), interp_video(x_final, steps).frames());
  } else {
    const auto unet = UnetBaselineParams::load(checkpoint);
    videos.assign(static_cast<size_t>(samples), unet_predict(x_final, unet).frames());
  }
  for (size_t i = 0; i < videos.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    write_video(dir / name, PaintingVideo(name, Medium::synthetic, videos[i], std::nullopt, true));
  }
  std::cout << "wrote " << videos.size() << " videos of " << videos.front().size()
            << " frames to " << dir.string() << "\n";
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_evaluate(const Common& c, std::optional<int64_t> k, const std::string& methods,
                 const std::string& checkpoint, const std::string& unet_checkpoint,
                 const std::vector<std::string>& argv) {
  auto cfg = resolve_config(c);
  if (k) cfg.eval.k = *k;
  if (cfg.eval.k < 1) throw UsageError("--k must be >= 1");
  const auto names = split_list(methods);
  if (names.empty()) throw UsageError("--methods is empty");

  std::vector<EvalMethod> list;
  std::optional<ModelParams> ours;
  std::optional<UnetBaselineParams> unet;
  const int64_t steps = cfg.eval.sequence_length;
  for (const auto& name : names) {
    if (name == "ours") {
      if (checkpoint.empty()) throw UsageError("method 'ours' needs --checkpoint");
      ours.emplace(load_model(checkpoint));
      list.push_back({"ours", [&ours, steps](const Frame& x, uint64_t seed) {
                        return synthesize_video({x, steps, seed}, *ours);
                      },
                      false});
    } else if (name == "interp") {
      list.push_back({"interp", [steps](const Frame& x, uint64_t) {
                        return interp_video(x, steps).frames();
                      },
                      true});
    } else if (name == "unet") {
      if (unet_checkpoint.empty()) throw UsageError("method 'unet' needs --unet-checkpoint");
      unet.emplace(UnetBaselineParams::load(unet_checkpoint));
      list.push_back({"unet", [&unet](const Frame& x, uint64_t) {
                        return unet_predict(x, *unet).frames();
                      },
                      true});
    } else {
      throw UsageError("unknown method '" + name + "' (expected ours, interp or unet)");
    }
  }

  const auto ds = load_dataset(resolve_data_root(cfg));
  const auto dir = open_run_dir(c, cfg, "evaluate", argv,
                                {{"methods", names}, {"checkpoint", checkpoint},
                                 {"unet_checkpoint", unet_checkpoint}});
  EvalOptions o;
  o.k = cfg.eval.k;
  o.crops_per_video = cfg.eval.crops_per_video;
  o.crop_size = cfg.eval.crop_size;
  o.sequence_length = cfg.eval.sequence_length;
  o.extraction = cfg.extraction;
  o.change_threshold = cfg.eval.change_threshold;
  o.seed = cfg.seed;
  const auto report = evaluate_methods(ds.subset("test"), list, o);
  std::ofstream(dir / "report.csv") << report.to_csv();
  std::ofstream(dir / "report.txt") << report.to_table();
  std::cout << report.to_table();
  for (const auto& s : report.skipped) std::cout << "skipped " << s.video << ": " << s.reason << "\n";
  std::cout << "run directory: " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paintlapse: painting time-lapse synthesis"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "master seed; overrides every seed in the config");
  app.add_option("--out", common.out, "output path (dataset root or run directory)");
  app.add_option("--runs-dir", common.runs_dir, "parent of timestamped run directories");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::optional<int64_t> n_videos;
  gen->add_option("--n-videos", n_videos, "number of videos");

  auto* extract = app.add_subcommand("extract", "extract training and test index sequences");

  auto* train = app.add_subcommand("train", "train the model or the unet baseline");
  std::string stage = "full";
  std::optional<int64_t> train_steps;
  std::string checkpoint;
  train->add_option("--stage", stage)
      ->check(CLI::IsMember({"pairwise", "seq-cvae", "seq-sample", "full", "unet"}));
  train->add_option("--steps", train_steps, "step count for a single stage");
  train->add_option("--checkpoint", checkpoint, "training state to resume from");

  auto* synth = app.add_subcommand("synthesize", "synthesize time-lapse videos for a painting");
  std::string method = "ours", painting;
  int64_t samples = 1, steps = 40;
  synth->add_option("--method", method)->check(CLI::IsMember({"ours", "interp", "unet"}));
  synth->add_option("--painting", painting, "PNG of the finished painting")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--samples", samples);
  synth->add_option("--steps", steps);
  synth->add_option("--checkpoint", checkpoint, "model or unet checkpoint");

  auto* eval = app.add_subcommand("evaluate", "best-of-k L1 and change IOU on the test split");
  std::optional<int64_t> k;
  std::string methods = "ours,interp,unet", unet_checkpoint;
  eval->add_option("--k", k, "samples per cell");
  eval->add_option("--methods", methods, "comma-separated list of ours, interp, unet");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint for 'ours'");
  eval->add_option("--unet-checkpoint", unet_checkpoint, "checkpoint for 'unet'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  const std::vector<std::string> args(argv, argv + argc);

  try {
    if (*gen) return cmd_gen_data(common, n_videos);
    if (*extract) return cmd_extract(common, args);
    if (*train) return cmd_train(common, stage, train_steps, checkpoint, args);
    if (*synth) return cmd_synthesize(common, method, painting, samples, steps, checkpoint, args);
    if (*eval) return cmd_evaluate(common, k, methods, checkpoint, unet_checkpoint, args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
