#include "paintlapse/config.hpp"

#include <cstdlib>
#include <fstream>

namespace paintlapse {

using nlohmann::json;

void to_json(json& j, const EvalConfig& c) {
  j = json{{"k", c.k},
           {"crops_per_video", c.crops_per_video},
           {"crop_size", c.crop_size},
           {"sequence_length", c.sequence_length},
           {"change_threshold", c.change_threshold}};
}

void from_json(const json& j, EvalConfig& c) {
  check_keys(j, {"k", "crops_per_video", "crop_size", "sequence_length", "change_threshold"},
             "eval");
  read_key(j, "k", c.k);
  read_key(j, "crops_per_video", c.crops_per_video);
  read_key(j, "crop_size", c.crop_size);
  read_key(j, "sequence_length", c.sequence_length);
  read_key(j, "change_threshold", c.change_threshold);
}

void RunConfig::apply_seed(uint64_t s) {
  seed = s;
  synthetic.seed = s;
  train.seed = s;
  unet.seed = s;
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version) +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  if (n_videos < 3) throw ConfigError("n_videos must be >= 3 for a train/val/test split");
  auto wrap = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("synthetic", [&] { synthetic.validate(); });
  wrap("extraction", [&] { extraction.validate(); });
  wrap("train", [&] { train.validate(); });
  wrap("unet", [&] { unet.validate(); });
  if (eval.k < 1 || eval.crops_per_video < 1 || eval.crop_size < 8 || eval.sequence_length < 2 ||
      !(eval.change_threshold > 0 && eval.change_threshold < 1)) {
    throw ConfigError("eval: k >= 1, crops_per_video >= 1, crop_size >= 8, sequence_length >= 2 "
                      "and change_threshold in (0, 1) are required");
  }
}

void to_json(json& j, const RunConfig& c) {
  json train = c.train;
  train.erase("extraction");
  j = json{{"schema_version", c.schema_version},
           {"seed", c.seed},
           {"data_root", c.data_root},
           {"features_path", c.features_path},
           {"n_videos", c.n_videos},
           {"synthetic", c.synthetic},
           {"extraction", c.extraction},
           {"train", train},
           {"unet", c.unet},
           {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j, {"schema_version", "seed", "data_root", "features_path", "n_videos", "synthetic",
                 "extraction", "train", "unet", "eval"},
             "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  read_key(j, "schema_version", c.schema_version);
  read_key(j, "data_root", c.data_root);
  read_key(j, "features_path", c.features_path);
  read_key(j, "n_videos", c.n_videos);
  read_key(j, "synthetic", c.synthetic);
  read_key(j, "extraction", c.extraction);
  if (j.contains("train")) {
    if (j.at("train").contains("extraction")) {
      throw ConfigError("train: 'extraction' belongs at the top level of the config");
    }
    c.train = j.at("train").get<TrainConfig>();
  }
  read_key(j, "unet", c.unet);
  read_key(j, "eval", c.eval);
  c.train.extraction = c.extraction;
  if (j.contains("seed")) {
    // An explicit top-level seed drives every component seed.
    c.apply_seed(j.at("seed").get<uint64_t>());
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json(*this).dump(2) << "\n";
}

std::filesystem::path resolve_data_root(const RunConfig& c) {
  if (!c.data_root.empty()) return c.data_root;
  if (const char* env = std::getenv("PAINTLAPSE_DATA_ROOT"); env && *env) return env;
  return "data";
}

}  // namespace paintlapse
