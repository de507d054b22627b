#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "paintlapse/baselines.hpp"
#include "paintlapse/datapipe.hpp"
#include "paintlapse/evaluation.hpp"
#include "paintlapse/json_keys.hpp"
#include "paintlapse/synthetic.hpp"
#include "paintlapse/training.hpp"

namespace paintlapse {

struct EvalConfig {
  int64_t k = 2000;
  int64_t crops_per_video = 5;
  int64_t crop_size = 50;
  int64_t sequence_length = 40;
  double change_threshold = 0.05;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Complete configuration of a command. Serialized as JSON; see README for
/// the schema. Sections missing from a file keep their defaults and unknown
/// keys are rejected.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  uint64_t seed = 0;
  std::string data_root;          // empty: PAINTLAPSE_DATA_ROOT or "./data"
  std::string features_path;      // empty: seeded random feature extractor
  int64_t n_videos = 64;
  SyntheticSpec synthetic;
  ExtractionConfig extraction;    // shared by extract, train and evaluate
  TrainConfig train;              // train.extraction mirrors `extraction`
  UnetTrainConfig unet;
  EvalConfig eval;

  /// Sets every component seed to `seed`.
  void apply_seed(uint64_t seed);
  /// Checks every section.
  void validate() const;

  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// data_root if set, else $PAINTLAPSE_DATA_ROOT, else "data".
std::filesystem::path resolve_data_root(const RunConfig& c);

}  // namespace paintlapse
