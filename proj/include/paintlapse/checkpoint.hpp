#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

namespace paintlapse {

/// Single-file container for named arrays plus JSON metadata.
///
/// Layout (all integers little-endian):
///   8 bytes  magic "PLAPSECK"
///   u32      format version
///   u64      header length N
///   N bytes  JSON header: {"meta": {...}, "entries": [{name, kind, dtype,
///            shape, offset, nbytes}, ...]}
///   ...      payload; entry offsets are relative to the payload start
///
/// Tensors are stored raw (float32/float64/int64/uint8), so values round-trip
/// bit-exactly. `kind == "bytes"` entries hold opaque blobs such as optimizer
/// state.
class Checkpoint {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> blobs;

  void save(const std::filesystem::path& path) const;
  /// Throws CheckpointError on unknown versions or truncated files.
  static Checkpoint load(const std::filesystem::path& path);

  const torch::Tensor& tensor(const std::string& name) const;
  const std::string& blob(const std::string& name) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace paintlapse
