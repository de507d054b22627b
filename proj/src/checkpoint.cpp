#include "paintlapse/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace paintlapse {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'A', 'P', 'S', 'E', 'C', 'K'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw CheckpointError("unsupported tensor dtype " + std::string(c10::toString(t)));
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "u8") return torch::kUInt8;
  throw CheckpointError("unknown dtype tag '" + s + "'");
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(std::istream& in) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw CheckpointError("truncated checkpoint header");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["entries"] = nlohmann::json::array();
  std::vector<std::pair<const char*, size_t>> chunks;
  std::vector<torch::Tensor> keep_alive;
  uint64_t offset = 0;

  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    keep_alive.push_back(c);
    const size_t nbytes = c.numel() * c.element_size();
    header["entries"].push_back({{"name", name},
                                 {"kind", "tensor"},
                                 {"dtype", dtype_name(c.scalar_type())},
                                 {"shape", c.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    chunks.emplace_back(static_cast<const char*>(c.data_ptr()), nbytes);
    offset += nbytes;
  }
  for (const auto& [name, b] : blobs) {
    header["entries"].push_back(
        {{"name", name}, {"kind", "bytes"}, {"offset", offset}, {"nbytes", b.size()}});
    chunks.emplace_back(b.data(), b.size());
    offset += b.size();
  }

  const std::string text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write '" + tmp + "'");
    out.write(kMagic, sizeof(kMagic));
    write_le<uint32_t>(out, kFormatVersion);
    write_le<uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [ptr, n] : chunks) out.write(ptr, static_cast<std::streamsize>(n));
    if (!out) throw CheckpointError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  }
  const auto version = read_le<uint32_t>(in);
  if (version != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version) +
                          " (expected " + std::to_string(kFormatVersion) + ")");
  }
  const auto header_len = read_le<uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  const auto payload_start = in.tellg();
  Checkpoint ck;
  ck.meta = header.at("meta");
  for (const auto& e : header.at("entries")) {
    const auto name = e.at("name").get<std::string>();
    const auto off = e.at("offset").get<uint64_t>();
    const auto nbytes = e.at("nbytes").get<uint64_t>();
    in.seekg(payload_start + static_cast<std::streamoff>(off));
    std::string buf(nbytes, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(nbytes));
    if (!in) throw CheckpointError("truncated payload for entry '" + name + "'");
    if (e.at("kind") == "bytes") {
      ck.blobs.emplace(name, std::move(buf));
      continue;
    }
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_name(e.at("dtype"))));
    if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw CheckpointError("entry '" + name + "' size does not match its shape");
    }
    std::memcpy(t.data_ptr(), buf.data(), nbytes);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::blob(const std::string& name) const {
  auto it = blobs.find(name);
  if (it == blobs.end()) throw CheckpointError("checkpoint has no blob '" + name + "'");
  return it->second;
}

}  // namespace paintlapse
