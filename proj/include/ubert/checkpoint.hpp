// Versioned binary checkpoints.
//
// Layout (host byte order, little-endian on all supported targets):
//   "UBERTCKP"                  8-byte magic
//   u32 version                 currently 1
//   u32 scalar_bytes            4 for float models, 8 for double
//   u64 n + n bytes             JSON: pipeline config and trainable mask
//   u64 parameter count
//   per parameter: u32 name length, name, u32 rank, u64 dims[rank], raw values
//   u64 FNV-1a hash of every preceding byte
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/model.hpp"
#include "ubert/pipeline.hpp"

namespace ubert {

inline constexpr char kCheckpointMagic[8] = {'U', 'B', 'E', 'R', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <std::floating_point T>
struct Checkpoint {
  PipelineConfig pipeline;
  ModelState<T> state;
  nlohmann::json extra;  // free-form metadata, e.g. the resolved run config
};

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  template <class V>
  void put(const V& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}
  template <class V>
  V get(const char* what) {
    V v;
    std::memcpy(&v, take(sizeof(V), what), sizeof(V));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > n_ - pos_) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& state, const PipelineConfig& pipeline,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  if (!(pipeline.model == state.config())) throw std::invalid_argument("save_checkpoint: pipeline/model config mismatch");
  nlohmann::json header;
  header["pipeline"] = pipeline;
  nlohmann::json mask = nlohmann::json::object();
  for (const auto& g : state.groups()) mask[g] = state.trainable(g);
  header["trainable"] = mask;
  header["extra"] = extra;
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(T)));
  w.put(static_cast<std::uint64_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  w.put(static_cast<std::uint64_t>(state.names().size()));
  for (const auto& name : state.names()) {
    const auto& p = state.param(name);
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(p.data().data(), p.size() * sizeof(T));
  }
  const auto hash = fnv1a(w.bytes().data(), w.bytes().size());
  w.put(hash);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

// Loads and validates a checkpoint. When `expected` is given, the stored
// model configuration must equal it.
template <std::floating_point T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kMinSize = sizeof(kCheckpointMagic) + 4 + 4 + 8 + 8 + 8;
  if (bytes.size() < kMinSize) throw CheckpointError("checkpoint: file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored_hash;
  std::memcpy(&stored_hash, bytes.data() + body, sizeof(stored_hash));
  detail::ByteReader r(bytes.data() + sizeof(kCheckpointMagic), body - sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (fnv1a(bytes.data(), body) != stored_hash) throw CheckpointError("checkpoint: checksum mismatch (truncated or corrupt)");
  const auto scalar_bytes = r.get<std::uint32_t>("scalar width");
  if (scalar_bytes != sizeof(T)) {
    throw CheckpointError("checkpoint: stored " + std::to_string(scalar_bytes * 8) + "-bit values, loader expects " +
                          std::to_string(sizeof(T) * 8) + "-bit");
  }
  const auto text_len = r.get<std::uint64_t>("header length");
  const auto* text = r.take(text_len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text, text + text_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }

  Checkpoint<T> ck;
  try {
    ck.pipeline = header.at("pipeline").get<PipelineConfig>();
    ck.extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  const auto& model_cfg = ck.pipeline.model;
  if (expected && !(*expected == model_cfg)) {
    throw CheckpointError("checkpoint: model config mismatch: stored " + nlohmann::json(model_cfg).dump() +
                          ", expected " + nlohmann::json(*expected).dump());
  }
  try {
    ck.state = ModelState<T>::initialize(model_cfg, 0);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid stored config: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>("parameter count");
  if (count != ck.state.names().size()) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " parameters stored, config implies " +
                          std::to_string(ck.state.names().size()));
  }
  std::vector<T> values;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    const auto* name_ptr = r.take(name_len, "parameter name");
    const std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
    if (!ck.state.contains(name)) throw CheckpointError("checkpoint: unknown parameter " + name);
    const auto rank = r.get<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>("parameter shape"));
    const auto& expected_shape = ck.state.param(name).shape();
    if (shape != expected_shape) {
      throw CheckpointError("checkpoint: parameter " + name + " has shape " + shape_string(shape) + ", config implies " +
                            shape_string(expected_shape));
    }
    values.resize(element_count(shape));
    std::memcpy(values.data(), r.take(values.size() * sizeof(T), "parameter values"), values.size() * sizeof(T));
    ck.state.assign(name, values);
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes before checksum");
  try {
    for (const auto& [group, on] : header.at("trainable").items()) ck.state.set_trainable(group, on.template get<bool>());
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad trainable mask: ") + e.what());
  }
  return ck;
}

}  // namespace ubert
