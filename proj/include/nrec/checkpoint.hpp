#pragma once

// Checkpoint container.
//
// Binary file (little-endian):
//   "NRCK"  u32 format_version  u32 tensor_count
//   per tensor: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f32 values
// Sidecar <file>.json: model config, table shape, vocabulary hashes, any
// extra run configuration, a config hash and a checksum of the binary file.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrec/model.hpp"

namespace nrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct VocabHashes {
  std::uint64_t words = 0, entities = 0, categories = 0, subcategories = 0;

  static VocabHashes of(const FeatureSpace& fs) {
    return {fs.words.hash(), fs.entities.hash(), fs.categories.hash(), fs.subcategories.hash()};
  }
  bool operator==(const VocabHashes&) const = default;
};

struct CheckpointMeta {
  ModelConfig model;
  ModelShape shape;
  VocabHashes vocab;
  nlohmann::json run = nlohmann::json::object();  // training/feature configuration snapshot

  // Hash over everything that determines how the tensors are interpreted.
  std::uint64_t config_hash() const {
    const nlohmann::json j{{"model", model},
                           {"shape", {shape.words, shape.entities, shape.categories, shape.subcategories}},
                           {"vocab", {vocab.words, vocab.entities, vocab.categories, vocab.subcategories}},
                           {"run", run}};
    return fnv1a64(j.dump());
  }
};

class CheckpointError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (auto& f : out) f = std::bit_cast<float>(get<std::uint32_t>(what));
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(file_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) + " bytes, " +
           std::to_string(bytes_.size() - pos_) + " left)");
  }

  const std::string& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".json"; }

inline std::string encode_tensors(std::span<const Parameter* const> params) {
  std::string out = "NRCK";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.shape.size()));
    for (auto d : p->value.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float f : p->value.data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline std::vector<NamedTensor> decode_tensors(const std::string& bytes, const std::string& file) {
  detail::ByteReader r(bytes, file);
  if (r.get_string(4, "magic") != "NRCK") {
    throw CheckpointError(file + ": bad magic at byte offset 0 (not a checkpoint file)");
  }
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len == 0 || name_len > 4096) r.fail("implausible name length " + std::to_string(name_len));
    std::string name = r.get_string(name_len, "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for '" + name + "'");
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint32_t>("dimension");
      if (d == 0) r.fail("zero dimension in '" + name + "'");
      shape.push_back(d);
      n *= d;
      if (n > (std::size_t{1} << 34)) r.fail("tensor '" + name + "' is implausibly large");
    }
    Tensor t(shape);
    r.get_floats(t.data, "tensor values");
    out.push_back({std::move(name), std::move(t)});
  }
  if (!r.at_end()) r.fail("trailing bytes after the last tensor");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, NewsRecModel& model, CheckpointMeta meta) {
  meta.model = model.config();
  meta.shape = model.shape();
  const auto params = model.parameters();
  const std::string bytes = encode_tensors(std::vector<const Parameter*>(params.begin(), params.end()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::write_atomically(path, bytes);
  const nlohmann::json side{
      {"format_version", kCheckpointVersion},
      {"model", meta.model},
      {"shape", {{"words", meta.shape.words}, {"entities", meta.shape.entities}, {"categories", meta.shape.categories},
                 {"subcategories", meta.shape.subcategories}}},
      {"vocab_hashes", {{"words", detail::hex64(meta.vocab.words)}, {"entities", detail::hex64(meta.vocab.entities)},
                        {"categories", detail::hex64(meta.vocab.categories)},
                        {"subcategories", detail::hex64(meta.vocab.subcategories)}}},
      {"run", meta.run},
      {"config_hash", detail::hex64(meta.config_hash())},
      {"tensor_checksum", detail::hex64(fnv1a64(bytes))}};
  detail::write_atomically(sidecar_path(path), side.dump(2) + "\n");
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw InputError("cannot read checkpoint sidecar " + sidecar_path(path).string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw CheckpointError(sidecar_path(path).string() + ": not valid JSON");
  try {
    CheckpointMeta m;
    m.model = j.at("model").get<ModelConfig>();
    const auto& s = j.at("shape");
    m.shape = {s.at("words"), s.at("entities"), s.at("categories"), s.at("subcategories")};
    const auto& v = j.at("vocab_hashes");
    m.vocab = {detail::parse_hex64(v.at("words")), detail::parse_hex64(v.at("entities")),
               detail::parse_hex64(v.at("categories")), detail::parse_hex64(v.at("subcategories"))};
    m.run = j.at("run");
    if (detail::parse_hex64(j.at("config_hash")) != m.config_hash())
      throw CheckpointError(sidecar_path(path).string() + ": config hash mismatch (sidecar edited or corrupt)");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(sidecar_path(path).string() + ": missing or malformed field: " + e.what());
  }
}

// Loads a model. When `expected` is given, checkpoints built over different
// vocabularies are refused.
inline std::unique_ptr<NewsRecModel> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out = nullptr,
                                                     const std::optional<VocabHashes>& expected = std::nullopt) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (expected && !(*expected == meta.vocab))
    throw CheckpointError(path.string() + ": vocabulary hash mismatch; the checkpoint was trained on different vocabularies");
  const std::string bytes = detail::read_bytes(path);
  auto tensors = decode_tensors(bytes, path.string());
  {
    std::ifstream in(sidecar_path(path));
    const auto j = nlohmann::json::parse(in);
    if (detail::parse_hex64(j.at("tensor_checksum")) != fnv1a64(bytes))
      throw CheckpointError(path.string() + ": tensor file does not match its sidecar checksum");
  }
  auto model = std::make_unique<NewsRecModel>(meta.model, meta.shape, 0);
  const auto params = model->parameters();
  if (tensors.size() != params.size())
    throw CheckpointError(path.string() + ": holds " + std::to_string(tensors.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != params[i]->name)
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " is '" + tensors[i].name + "', expected '" +
                            params[i]->name + "'");
    if (tensors[i].value.shape != params[i]->value.shape)
      throw CheckpointError(path.string() + ": tensor '" + tensors[i].name + "' has shape " + tensors[i].value.shape_string() +
                            ", expected " + params[i]->value.shape_string());
    params[i]->value = std::move(tensors[i].value);
    params[i]->zero_grad();
  }
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace nrec
