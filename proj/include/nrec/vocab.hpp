#pragma once

// Token/entity/category vocabularies and pre-trained embedding tables.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nrec/error.hpp"
#include "nrec/log.hpp"
#include "nrec/rng.hpp"
#include "nrec/tensor.hpp"
#include "nrec/text.hpp"

namespace nrec {

// Maps strings to dense row indices. Index 0 is padding and index 1 is the
// out-of-vocabulary bucket; real entries start at 2.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kOov = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kOovToken = "<oov>";

  Vocabulary() : tokens_{kPadToken, kOovToken} {}

  // Orders by descending count, ties by byte-wise lexicographic order.
  static Vocabulary from_counts(const std::map<std::string, std::size_t>& counts, std::size_t min_count = 1) {
    std::vector<std::pair<std::string, std::size_t>> entries;
    for (const auto& [tok, n] : counts)
      if (n >= min_count && !tok.empty()) entries.emplace_back(tok, n);
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (auto& [tok, n] : entries) v.add(tok);
    return v;
  }

  // Rebuilds a vocabulary from its full token list (reserved entries included).
  static Vocabulary from_token_list(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kOovToken)
      throw InputError("vocabulary file does not start with the reserved <pad>/<oov> entries");
    Vocabulary v;
    for (std::size_t i = 2; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  std::int32_t index(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kOov : it->second;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64("vocab");
    for (const auto& t : tokens_) h = fnv1a64(t + '\n', h);
    return h;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read vocabulary " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return from_token_list(tokens);
  }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token) {
    if (index_.count(token) || token == kPadToken || token == kOovToken) return;
    index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Counts tokenized words across `texts` and builds a vocabulary.
inline Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& tok : tokenize(text)) ++counts[tok];
  return Vocabulary::from_counts(counts, min_count);
}

// Vocabulary over opaque ids (entity QIDs, categories); no tokenisation.
inline Vocabulary build_id_vocabulary(std::span<const std::string> ids, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& id : ids)
    if (!id.empty()) ++counts[id];
  return Vocabulary::from_counts(counts, min_count);
}

struct EmbeddingTable {
  Vocabulary vocab;
  Tensor matrix;                       // vocab.size() x dim, row 0 all zero
  std::vector<std::uint8_t> trainable; // row 0 is 0
  std::vector<std::uint8_t> from_file; // 1 where the row came from a pre-trained file
  std::size_t covered = 0;             // real entries found in the file

  std::size_t dim() const { return matrix.cols(); }

  double coverage() const {
    const std::size_t real = vocab.size() > 2 ? vocab.size() - 2 : 0;
    return real == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(real);
  }
};

namespace detail {

// Rows not found in a file are seeded per key, so the draw does not depend
// on file order or on which other keys exist.
inline void fill_random_row(Tensor& m, std::size_t row, std::string_view key, std::uint64_t seed) {
  Rng rng(mix_seed(seed, key));
  const std::size_t d = m.cols();
  for (std::size_t j = 0; j < d; ++j) m.data[row * d + j] = rng.uniform(-0.1f, 0.1f);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

inline EmbeddingTable random_embedding_table(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable table{vocab, Tensor::zeros({vocab.size(), dim}), std::vector<std::uint8_t>(vocab.size(), 1),
                       std::vector<std::uint8_t>(vocab.size(), 0), 0};
  table.trainable[0] = 0;
  for (std::size_t r = 1; r < vocab.size(); ++r) detail::fill_random_row(table.matrix, r, vocab.token(r), seed);
  return table;
}

// Reads whitespace/tab separated "key v1 ... v_dim" lines. The dimension is
// taken from the first line and every later line must agree. Keys absent
// from the file get seeded uniform(-0.1, 0.1) rows.
inline EmbeddingTable load_vector_file(const std::filesystem::path& path, const Vocabulary& vocab, std::uint64_t seed,
                                       std::size_t expected_dim = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read embedding file " + path.string());
  std::unordered_map<std::string, std::vector<float>> found;
  std::size_t dim = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    const std::size_t n = fields.size() - 1;
    if (dim == 0) {
      if (n == 0) throw InputError(path.string() + ":" + std::to_string(line_no) + ": no vector values");
      dim = n;
      if (expected_dim != 0 && dim != expected_dim)
        throw InputError(path.string() + ": vectors have dimension " + std::to_string(dim) + ", configured " +
                         std::to_string(expected_dim));
    } else if (n != dim) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": dimension " + std::to_string(n) +
                       " differs from " + std::to_string(dim));
    }
    const std::string key(fields[0]);
    if (!vocab.contains(key) || found.count(key)) continue;
    std::vector<float> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const auto f = fields[j + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v[j]);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(f) + "'");
    }
    found.emplace(key, std::move(v));
  }
  if (dim == 0) {
    if (expected_dim == 0) throw InputError(path.string() + ": empty embedding file");
    dim = expected_dim;
  }

  EmbeddingTable table = random_embedding_table(vocab, dim, seed);
  for (std::size_t r = 2; r < vocab.size(); ++r) {
    auto it = found.find(vocab.token(r));
    if (it == found.end()) continue;
    std::copy(it->second.begin(), it->second.end(), table.matrix.data.begin() + static_cast<std::ptrdiff_t>(r * dim));
    table.from_file[r] = 1;
    ++table.covered;
  }
  return table;
}

// GloVe text format.
inline EmbeddingTable load_word_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, std::uint64_t seed,
                                           std::size_t expected_dim = 0) {
  auto table = load_vector_file(path, vocab, seed, expected_dim);
  log().info("word embeddings: {}/{} tokens covered ({:.1f}%), dim {}", table.covered,
             vocab.size() > 2 ? vocab.size() - 2 : 0, 100.0 * table.coverage(), table.dim());
  return table;
}

// MIND entity_embedding.vec (TransE, "QID\tv1\t...\tv100"). Entities missing
// from the file, including newly generated ones, start from random rows.
inline EmbeddingTable load_entity_embeddings(const std::filesystem::path& path, const Vocabulary& entities,
                                             std::uint64_t seed, std::size_t expected_dim = 0) {
  auto table = load_vector_file(path, entities, seed ^ 0xE17E17ULL, expected_dim);
  log().info("entity embeddings: {}/{} entities covered ({:.1f}%), dim {}", table.covered,
             entities.size() > 2 ? entities.size() - 2 : 0, 100.0 * table.coverage(), table.dim());
  return table;
}

}  // namespace nrec
