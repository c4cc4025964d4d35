#pragma once

// News encoder (title / entity / category views fused by attention), user
// encoder and dot-product click scorer.

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nrec/kernels.hpp"
#include "nrec/training_data.hpp"
#include "nrec/vocab.hpp"

namespace nrec {

struct ModelConfig {
  std::size_t word_dim = 300;
  std::size_t entity_dim = 100;
  std::size_t category_dim = 100;
  std::size_t n_filters = 400;  // also the news/user embedding width
  std::size_t window = 3;
  std::size_t att_dim = 200;
  std::size_t heads = 4;
  bool use_subcategory = false;
  double word_dropout = 0.0;

  std::size_t d_news() const { return n_filters; }

  void validate() const {
    if (word_dim == 0 || entity_dim == 0 || category_dim == 0 || n_filters == 0 || att_dim == 0)
      throw ConfigError("model dimensions must be positive");
    if (window % 2 == 0) throw ConfigError("window must be odd, got " + std::to_string(window));
    if (heads == 0 || entity_dim % heads != 0)
      throw ConfigError("entity_dim " + std::to_string(entity_dim) + " is not divisible by heads " + std::to_string(heads));
    if (word_dropout < 0.0 || word_dropout >= 1.0) throw ConfigError("word_dropout must be in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"word_dim", c.word_dim}, {"entity_dim", c.entity_dim}, {"category_dim", c.category_dim},
       {"n_filters", c.n_filters}, {"window", c.window},        {"att_dim", c.att_dim},
       {"heads", c.heads},         {"use_subcategory", c.use_subcategory}, {"word_dropout", c.word_dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("word_dim").get_to(c.word_dim);
  j.at("entity_dim").get_to(c.entity_dim);
  j.at("category_dim").get_to(c.category_dim);
  j.at("n_filters").get_to(c.n_filters);
  j.at("window").get_to(c.window);
  j.at("att_dim").get_to(c.att_dim);
  j.at("heads").get_to(c.heads);
  j.at("use_subcategory").get_to(c.use_subcategory);
  j.at("word_dropout").get_to(c.word_dropout);
}

// Table sizes the parameter shapes depend on.
struct ModelShape {
  std::size_t words = 2;
  std::size_t entities = 2;
  std::size_t categories = 2;
  std::size_t subcategories = 2;

  static ModelShape of(const FeatureSpace& fs) {
    return {fs.words.size(), fs.entities.size(), fs.categories.size(), fs.subcategories.size()};
  }
  bool operator==(const ModelShape&) const = default;
};

namespace detail {

inline Parameter embedding_parameter(const std::string& name, std::size_t rows, std::size_t dim, std::uint64_t seed,
                                     std::string_view salt) {
  Parameter p(name, Tensor::zeros({rows, dim}));
  Rng rng(mix_seed(seed, salt));
  for (std::size_t i = dim; i < p.value.size(); ++i) p.value.data[i] = rng.uniform(-0.1f, 0.1f);
  p.row_trainable.assign(rows, 1);
  p.row_trainable[0] = 0;
  return p;
}

}  // namespace detail

class NewsRecModel {
 public:
  NewsRecModel(ModelConfig config, ModelShape shape, std::uint64_t seed) : config_(config), shape_(shape) {
    config_.validate();
    const std::size_t d = config_.d_news();
    Rng rng(mix_seed(seed, std::string_view("model")));
    word_emb_ = detail::embedding_parameter("word_embedding", shape.words, config_.word_dim, seed, "word_embedding");
    conv_w_ = Parameter("title.conv.w", glorot_uniform({d, config_.window * config_.word_dim}, config_.window * config_.word_dim, d, rng));
    conv_b_ = Parameter("title.conv.b", Tensor::zeros({d}));
    title_att_ = AdditiveAttentionParams::create("title.att", d, config_.att_dim, rng);
    entity_emb_ = detail::embedding_parameter("entity_embedding", shape.entities, config_.entity_dim, seed, "entity_embedding");
    entity_sa_ = SelfAttentionParams::create("entity.sa", config_.entity_dim, config_.heads, rng);
    entity_att_ = AdditiveAttentionParams::create("entity.att", config_.entity_dim, config_.att_dim, rng);
    entity_proj_w_ = Parameter("entity.proj.w", glorot_uniform({d, config_.entity_dim}, config_.entity_dim, d, rng));
    entity_proj_b_ = Parameter("entity.proj.b", Tensor::zeros({d}));
    category_emb_ = detail::embedding_parameter("category_embedding", shape.categories, config_.category_dim, seed, "category_embedding");
    const std::size_t cat_in = config_.category_dim * (config_.use_subcategory ? 2 : 1);
    if (config_.use_subcategory)
      subcategory_emb_ = detail::embedding_parameter("subcategory_embedding", shape.subcategories, config_.category_dim, seed,
                                                     "subcategory_embedding");
    category_w_ = Parameter("category.dense.w", glorot_uniform({d, cat_in}, cat_in, d, rng));
    category_b_ = Parameter("category.dense.b", Tensor::zeros({d}));
    view_att_ = AdditiveAttentionParams::create("view.att", d, config_.att_dim, rng);
    user_att_ = AdditiveAttentionParams::create("user.att", d, config_.att_dim, rng);
  }

  const ModelConfig& config() const { return config_; }
  const ModelShape& shape() const { return shape_; }

  // Replaces the word/entity rows with pre-trained (or seeded) tables and
  // takes over their per-row trainability.
  void set_word_embeddings(const EmbeddingTable& t) { copy_table(word_emb_, t, config_.word_dim, "word"); }
  void set_entity_embeddings(const EmbeddingTable& t) { copy_table(entity_emb_, t, config_.entity_dim, "entity"); }

  // Fixed order; checkpoints and optimizer state rely on it.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps{&word_emb_, &conv_w_, &conv_b_};
    for (auto* p : title_att_.parameters()) ps.push_back(p);
    ps.push_back(&entity_emb_);
    for (auto* p : entity_sa_.parameters()) ps.push_back(p);
    for (auto* p : entity_att_.parameters()) ps.push_back(p);
    ps.insert(ps.end(), {&entity_proj_w_, &entity_proj_b_, &category_emb_});
    if (config_.use_subcategory) ps.push_back(&subcategory_emb_);
    ps.insert(ps.end(), {&category_w_, &category_b_});
    for (auto* p : view_att_.parameters()) ps.push_back(p);
    for (auto* p : user_att_.parameters()) ps.push_back(p);
    return ps;
  }

  Parameter* find(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // Title view: embed -> conv1d -> additive attention.
  AttentionOutput encode_title_view(Tape& tape, std::span<const std::int32_t> tokens, std::span<const std::uint8_t> mask,
                                    Rng* dropout = nullptr) {
    const std::size_t n = real_prefix(mask, tokens.size());
    if (n == 0) throw InputError("title has no real tokens");
    Var x = embed_lookup(tape, word_emb_, tokens.first(n));
    if (dropout != nullptr && config_.word_dropout > 0.0) x = ad::dropout(x, static_cast<float>(config_.word_dropout), *dropout);
    Var conv = conv1d(x, tape.param(conv_w_), tape.param(conv_b_), config_.window);
    return additive_attention(conv, title_att_, mask.empty() ? mask : mask.first(n));
  }

  // Entity view: embed -> self-attention -> additive attention -> linear to
  // d_news. Returns nullopt when the article has no entities.
  std::optional<Var> encode_entity_view(Tape& tape, std::span<const std::int32_t> entities, std::span<const std::uint8_t> mask) {
    const std::size_t n = real_prefix(mask, entities.size());
    if (n == 0) return std::nullopt;
    const auto m = mask.empty() ? mask : mask.first(n);
    bool any = m.empty();
    for (auto v : m) any = any || v != 0;
    if (!any) return std::nullopt;
    Var e = embed_lookup(tape, entity_emb_, entities.first(n));
    Var ctx = self_attention(e, entity_sa_, m);
    Var pooled = additive_attention(ctx, entity_att_, m).pooled;
    Var b = tape.param(entity_proj_b_);
    Var proj = ad::linear(ad::reshape(pooled, {1, config_.entity_dim}), tape.param(entity_proj_w_), &b);
    return ad::reshape(proj, {config_.d_news()});
  }

  // Category view: category (and optionally subcategory) embedding -> dense + ReLU.
  Var encode_category_view(Tape& tape, std::int32_t category, std::int32_t subcategory) {
    const std::int32_t c[1] = {category};
    Var x = embed_lookup(tape, category_emb_, c);
    if (config_.use_subcategory) {
      const std::int32_t s[1] = {subcategory};
      const Var parts[2] = {x, embed_lookup(tape, subcategory_emb_, s)};
      x = ad::concat_cols(parts);
    }
    Var b = tape.param(category_b_);
    return ad::reshape(ad::relu(ad::linear(x, tape.param(category_w_), &b)), {config_.d_news()});
  }

  struct NewsEncoding {
    Var vector;        // d_news
    Var view_weights;  // 3: title, entity, category
  };

  // Attention over the three views; an absent entity view is masked out.
  NewsEncoding fuse_views(Tape& tape, Var title, std::optional<Var> entity, Var category) {
    const Var entity_row = entity ? *entity : tape.constant(Tensor::zeros({config_.d_news()}));
    const Var rows[3] = {title, entity_row, category};
    const std::uint8_t mask[3] = {1, static_cast<std::uint8_t>(entity ? 1 : 0), 1};
    auto out = additive_attention(ad::stack_rows(rows), view_att_, mask);
    return {out.pooled, out.weights};
  }

  NewsEncoding encode_news(Tape& tape, const NewsFeatures& f, Rng* dropout = nullptr) {
    Var title = encode_title_view(tape, f.tokens, f.token_mask, dropout).pooled;
    auto entity = encode_entity_view(tape, f.entities, f.entity_mask);
    Var category = encode_category_view(tape, f.category, f.subcategory);
    return fuse_views(tape, title, entity, category);
  }

  // Attention over clicked-news embeddings; an empty history gives the zero
  // vector.
  Var encode_user(Tape& tape, std::span<const Var> history) {
    if (history.empty()) return tape.constant(Tensor::zeros({config_.d_news()}));
    return additive_attention(ad::stack_rows(history), user_att_).pooled;
  }

  static Var score(Var user, Var candidate) { return ad::dot(user, candidate); }

  // Scores of every candidate against one user vector, as a vector.
  Var candidate_logits(Var user, std::span<const Var> candidates) {
    Var c = ad::stack_rows(candidates);
    return ad::reshape(ad::matmul(c, ad::reshape(user, {config_.d_news(), 1})), {candidates.size()});
  }

 private:
  // Length up to and including the last unmasked position. Positions past
  // it are padding whose embedding row is zero, so dropping them changes no
  // real output.
  static std::size_t real_prefix(std::span<const std::uint8_t> mask, std::size_t n) {
    if (mask.empty()) return n;
    if (mask.size() != n) throw ConfigError("mask length does not match sequence length");
    std::size_t len = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) len = i + 1;
    return len;
  }

  static void copy_table(Parameter& p, const EmbeddingTable& t, std::size_t dim, const char* what) {
    if (t.dim() != dim)
      throw ConfigError(std::string(what) + " embeddings have dimension " + std::to_string(t.dim()) + ", model expects " +
                        std::to_string(dim));
    if (t.matrix.rows() != p.value.rows())
      throw ConfigError(std::string(what) + " embedding table has " + std::to_string(t.matrix.rows()) + " rows, model expects " +
                        std::to_string(p.value.rows()));
    p.value = t.matrix;
    p.row_trainable = t.trainable;
    p.zero_grad();
  }

  ModelConfig config_;
  ModelShape shape_;
  Parameter word_emb_, conv_w_, conv_b_;
  AdditiveAttentionParams title_att_;
  Parameter entity_emb_;
  SelfAttentionParams entity_sa_;
  AdditiveAttentionParams entity_att_;
  Parameter entity_proj_w_, entity_proj_b_;
  Parameter category_emb_, subcategory_emb_;
  Parameter category_w_, category_b_;
  AdditiveAttentionParams view_att_, user_att_;
};

// Per-tape news cache: an article that occurs several times in one batch
// (shared history, repeated negatives) is encoded once.
class BatchEncoder {
 public:
  BatchEncoder(NewsRecModel& model, Tape& tape, Rng* dropout = nullptr) : model_(model), tape_(tape), dropout_(dropout) {}

  Var news(const NewsFeatures& f) {
    if (f.news_id.empty()) return model_.encode_news(tape_, f, dropout_).vector;
    auto it = memo_.find(f.news_id);
    if (it != memo_.end()) return it->second;
    Var v = model_.encode_news(tape_, f, dropout_).vector;
    memo_.emplace(f.news_id, v);
    return v;
  }

  Var user(std::span<const NewsFeatures> history, std::span<const std::uint8_t> mask) {
    std::vector<Var> items;
    for (std::size_t i = 0; i < history.size(); ++i)
      if (mask.empty() || mask[i]) items.push_back(news(history[i]));
    return model_.encode_user(tape_, items);
  }

  // Logits over the 1 + K candidates of a training example.
  Var logits(const TrainingExample& ex) {
    Var u = user(ex.history, ex.history_mask);
    std::vector<Var> cands;
    for (const auto& c : ex.candidates) cands.push_back(news(c));
    return model_.candidate_logits(u, cands);
  }

  Var loss(const TrainingExample& ex) { return softmax_cross_entropy(logits(ex), ex.target_index); }

  std::size_t cached() const { return memo_.size(); }

 private:
  NewsRecModel& model_;
  Tape& tape_;
  Rng* dropout_;
  std::unordered_map<std::string, Var> memo_;
};

// Frozen-parameter inference helpers (safe to call from several threads).
inline std::vector<float> infer_news(NewsRecModel& model, const NewsFeatures& f) {
  Tape tape(false);
  return model.encode_news(tape, f).vector.value().data;
}

inline std::vector<float> infer_user(NewsRecModel& model, std::span<const std::vector<float>* const> history) {
  Tape tape(false);
  std::vector<Var> items;
  for (const auto* h : history) items.push_back(tape.constant(Tensor({h->size()}, *h)));
  return model.encode_user(tape, items).value().data;
}

inline double dot_score(std::span<const float> u, std::span<const float> c) {
  if (u.size() != c.size()) throw InputError("score: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<double>(u[i]) * c[i];
  return s;
}

}  // namespace nrec
