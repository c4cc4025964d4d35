#pragma once

// Feature extraction (token/entity/category index grids with masks) and
// negative-sampled training examples.

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nrec/error.hpp"
#include "nrec/mind.hpp"
#include "nrec/rng.hpp"
#include "nrec/text.hpp"
#include "nrec/vocab.hpp"

namespace nrec {

enum class EntitySource { original, enriched, union_of_both };

inline std::string to_string(EntitySource s) {
  switch (s) {
    case EntitySource::original: return "original";
    case EntitySource::enriched: return "enriched";
    case EntitySource::union_of_both: return "union";
  }
  return "?";
}

inline EntitySource entity_source_from_string(std::string_view s) {
  if (s == "original") return EntitySource::original;
  if (s == "enriched") return EntitySource::enriched;
  if (s == "union") return EntitySource::union_of_both;
  throw ConfigError("entity_source must be one of original|enriched|union, got '" + std::string(s) + "'");
}

struct FeatureConfig {
  std::size_t title_len = 40;
  std::size_t max_entities = 10;
  std::size_t max_history = 50;
  EntitySource entity_source = EntitySource::enriched;
};

struct NewsFeatures {
  std::string news_id;
  std::vector<std::int32_t> tokens;        // title_len, padded with 0
  std::vector<std::uint8_t> token_mask;
  std::vector<std::int32_t> entities;      // max_entities, padded with 0
  std::vector<std::uint8_t> entity_mask;
  std::int32_t category = Vocabulary::kPad;
  std::int32_t subcategory = Vocabulary::kPad;

  bool has_entities() const { return std::find(entity_mask.begin(), entity_mask.end(), 1) != entity_mask.end(); }
  bool is_padding() const { return std::find(token_mask.begin(), token_mask.end(), 1) == token_mask.end(); }

  static NewsFeatures padding(const FeatureConfig& c) {
    NewsFeatures f;
    f.tokens.assign(c.title_len, Vocabulary::kPad);
    f.token_mask.assign(c.title_len, 0);
    f.entities.assign(c.max_entities, Vocabulary::kPad);
    f.entity_mask.assign(c.max_entities, 0);
    return f;
  }

  bool operator==(const NewsFeatures&) const = default;
};

using EnrichedIndex = std::unordered_map<std::string, const EnrichedNews*>;

inline EnrichedIndex index_enriched(std::span<const EnrichedNews> enriched) {
  EnrichedIndex idx;
  for (const auto& e : enriched) idx.emplace(e.news_id, &e);
  return idx;
}

// Title text the model sees: the enriched title when one exists.
inline const std::string& model_title(const NewsRecord& r, const EnrichedNews* e) {
  return e != nullptr && !trim(e->enriched_title).empty() ? e->enriched_title : r.title;
}

// Entity QIDs the model sees for one article, deduplicated, in order.
inline std::vector<std::string> model_entities(const NewsRecord& r, const EnrichedNews* e, EntitySource source) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  auto take = [&](const std::string& qid) {
    if (!qid.empty() && seen.insert(qid).second) ids.push_back(qid);
  };
  const bool use_original = source != EntitySource::enriched || e == nullptr;
  const bool use_enriched = source != EntitySource::original && e != nullptr;
  if (use_enriched)
    for (const auto& ent : e->enriched_entities) take(ent.wikidata_id);
  if (use_original)
    for (const auto& ent : r.title_entities) take(ent.wikidata_id);
  return ids;
}

// Vocabularies plus padding rules: everything needed to turn an article
// into fixed-size index grids.
struct FeatureSpace {
  Vocabulary words;
  Vocabulary entities;
  Vocabulary categories;
  Vocabulary subcategories;
  FeatureConfig config;

  static FeatureSpace build(std::span<const NewsRecord> corpus, const EnrichedIndex& enriched, const FeatureConfig& config,
                            std::size_t min_count = 1) {
    std::vector<std::string> titles, qids, cats, subcats;
    for (const auto& r : corpus) {
      auto it = enriched.find(r.news_id);
      const EnrichedNews* e = it == enriched.end() ? nullptr : it->second;
      titles.push_back(model_title(r, e));
      for (auto& q : model_entities(r, e, config.entity_source)) qids.push_back(std::move(q));
      cats.push_back(r.category);
      subcats.push_back(r.subcategory);
    }
    return {build_vocabulary(titles, min_count), build_id_vocabulary(qids), build_id_vocabulary(cats),
            build_id_vocabulary(subcats), config};
  }

  NewsFeatures featurize(const NewsRecord& r, const EnrichedNews* e) const {
    NewsFeatures f = NewsFeatures::padding(config);
    f.news_id = r.news_id;
    auto toks = tokenize(model_title(r, e));
    // Titles without a single real token still get one OOV position so the
    // title attention always has something to attend to.
    if (toks.empty()) toks.emplace_back(Vocabulary::kOovToken);
    for (std::size_t i = 0; i < toks.size() && i < config.title_len; ++i) {
      f.tokens[i] = words.index(toks[i]);
      f.token_mask[i] = 1;
    }
    const auto qids = model_entities(r, e, config.entity_source);
    for (std::size_t i = 0; i < qids.size() && i < config.max_entities; ++i) {
      f.entities[i] = entities.index(qids[i]);
      f.entity_mask[i] = 1;
    }
    f.category = categories.index(r.category);
    f.subcategory = subcategories.index(r.subcategory);
    return f;
  }
};

using NewsFeatureTable = std::unordered_map<std::string, NewsFeatures>;

inline NewsFeatureTable featurize_corpus(std::span<const NewsRecord> corpus, const EnrichedIndex& enriched,
                                         const FeatureSpace& space) {
  NewsFeatureTable table;
  for (const auto& r : corpus) {
    auto it = enriched.find(r.news_id);
    table.emplace(r.news_id, space.featurize(r, it == enriched.end() ? nullptr : it->second));
  }
  return table;
}

struct TrainingExample {
  std::string impression_id;
  std::vector<NewsFeatures> history;        // max_history slots, padding after the real items
  std::vector<std::uint8_t> history_mask;
  std::vector<NewsFeatures> candidates;     // 1 + K; slot 0 is the clicked article
  std::size_t target_index = 0;

  std::size_t history_length() const { return static_cast<std::size_t>(std::count(history_mask.begin(), history_mask.end(), 1)); }
};

struct ExampleStats {
  std::size_t impressions = 0;
  std::size_t examples = 0;
  std::size_t skipped_cold_user = 0;
  std::size_t skipped_no_positive = 0;
  std::size_t skipped_no_negative = 0;
  std::size_t dropped_history_items = 0;
  std::size_t dropped_candidates = 0;
};

// Resolved click history, most recent `max_history` items, oldest first.
inline std::vector<const NewsFeatures*> resolve_history(const Impression& imp, const NewsFeatureTable& news,
                                                        std::size_t max_history, std::size_t* dropped = nullptr) {
  std::vector<const NewsFeatures*> items;
  for (const auto& id : imp.history) {
    auto it = news.find(id);
    if (it == news.end()) {
      if (dropped) ++*dropped;
      continue;
    }
    items.push_back(&it->second);
  }
  if (items.size() > max_history) items.erase(items.begin(), items.end() - static_cast<std::ptrdiff_t>(max_history));
  return items;
}

// For every clicked candidate emits one example with K negatives drawn from
// the same impression: without replacement when at least K exist, with
// replacement otherwise. The sampling stream is seeded from
// (seed, impression_id), so sharding the input does not change the output.
inline void for_each_training_example(std::span<const Impression> impressions, const NewsFeatureTable& news,
                                      std::size_t negatives, std::uint64_t seed, const FeatureConfig& config,
                                      const std::function<void(TrainingExample&&)>& sink, ExampleStats* stats = nullptr) {
  if (negatives == 0) throw ConfigError("K (negatives per positive) must be at least 1");
  ExampleStats local;
  ExampleStats& st = stats ? *stats : local;
  for (const auto& imp : impressions) {
    ++st.impressions;
    const auto hist = resolve_history(imp, news, config.max_history, &st.dropped_history_items);
    if (hist.empty()) {
      ++st.skipped_cold_user;
      continue;
    }
    std::vector<const NewsFeatures*> pos, neg;
    for (const auto& c : imp.candidates) {
      auto it = news.find(c.news_id);
      if (it == news.end()) {
        ++st.dropped_candidates;
        continue;
      }
      (c.label ? pos : neg).push_back(&it->second);
    }
    if (pos.empty()) {
      ++st.skipped_no_positive;
      continue;
    }
    if (neg.empty()) {
      ++st.skipped_no_negative;
      continue;
    }

    TrainingExample base;
    base.impression_id = imp.impression_id;
    base.history.reserve(config.max_history);
    for (const auto* h : hist) base.history.push_back(*h);
    base.history_mask.assign(hist.size(), 1);
    base.history.resize(config.max_history, NewsFeatures::padding(config));
    base.history_mask.resize(config.max_history, 0);

    Rng rng(mix_seed(seed, imp.impression_id));
    for (const auto* p : pos) {
      std::vector<const NewsFeatures*> chosen;
      if (neg.size() >= negatives) {
        std::vector<std::size_t> order(neg.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i < negatives; ++i) {
          const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
          std::swap(order[i], order[j]);
          chosen.push_back(neg[order[i]]);
        }
      } else {
        for (std::size_t i = 0; i < negatives; ++i) chosen.push_back(neg[rng.below(neg.size())]);
      }
      rng.shuffle(std::span(chosen));

      TrainingExample ex = base;
      ex.candidates.reserve(negatives + 1);
      ex.candidates.push_back(*p);
      for (const auto* n : chosen) ex.candidates.push_back(*n);
      ex.target_index = 0;
      ++st.examples;
      sink(std::move(ex));
    }
  }
}

inline std::vector<TrainingExample> make_training_examples(std::span<const Impression> impressions,
                                                           const NewsFeatureTable& news, std::size_t negatives,
                                                           std::uint64_t seed, const FeatureConfig& config,
                                                           ExampleStats* stats = nullptr) {
  std::vector<TrainingExample> out;
  for_each_training_example(impressions, news, negatives, seed, config,
                            [&](TrainingExample&& ex) { out.push_back(std::move(ex)); }, stats);
  return out;
}

}  // namespace nrec
