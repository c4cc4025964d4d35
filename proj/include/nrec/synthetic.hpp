#pragma once

// Synthetic MIND-format corpus with topic-separable clicks: every user reads
// one topic and clicks the single candidate from that topic. Also emits
// matching GloVe-style word vectors, entity vectors and a Wikidata fixture.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "nrec/mind.hpp"
#include "nrec/rng.hpp"
#include "nrec/text.hpp"

namespace nrec {

struct SyntheticConfig {
  std::size_t vocab_size = 500;  // distinct title tokens in the corpus
  std::size_t topics = 5;
  std::size_t news = 100;
  std::size_t impressions = 200;
  std::size_t dev_impressions = 0;
  std::size_t users = 40;
  std::size_t history = 8;
  std::size_t negatives = 6;  // shown non-clicked candidates per impression
  std::size_t word_dim = 50;
  std::size_t entity_dim = 100;
  std::uint64_t seed = 7;
  // one shared category and no entity mentions, so only title words carry the topic
  bool words_only = false;
};

struct SyntheticEntity {
  std::string label;
  std::string qid;
  std::vector<std::string> surfaces;  // forms used in titles
  std::vector<std::string> aliases;   // Wikidata aliases
};

struct SyntheticCorpus {
  std::vector<NewsRecord> news;
  std::vector<Impression> impressions;
  std::vector<Impression> dev_impressions;
  std::vector<std::size_t> news_topic;
  std::vector<std::pair<std::string, std::vector<float>>> word_vectors;
  std::vector<std::pair<std::string, std::vector<float>>> entity_vectors;
  nlohmann::json wikidata = nlohmann::json::object();
  std::size_t distinct_tokens = 0;
};

namespace detail {

inline const std::vector<std::string>& synthetic_topic_names() {
  static const std::vector<std::string> names{"sports", "politics", "technology", "health", "finance"};
  return names;
}

inline std::vector<std::vector<SyntheticEntity>> synthetic_entities(std::size_t topics) {
  std::vector<std::vector<SyntheticEntity>> base{
      {{"National Football League", "Q1215884", {"NFL"}, {"NFL"}},
       {"Super Bowl", "Q32096", {"Super Bowl"}, {}},
       {"Dallas Cowboys", "Q204862", {"Dallas Cowboys", "Cowboys"}, {"Cowboys"}}},
      {{"United States", "Q30", {"United States", "U.S."}, {"U.S.", "US", "USA", "America"}},
       {"United States Congress", "Q11268", {"Congress"}, {"Congress"}},
       {"White House", "Q35525", {"White House"}, {}}},
      {{"Apple Inc.", "Q312", {"Apple"}, {"Apple"}},
       {"Google", "Q95", {"Google"}, {}},
       {"Microsoft", "Q2283", {"Microsoft"}, {}}},
      {{"World Health Organization", "Q7817", {"World Health Organization", "WHO"}, {"WHO"}},
       {"Mayo Clinic", "Q1130172", {"Mayo Clinic"}, {}}},
      {{"Federal Reserve System", "Q53536", {"Federal Reserve", "Fed"}, {"Federal Reserve", "Fed"}},
       {"Nasdaq", "Q82059", {"Nasdaq"}, {}}}};
  std::vector<std::vector<SyntheticEntity>> out;
  for (std::size_t t = 0; t < topics; ++t) {
    if (t < base.size()) {
      out.push_back(base[t]);
    } else {
      const std::string label = "Topic" + std::to_string(t) + " Agency";
      out.push_back({{label, "Q" + std::to_string(900000 + t), {label}, {}}});
    }
  }
  return out;
}

// Pronounceable lowercase pseudo-word of 2-3 syllables.
inline std::string pseudo_word(Rng& rng) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::string w;
  const auto n = 2 + rng.below(2);
  for (std::uint64_t i = 0; i < n; ++i) {
    w += onsets[rng.below(std::size(onsets))];
    w += vowels[rng.below(std::size(vowels))];
  }
  return w;
}

inline std::vector<float> noisy(const std::vector<float>& centre, float noise, Rng& rng) {
  std::vector<float> v(centre.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = centre[i] + rng.uniform(-noise, noise);
  return v;
}

inline std::vector<float> random_vector(std::size_t dim, float scale, Rng& rng) {
  std::vector<float> v(dim);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.topics < 2) throw ConfigError("synthetic corpus needs at least 2 topics");
  if (cfg.news < cfg.topics * 4) throw ConfigError("synthetic corpus needs at least 4 news per topic");
  Rng rng(mix_seed(cfg.seed, std::string_view("synthetic")));
  SyntheticCorpus out;
  const auto entities = detail::synthetic_entities(cfg.topics);
  const auto& names = detail::synthetic_topic_names();
  auto topic_name = [&](std::size_t t) { return t < names.size() ? names[t] : "topic" + std::to_string(t); };

  // Vocabulary budget: entity surface tokens first, then topic and shared filler words.
  std::set<std::string> taken;
  if (!cfg.words_only)
    for (const auto& list : entities)
      for (const auto& e : list)
        for (const auto& s : e.surfaces)
          for (auto& tok : tokenize(s)) taken.insert(tok);
  if (taken.size() + cfg.topics * 4 + 4 > cfg.vocab_size) throw ConfigError("synthetic vocab_size too small");
  const std::size_t fillers = cfg.vocab_size - taken.size();
  const std::size_t shared_count = std::max<std::size_t>(4, fillers / 10);
  const std::size_t per_topic = (fillers - shared_count) / cfg.topics;
  const std::size_t shared_total = fillers - per_topic * cfg.topics;
  auto fresh = [&] {
    for (;;) {
      auto w = detail::pseudo_word(rng);
      if (taken.insert(w).second) return w;
    }
  };
  std::vector<std::string> shared;
  for (std::size_t i = 0; i < shared_total; ++i) shared.push_back(fresh());
  std::vector<std::vector<std::string>> topic_words(cfg.topics);
  for (auto& pool : topic_words)
    for (std::size_t i = 0; i < per_topic; ++i) pool.push_back(fresh());

  // Articles: 5 topic words, 2 shared words and usually one entity mention.
  std::vector<std::vector<std::size_t>> by_topic(cfg.topics);
  std::vector<std::size_t> topic_cursor(cfg.topics, 0), entity_cursor(cfg.topics, 0);
  std::size_t shared_cursor = 0;
  for (std::size_t i = 0; i < cfg.news; ++i) {
    const std::size_t t = i % cfg.topics;
    NewsRecord r;
    r.news_id = "N" + std::to_string(1000 + i);
    r.category = cfg.words_only ? std::string("news") : topic_name(t);
    r.subcategory = r.category + "_" + std::to_string(rng.below(3));
    std::vector<std::string> words;
    for (int k = 0; k < 5; ++k) words.push_back(topic_words[t][topic_cursor[t]++ % per_topic]);
    for (int k = 0; k < 2; ++k) words.push_back(shared[shared_cursor++ % shared.size()]);
    rng.shuffle(std::span(words));
    // Every third article of a topic has no entity.
    if (!cfg.words_only && by_topic[t].size() % 3 != 2) {
      const std::size_t pick = entity_cursor[t]++;
      const auto& e = entities[t][pick % entities[t].size()];
      const auto& surface = e.surfaces[(pick / entities[t].size()) % e.surfaces.size()];
      const std::size_t at = rng.below(words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), surface);
      EntityMention m;
      m.name = e.label;
      m.type = "O";
      m.wikidata_id = e.qid;
      m.confidence = 0.9;
      m.surface_forms = {surface};
      std::size_t offset = 0;
      for (std::size_t k = 0; k < at; ++k) offset += words[k].size() + 1;
      m.occurrence_offsets = {static_cast<int>(offset)};
      r.title_entities.push_back(std::move(m));
    }
    for (std::size_t k = 0; k < words.size(); ++k) r.title += (k ? " " : "") + words[k];
    r.abstract = "About " + r.category + ".";
    r.url = "https://example.invalid/" + r.news_id;
    by_topic[t].push_back(i);
    out.news_topic.push_back(t);
    out.news.push_back(std::move(r));
  }
  std::set<std::string> seen_tokens;
  for (const auto& r : out.news)
    for (auto& tok : tokenize(r.title)) seen_tokens.insert(tok);
  out.distinct_tokens = seen_tokens.size();

  // Users keep one topic; one clicked candidate from it among other-topic negatives.
  std::vector<std::size_t> user_topic(cfg.users);
  for (std::size_t u = 0; u < cfg.users; ++u) user_topic[u] = u % cfg.topics;
  auto make_impressions = [&](std::size_t count, std::size_t id_base, std::vector<Impression>& dst) {
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t u = rng.below(cfg.users);
      const std::size_t t = user_topic[u];
      std::vector<std::size_t> pool = by_topic[t];
      rng.shuffle(std::span(pool));
      Impression imp;
      imp.impression_id = std::to_string(id_base + n);
      imp.user_id = "U" + std::to_string(100 + u);
      imp.timestamp = fmt::format("11/{}/2019 {}:{:02}:{:02} AM", 10 + n % 5, 1 + n % 11, n % 60, (n * 7) % 60);
      const std::size_t h = std::min(cfg.history, pool.size() - 1);
      for (std::size_t k = 0; k < h; ++k) imp.history.push_back(out.news[pool[k]].news_id);
      imp.candidates.push_back({out.news[pool[h]].news_id, 1});
      // distinct negatives, all from other topics
      std::vector<std::size_t> others;
      for (std::size_t i = 0; i < out.news.size(); ++i)
        if (out.news_topic[i] != t) others.push_back(i);
      for (std::size_t k = 0; k < cfg.negatives && k < others.size(); ++k) {
        std::swap(others[k], others[k + rng.below(others.size() - k)]);
        imp.candidates.push_back({out.news[others[k]].news_id, 0});
      }
      rng.shuffle(std::span(imp.candidates));
      dst.push_back(std::move(imp));
    }
  };
  make_impressions(cfg.impressions, 1, out.impressions);
  make_impressions(cfg.dev_impressions, 1 + cfg.impressions, out.dev_impressions);

  // Word vectors cluster by topic; every 20th word is left out of the file.
  std::vector<std::vector<float>> centres;
  for (std::size_t t = 0; t < cfg.topics; ++t) centres.push_back(detail::random_vector(cfg.word_dim, 0.5f, rng));
  std::size_t counter = 0;
  auto add_word = [&](const std::string& w, const std::vector<float>* centre) {
    if (++counter % 20 == 0) return;
    out.word_vectors.emplace_back(w, centre ? detail::noisy(*centre, 0.15f, rng) : detail::random_vector(cfg.word_dim, 0.2f, rng));
  };
  for (const auto& w : shared) add_word(w, nullptr);
  for (std::size_t t = 0; t < cfg.topics; ++t) {
    for (const auto& w : topic_words[t]) add_word(w, &centres[t]);
    for (const auto& e : entities[t])
      for (const auto& s : e.surfaces)
        for (auto& tok : tokenize(s)) add_word(tok, &centres[t]);
  }

  std::vector<std::vector<float>> entity_centres;
  for (std::size_t t = 0; t < cfg.topics; ++t) entity_centres.push_back(detail::random_vector(cfg.entity_dim, 0.5f, rng));
  for (std::size_t t = 0; t < cfg.topics; ++t) {
    for (const auto& e : entities[t]) {
      out.entity_vectors.emplace_back(e.qid, detail::noisy(entity_centres[t], 0.15f, rng));
      nlohmann::json hit{{"id", e.qid}, {"label", e.label}, {"aliases", e.aliases}};
      std::set<std::string> keys{normalize_name(e.label)};
      for (const auto& s : e.surfaces) keys.insert(normalize_name(s));
      for (const auto& a : e.aliases) keys.insert(normalize_name(a));
      for (const auto& k : keys) {
        nlohmann::json h = hit;
        h["match"] = {{"type", "alias"}, {"language", "en"}, {"text", k}};
        out.wikidata[k] = {{"search", nlohmann::json::array({h})}, {"success", 1}};
      }
    }
  }
  return out;
}

inline void write_vector_file(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::vector<float>>>& rows,
                              char sep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& [key, v] : rows) {
    out << key;
    for (float x : v) out << sep << fmt::format("{:.6f}", x);
    out << '\n';
  }
}

// news.tsv, behaviors.tsv, dev_behaviors.tsv (if any), glove.txt,
// entity_embedding.vec, wikidata.json.
inline void write_synthetic(const SyntheticCorpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw InputError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("news.tsv");
    write_news_tsv(f, c.news);
  }
  {
    auto f = open("behaviors.tsv");
    write_behaviors_tsv(f, c.impressions);
  }
  if (!c.dev_impressions.empty()) {
    auto f = open("dev_behaviors.tsv");
    write_behaviors_tsv(f, c.dev_impressions);
  }
  write_vector_file(dir / "glove.txt", c.word_vectors, ' ');
  write_vector_file(dir / "entity_embedding.vec", c.entity_vectors, '\t');
  auto f = open("wikidata.json");
  f << c.wikidata.dump(2) << '\n';
}

}  // namespace nrec
