#pragma once

// LLM-driven news enrichment: direct title generation, entity exploration,
// Wikidata verification and entity-conditioned title refinement.
//
// Every LLM response and Wikidata lookup is stored in an append-only cache
// keyed by (news_id, step, prompt_version), so reruns resume where they left
// off and never repeat a request that already succeeded.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nrec/error.hpp"
#include "nrec/log.hpp"
#include "nrec/mind.hpp"
#include "nrec/text.hpp"

namespace nrec {

inline constexpr std::size_t kMaxTitleTokens = 40;
inline constexpr const char* kPromptVersion = "hier-v1";

enum class PromptingMode { direct, entity, hierarchical };

inline std::string to_string(PromptingMode m) {
  switch (m) {
    case PromptingMode::direct: return "direct";
    case PromptingMode::entity: return "entity";
    case PromptingMode::hierarchical: return "hierarchical";
  }
  return "?";
}

inline PromptingMode prompting_mode_from_string(std::string_view s) {
  if (s == "direct") return PromptingMode::direct;
  if (s == "entity") return PromptingMode::entity;
  if (s == "hierarchical") return PromptingMode::hierarchical;
  throw ConfigError("prompting_mode must be one of direct|entity|hierarchical, got '" + std::string(s) + "'");
}

// Transport or provider failure; retried by the enrichment steps.
class LlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt, int max_tokens, double temperature) = 0;
};

// Prompt text. The first line names the step so that the offline mock (and
// a human reading the cache) can tell the steps apart.
namespace prompts {

inline std::string direct(const NewsRecord& n) {
  return "TASK: direct-title\n"
         "You are helping a news recommender. Rewrite the headline below into one engaging, informative title that "
         "keeps the original meaning. Answer with the title only, on one line.\n"
         "Category: " + n.category + "\n"
         "Title: " + n.title + "\n"
         "Abstract: " + n.abstract + "\n";
}

inline std::string explore(const NewsRecord& n, std::size_t max_entities) {
  return "TASK: explore-entities\n"
         "List up to " + std::to_string(max_entities) +
         " named entities (people, organisations, places, events) that are relevant to this article. "
         "Write one entity name per line and nothing else.\n"
         "Category: " + n.category + "\n"
         "Title: " + n.title + "\n"
         "Abstract: " + n.abstract + "\n";
}

inline std::string refine(const NewsRecord& n, const std::string& candidate, const std::vector<std::string>& entities) {
  std::string joined;
  for (std::size_t i = 0; i < entities.size(); ++i) joined += (i ? ", " : "") + entities[i];
  return "TASK: refine-title\n"
         "Combine the draft title with the related entities into a final title of at most " +
         std::to_string(kMaxTitleTokens) +
         " words. It must stay faithful to the original headline and must not be misleading or overly general. "
         "Answer with the title only, on one line.\n"
         "Original: " + n.title + "\n"
         "Candidate: " + candidate + "\n"
         "Entities: " + joined + "\n";
}

// Value of a "Key: value" line inside a prompt.
inline std::string field(const std::string& prompt, const std::string& key) {
  const std::string marker = "\n" + key + ": ";
  const auto pos = prompt.find(marker);
  if (pos == std::string::npos) return {};
  const auto start = pos + marker.size();
  const auto end = prompt.find('\n', start);
  return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace prompts

// Deterministic offline stand-in for a real LLM:
//   direct  -> "ENRICHED: <title>"
//   explore -> runs of capitalised words in the title, one per line
//   refine  -> "REFINED: <candidate> [<entities>]"
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(std::uint64_t seed = 0) : seed_(seed) {}

  std::string complete(const std::string& prompt, int /*max_tokens*/, double /*temperature*/) override {
    ++calls_;
    return respond(prompt, seed_);
  }

  std::size_t calls() const { return calls_.load(); }

  // Pure function of (prompt, seed). The standard templates do not depend on
  // the seed; it is part of the contract so variants can.
  static std::string respond(const std::string& prompt, std::uint64_t /*seed*/) {
    if (prompt.rfind("TASK: direct-title", 0) == 0) return "ENRICHED: " + prompts::field(prompt, "Title");
    if (prompt.rfind("TASK: explore-entities", 0) == 0) {
      std::string out;
      for (const auto& name : capitalised_runs(prompts::field(prompt, "Title"))) out += name + "\n";
      return out;
    }
    if (prompt.rfind("TASK: refine-title", 0) == 0)
      return "REFINED: " + prompts::field(prompt, "Candidate") + " [" + prompts::field(prompt, "Entities") + "]";
    return "";
  }

  static std::vector<std::string> capitalised_runs(const std::string& title) {
    std::vector<std::string> names;
    std::string run;
    auto flush = [&] {
      if (!run.empty()) names.push_back(run);
      run.clear();
    };
    for (const auto& piece : split_whitespace(title)) {
      std::string word = piece;
      const bool ends_run = !word.empty() && std::string(",;:!?").find(word.back()) != std::string::npos;
      while (!word.empty() && std::string(",;:!?\"'()").find(word.back()) != std::string::npos) word.pop_back();
      while (!word.empty() && std::string("\"'(").find(word.front()) != std::string::npos) word.erase(word.begin());
      if (!word.empty() && word[0] >= 'A' && word[0] <= 'Z') {
        run += (run.empty() ? "" : " ") + word;
        if (ends_run) flush();
      } else {
        flush();
      }
    }
    flush();
    return names;
  }

 private:
  std::uint64_t seed_;
  std::atomic<std::size_t> calls_{0};
};

struct WikidataHit {
  std::string id;
  std::string label;
  std::vector<std::string> aliases;
};

class WikidataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Source of raw wbsearchentities responses (JSON text).
class WikidataClient {
 public:
  virtual ~WikidataClient() = default;
  virtual std::string search(const std::string& name) = 0;
};

// Parses a wbsearchentities response body into hits.
inline std::vector<WikidataHit> parse_wikidata_search(const std::string& body) {
  std::vector<WikidataHit> hits;
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("search") || !j["search"].is_array()) return hits;
  for (const auto& s : j["search"]) {
    WikidataHit h;
    h.id = s.value("id", "");
    h.label = s.value("label", "");
    if (s.contains("aliases") && s["aliases"].is_array())
      for (const auto& a : s["aliases"])
        if (a.is_string()) h.aliases.push_back(a.get<std::string>());
    if (s.contains("match") && s["match"].is_object() && s["match"].contains("text") && s["match"]["text"].is_string())
      h.aliases.push_back(s["match"]["text"].get<std::string>());
    hits.push_back(std::move(h));
  }
  return hits;
}

// Offline Wikidata: a JSON object mapping a normalised search string to a
// stored wbsearchentities response. Unknown names return an empty result.
class FixtureWikidataClient : public WikidataClient {
 public:
  explicit FixtureWikidataClient(nlohmann::json responses) : responses_(std::move(responses)) {}

  static nlohmann::json read_fixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read wikidata fixture " + path.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError("wikidata fixture is not a JSON object: " + path.string());
    return j;
  }

  static FixtureWikidataClient from_file(const std::filesystem::path& path) { return FixtureWikidataClient(read_fixture(path)); }

  std::string search(const std::string& name) override {
    ++calls_;
    const auto key = normalize_name(name);
    if (responses_.contains(key)) return responses_[key].dump();
    return R"({"search":[],"success":1})";
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  nlohmann::json responses_;
  std::atomic<std::size_t> calls_{0};
};

struct CacheKey {
  std::string news_id;
  std::string step;  // direct | explore | refine | verify:<name>
  std::string prompt_version;

  auto operator<=>(const CacheKey&) const = default;
};

// Append-only JSON-lines store. Thread-safe; a key that is present is never
// re-queried.
class EnrichmentCache {
 public:
  EnrichmentCache() = default;

  explicit EnrichmentCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    std::size_t line_no = 0;
    while (in && std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        // A torn final line from an interrupted run is ignored.
        log().warn("cache {}:{}: unreadable record skipped", path_.string(), line_no);
        continue;
      }
      entries_[{j.value("news_id", ""), j.value("step", ""), j.value("prompt_version", "")}] = j.value("value", "");
    }
  }

  std::optional<std::string> get(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const CacheKey& key, const std::string& value) {
    std::lock_guard lock(mutex_);
    entries_[key] = value;
    if (path_.empty()) return;
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    nlohmann::json j{{"news_id", key.news_id}, {"step", key.step}, {"prompt_version", key.prompt_version}, {"value", value}, {"timestamp", now}};
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw RuntimeFailure("cannot append to cache " + path_.string());
    out << j.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<CacheKey, std::string> entries_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{0};  // doubled after each failure
};

struct EnrichmentCounters {
  std::atomic<std::size_t> llm_calls{0};
  std::atomic<std::size_t> wikidata_calls{0};
  std::atomic<std::size_t> cache_hits{0};
  std::atomic<std::size_t> fallbacks{0};
  std::atomic<std::size_t> unparseable{0};
  std::atomic<std::size_t> dropped_entities{0};
  std::atomic<std::size_t> network_failures{0};
  std::atomic<std::size_t> duplicate_entities{0};

  nlohmann::json to_json() const {
    return {{"llm_calls", llm_calls.load()},          {"wikidata_calls", wikidata_calls.load()},
            {"cache_hits", cache_hits.load()},        {"fallbacks", fallbacks.load()},
            {"unparseable", unparseable.load()},      {"dropped_entities", dropped_entities.load()},
            {"network_failures", network_failures.load()}, {"duplicate_entities", duplicate_entities.load()}};
  }
};

struct EntityCandidate {
  std::string surface_name;
  struct Verified {
    std::string canonical_name;
    std::string wikidata_id;
  };
  std::optional<Verified> verified;
};

struct EnrichmentContext {
  LlmClient& llm;
  WikidataClient& wikidata;
  EnrichmentCache& cache;
  EnrichmentCounters& counters;
  RetryPolicy retry{};
  std::string prompt_version = kPromptVersion;
  std::size_t max_entities = 10;
  int max_tokens = 96;
  double temperature = 0.0;
};

namespace detail {

inline std::string first_line(const std::string& s) {
  const auto t = trim(s);
  const auto nl = t.find('\n');
  return trim(nl == std::string::npos ? t : t.substr(0, nl));
}

// Cached LLM call with bounded retries. Returns nullopt when every attempt
// failed or came back blank; failures are not cached.
inline std::optional<std::string> cached_completion(EnrichmentContext& ctx, const CacheKey& key, const std::string& prompt,
                                                    bool require_text) {
  if (auto hit = ctx.cache.get(key)) {
    ++ctx.counters.cache_hits;
    return hit;
  }
  auto delay = ctx.retry.base_delay;
  for (int attempt = 0; attempt < ctx.retry.attempts; ++attempt) {
    if (attempt > 0 && delay.count() > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    try {
      ++ctx.counters.llm_calls;
      std::string response = ctx.llm.complete(prompt, ctx.max_tokens, ctx.temperature);
      if (require_text && first_line(response).empty()) continue;
      ctx.cache.put(key, response);
      return response;
    } catch (const LlmError& e) {
      log().warn("{} step '{}' attempt {} failed: {}", key.news_id, key.step, attempt + 1, e.what());
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Step 1: one-line candidate title; falls back to the original title.
inline std::string direct_prompt(const NewsRecord& news, EnrichmentContext& ctx) {
  auto response = detail::cached_completion(ctx, {news.news_id, "direct", ctx.prompt_version}, prompts::direct(news), true);
  if (!response) {
    ++ctx.counters.fallbacks;
    log().warn("{}: direct prompt failed, keeping the original title", news.news_id);
    return news.title;
  }
  return detail::first_line(*response);
}

// Parses a line-separated entity list: bullets/numbering removed, duplicates
// (case-insensitive) dropped, at most `limit` names.
inline std::vector<EntityCandidate> parse_entity_list(const std::string& response, std::size_t limit) {
  static const std::regex bullet(R"(^\s*(?:[-*•]|\d+[.)])\s*)");
  std::vector<EntityCandidate> out;
  std::unordered_set<std::string> seen;
  std::size_t start = 0;
  while (start <= response.size() && out.size() < limit) {
    const auto nl = response.find('\n', start);
    std::string line = response.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? response.size() + 1 : nl + 1;
    line = trim(std::regex_replace(line, bullet, ""));
    if (line.empty()) continue;
    if (!seen.insert(ascii_lower(line)).second) continue;
    out.push_back({line, std::nullopt});
  }
  return out;
}

// Step 2: entity names proposed by the LLM.
inline std::vector<EntityCandidate> explore_entities(const NewsRecord& news, EnrichmentContext& ctx) {
  auto response = detail::cached_completion(ctx, {news.news_id, "explore", ctx.prompt_version},
                                            prompts::explore(news, ctx.max_entities), false);
  if (!response) {
    ++ctx.counters.unparseable;
    log().warn("{}: entity exploration failed", news.news_id);
    return {};
  }
  auto candidates = parse_entity_list(*response, ctx.max_entities);
  if (candidates.empty() && !trim(*response).empty()) ++ctx.counters.unparseable;
  return candidates;
}

// Accepts the top search hit when its label or one of its aliases equals
// the surface name after normalisation; otherwise the candidate stays
// unverified. Lookups are cached per name, shared across articles.
inline EntityCandidate verify_entity(EntityCandidate candidate, EnrichmentContext& ctx) {
  const CacheKey key{"*", "verify:" + normalize_name(candidate.surface_name), ctx.prompt_version};
  std::string body;
  if (auto hit = ctx.cache.get(key)) {
    ++ctx.counters.cache_hits;
    body = *hit;
  } else {
    try {
      ++ctx.counters.wikidata_calls;
      body = ctx.wikidata.search(candidate.surface_name);
    } catch (const WikidataError& e) {
      ++ctx.counters.network_failures;
      log().warn("wikidata lookup for '{}' failed: {}", candidate.surface_name, e.what());
      return candidate;
    }
    ctx.cache.put(key, body);
  }
  const auto hits = parse_wikidata_search(body);
  if (hits.empty()) return candidate;
  static const std::regex qid(R"(Q[0-9]+)");
  const auto& top = hits.front();
  if (!std::regex_match(top.id, qid)) return candidate;
  const auto wanted = normalize_name(candidate.surface_name);
  bool match = normalize_name(top.label) == wanted;
  for (const auto& a : top.aliases) match = match || normalize_name(a) == wanted;
  if (match) candidate.verified = EntityCandidate::Verified{top.label, top.id};
  return candidate;
}

// Verifies every candidate, drops the unverifiable ones and merges aliases
// that resolve to the same QID (first occurrence wins).
inline std::vector<EnrichedEntity> verify_and_deduplicate(std::vector<EntityCandidate> candidates, EnrichmentContext& ctx) {
  std::vector<EnrichedEntity> out;
  std::unordered_set<std::string> seen;
  for (auto& c : candidates) {
    auto v = verify_entity(std::move(c), ctx);
    if (!v.verified) {
      ++ctx.counters.dropped_entities;
      continue;
    }
    if (!seen.insert(v.verified->wikidata_id).second) {
      ++ctx.counters.duplicate_entities;
      continue;
    }
    out.push_back({v.verified->canonical_name, v.verified->wikidata_id});
  }
  return out;
}

// Step 3: final title conditioned on the candidate and verified entities,
// hard-truncated to kMaxTitleTokens words. Falls back to the candidate.
inline std::string hierarchical_refine(const std::string& candidate_title, const std::vector<EnrichedEntity>& entities,
                                       const NewsRecord& news, EnrichmentContext& ctx) {
  std::vector<std::string> names;
  for (const auto& e : entities) names.push_back(e.name);
  auto response = detail::cached_completion(ctx, {news.news_id, "refine", ctx.prompt_version},
                                            prompts::refine(news, candidate_title, names), true);
  std::string title;
  if (!response) {
    ++ctx.counters.fallbacks;
    log().warn("{}: refine prompt failed, keeping the candidate title", news.news_id);
    title = candidate_title;
  } else {
    title = detail::first_line(*response);
  }
  return truncate_words(title, kMaxTitleTokens);
}

inline std::vector<EnrichedEntity> original_entities(const NewsRecord& news) {
  std::vector<EnrichedEntity> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : news.title_entities)
    if (!e.wikidata_id.empty() && seen.insert(e.wikidata_id).second) out.push_back({e.name, e.wikidata_id});
  return out;
}

inline EnrichedNews enrich_article(const NewsRecord& news, PromptingMode mode, EnrichmentContext& ctx) {
  EnrichedNews out;
  out.news_id = news.news_id;
  out.prompt_version = ctx.prompt_version;
  const std::string candidate = direct_prompt(news, ctx);
  if (mode == PromptingMode::direct) {
    out.enriched_title = candidate;
    out.enriched_entities = original_entities(news);
  } else {
    out.enriched_entities = verify_and_deduplicate(explore_entities(news, ctx), ctx);
    if (mode == PromptingMode::entity) {
      out.enriched_title = candidate;
      for (const auto& e : out.enriched_entities) out.enriched_title += " " + e.name;
    } else {
      out.enriched_title = hierarchical_refine(candidate, out.enriched_entities, news, ctx);
    }
  }
  out.enriched_title = truncate_words(out.enriched_title, kMaxTitleTokens);
  if (tokenize(out.enriched_title).empty()) out.enriched_title = truncate_words(news.title, kMaxTitleTokens);
  return out;
}

// Enriches every article; output order matches input order. With
// `workers` > 1 articles are processed concurrently (bounded in-flight
// requests); results do not depend on the worker count.
inline std::vector<EnrichedNews> enrich_corpus(std::span<const NewsRecord> corpus, PromptingMode mode, EnrichmentContext& ctx,
                                               std::size_t workers = 1) {
  std::vector<EnrichedNews> out(corpus.size());
  if (workers <= 1 || corpus.size() < 2) {
    for (std::size_t i = 0; i < corpus.size(); ++i) out[i] = enrich_article(corpus[i], mode, ctx);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  std::mutex error_mutex;
  std::exception_ptr error;
  for (std::size_t w = 0; w < std::min(workers, corpus.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < corpus.size(); i = next++) {
        try {
          out[i] = enrich_article(corpus[i], mode, ctx);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
  return out;
}

// Enriched corpus hand-off file: header row, then
// NewsID, EnrichedTitle, EnrichedEntities (JSON [{"name","qid"}]), PromptVersion.
inline void write_enriched_tsv(std::ostream& out, std::span<const EnrichedNews> items) {
  out << "NewsID\tEnrichedTitle\tEnrichedEntities\tPromptVersion\n";
  for (const auto& e : items) {
    nlohmann::json ents = nlohmann::json::array();
    for (const auto& x : e.enriched_entities) ents.push_back({{"name", x.name}, {"qid", x.wikidata_id}});
    out << detail::tsv_cell(e.news_id) << '\t' << detail::tsv_cell(e.enriched_title) << '\t' << ents.dump() << '\t'
        << detail::tsv_cell(e.prompt_version) << '\n';
  }
}

inline void write_enriched_tsv(const std::filesystem::path& path, std::span<const EnrichedNews> items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_enriched_tsv(out, items);
}

inline std::vector<EnrichedNews> parse_enriched_tsv(std::istream& in) {
  std::vector<EnrichedNews> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("NewsID\t", 0) == 0) continue;
    const auto cols = detail::split_tabs(line);
    if (cols.size() != 4) throw InputError("enriched tsv line " + std::to_string(line_no) + ": expected 4 columns");
    EnrichedNews e{cols[0], cols[1], {}, cols[3]};
    const auto j = nlohmann::json::parse(cols[2], nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw InputError("enriched tsv line " + std::to_string(line_no) + ": bad entity JSON");
    for (const auto& x : j) e.enriched_entities.push_back({x.value("name", ""), x.value("qid", "")});
    items.push_back(std::move(e));
  }
  return items;
}

inline std::vector<EnrichedNews> parse_enriched_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read enriched corpus " + path.string());
  return parse_enriched_tsv(in);
}

}  // namespace nrec
