#pragma once

// MIND corpus containers: news.tsv and behaviors.tsv readers and writers.

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nrec/error.hpp"
#include "nrec/log.hpp"
#include "nrec/text.hpp"

namespace nrec {

struct EntityMention {
  std::string name;  // "Label" in MIND
  std::string type;
  std::string wikidata_id;
  double confidence = 0.0;
  std::vector<int> occurrence_offsets;
  std::vector<std::string> surface_forms;

  bool operator==(const EntityMention&) const = default;
};

struct NewsRecord {
  std::string news_id;
  std::string category;
  std::string subcategory;
  std::string title;
  std::string abstract;
  std::string url;
  std::vector<EntityMention> title_entities;
  std::vector<EntityMention> abstract_entities;

  bool operator==(const NewsRecord&) const = default;
};

struct EnrichedEntity {
  std::string name;
  std::string wikidata_id;

  bool operator==(const EnrichedEntity&) const = default;
};

struct EnrichedNews {
  std::string news_id;
  std::string enriched_title;
  std::vector<EnrichedEntity> enriched_entities;
  std::string prompt_version;

  bool operator==(const EnrichedNews&) const = default;
};

struct Candidate {
  std::string news_id;
  int label = 0;

  bool operator==(const Candidate&) const = default;
};

struct Impression {
  std::string impression_id;
  std::string user_id;
  std::string timestamp;
  std::vector<std::string> history;  // oldest first
  std::vector<Candidate> candidates;

  bool operator==(const Impression&) const = default;
};

struct ParseStats {
  std::size_t rows = 0;
  std::size_t rejected = 0;
  std::size_t malformed_entities = 0;
};

template <typename Record>
struct Parsed {
  std::vector<Record> records;
  ParseStats stats;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

inline std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const auto j = s.find(' ', i);
    const auto end = j == std::string::npos ? s.size() : j;
    if (end > i) out.push_back(s.substr(i, end - i));
    i = end;
  }
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return in;
}

inline bool parse_entities(const std::string& cell, std::vector<EntityMention>& out) {
  out.clear();
  if (trim(cell).empty()) return true;
  try {
    const auto j = nlohmann::json::parse(cell);
    if (!j.is_array()) return false;
    for (const auto& e : j) {
      EntityMention m;
      m.name = e.value("Label", "");
      m.type = e.value("Type", "");
      m.wikidata_id = e.value("WikidataId", "");
      m.confidence = e.value("Confidence", 0.0);
      if (e.contains("OccurrenceOffsets")) m.occurrence_offsets = e.at("OccurrenceOffsets").get<std::vector<int>>();
      if (e.contains("SurfaceForms")) m.surface_forms = e.at("SurfaceForms").get<std::vector<std::string>>();
      out.push_back(std::move(m));
    }
    return true;
  } catch (const nlohmann::json::exception&) {
    out.clear();
    return false;
  }
}

inline std::string entities_json(const std::vector<EntityMention>& entities) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : entities) {
    arr.push_back({{"Label", m.name},
                   {"Type", m.type},
                   {"WikidataId", m.wikidata_id},
                   {"Confidence", m.confidence},
                   {"OccurrenceOffsets", m.occurrence_offsets},
                   {"SurfaceForms", m.surface_forms}});
  }
  return arr.dump();
}

// Tabs and newlines cannot appear inside a TSV cell.
inline std::string tsv_cell(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

}  // namespace detail

// Reads MIND news.tsv: NewsID, Category, SubCategory, Title, Abstract, URL,
// TitleEntities (JSON), AbstractEntities (JSON). Rows with the wrong column
// count, an empty title or a duplicate id are rejected and counted; malformed
// entity JSON degrades to an empty list.
inline Parsed<NewsRecord> parse_news_tsv(std::istream& in) {
  Parsed<NewsRecord> result;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    detail::strip_cr(line);
    if (line.empty()) continue;
    ++result.stats.rows;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 8) {
      ++result.stats.rejected;
      log().warn("news row {}: expected 8 columns, got {}", result.stats.rows, cols.size());
      continue;
    }
    NewsRecord r;
    r.news_id = cols[0];
    r.category = cols[1];
    r.subcategory = cols[2];
    r.title = cols[3];
    r.abstract = cols[4];
    r.url = cols[5];
    if (r.news_id.empty() || trim(r.title).empty() || !seen.insert(r.news_id).second) {
      ++result.stats.rejected;
      log().warn("news row {}: empty id/title or duplicate id '{}'", result.stats.rows, r.news_id);
      continue;
    }
    if (!detail::parse_entities(cols[6], r.title_entities)) ++result.stats.malformed_entities;
    if (!detail::parse_entities(cols[7], r.abstract_entities)) ++result.stats.malformed_entities;
    result.records.push_back(std::move(r));
  }
  if (result.stats.malformed_entities > 0)
    log().warn("{} entity cells were malformed and treated as empty", result.stats.malformed_entities);
  return result;
}

inline Parsed<NewsRecord> parse_news_tsv(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  return parse_news_tsv(in);
}

// Reads MIND behaviors.tsv: ImpressionID, UserID, Time, History, Impressions.
// Candidates must be "NewsID-0" or "NewsID-1"; anything else rejects the row.
inline Parsed<Impression> parse_behaviors_tsv(std::istream& in) {
  Parsed<Impression> result;
  std::string line;
  while (std::getline(in, line)) {
    detail::strip_cr(line);
    if (line.empty()) continue;
    ++result.stats.rows;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 5) {
      ++result.stats.rejected;
      log().warn("behaviors row {}: expected 5 columns, got {}", result.stats.rows, cols.size());
      continue;
    }
    Impression imp;
    imp.impression_id = cols[0];
    imp.user_id = cols[1];
    imp.timestamp = cols[2];
    imp.history = detail::split_spaces(cols[3]);
    bool ok = !imp.impression_id.empty();
    for (const auto& token : detail::split_spaces(cols[4])) {
      const auto dash = token.rfind('-');
      if (dash == std::string::npos || dash == 0 || dash + 2 != token.size() || (token[dash + 1] != '0' && token[dash + 1] != '1')) {
        ok = false;
        break;
      }
      imp.candidates.push_back({token.substr(0, dash), token[dash + 1] - '0'});
    }
    if (!ok || imp.candidates.empty()) {
      ++result.stats.rejected;
      log().warn("behaviors row {}: malformed or empty candidate list", result.stats.rows);
      continue;
    }
    result.records.push_back(std::move(imp));
  }
  return result;
}

inline Parsed<Impression> parse_behaviors_tsv(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  return parse_behaviors_tsv(in);
}

inline void write_news_tsv(std::ostream& out, std::span<const NewsRecord> records) {
  for (const auto& r : records) {
    out << detail::tsv_cell(r.news_id) << '\t' << detail::tsv_cell(r.category) << '\t' << detail::tsv_cell(r.subcategory)
        << '\t' << detail::tsv_cell(r.title) << '\t' << detail::tsv_cell(r.abstract) << '\t' << detail::tsv_cell(r.url)
        << '\t' << detail::entities_json(r.title_entities) << '\t' << detail::entities_json(r.abstract_entities) << '\n';
  }
}

inline void write_behaviors_tsv(std::ostream& out, std::span<const Impression> impressions) {
  for (const auto& imp : impressions) {
    out << imp.impression_id << '\t' << imp.user_id << '\t' << imp.timestamp << '\t';
    for (std::size_t i = 0; i < imp.history.size(); ++i) out << (i ? " " : "") << imp.history[i];
    out << '\t';
    for (std::size_t i = 0; i < imp.candidates.size(); ++i)
      out << (i ? " " : "") << imp.candidates[i].news_id << '-' << imp.candidates[i].label;
    out << '\n';
  }
}

}  // namespace nrec
