#pragma once

// Scoring impressions with a frozen model (or a debug scorer) and
// aggregating ranking metrics.

#include <atomic>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <thread>
#include <unordered_map>

#include "nrec/metrics.hpp"
#include "nrec/model.hpp"

namespace nrec {

struct ScoredImpression {
  std::string impression_id;
  std::vector<std::string> news_ids;
  std::vector<int> labels;
  std::vector<double> scores;
};

// Returns candidate scores in impression order, or nullopt when the
// impression cannot be scored (unknown candidate id).
using ImpressionScorer = std::function<std::optional<std::vector<double>>(const Impression&)>;

inline ImpressionScorer oracle_scorer() {
  return [](const Impression& imp) {
    std::vector<double> s;
    for (const auto& c : imp.candidates) s.push_back(c.label);
    return std::optional(s);
  };
}

inline ImpressionScorer anti_oracle_scorer() {
  return [](const Impression& imp) {
    std::vector<double> s;
    for (const auto& c : imp.candidates) s.push_back(-c.label);
    return std::optional(s);
  };
}

inline ImpressionScorer random_scorer(std::uint64_t seed) {
  return [seed](const Impression& imp) {
    Rng rng(mix_seed(seed, imp.impression_id));
    std::vector<double> s;
    for (std::size_t i = 0; i < imp.candidates.size(); ++i) s.push_back(rng.unit());
    return std::optional(s);
  };
}

// Frozen-model scorer. Every article is encoded once up front; the cache is
// read-only afterwards.
class ModelScorer {
 public:
  ModelScorer(NewsRecModel& model, const NewsFeatureTable& table, std::size_t max_history, std::size_t threads = 0)
      : model_(model), max_history_(max_history) {
    std::vector<const NewsFeatures*> items;
    items.reserve(table.size());
    for (const auto& [id, f] : table) items.push_back(&f);
    std::vector<std::vector<float>> vecs(items.size());
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<std::size_t>(threads, std::max<std::size_t>(1, items.size()));
    std::atomic<std::size_t> next{0};
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < items.size(); i = next++) vecs[i] = infer_news(model_, *items[i]);
        });
    }
    for (std::size_t i = 0; i < items.size(); ++i) cache_.emplace(items[i]->news_id, std::move(vecs[i]));
  }

  std::optional<std::vector<double>> operator()(const Impression& imp) const {
    std::vector<const std::vector<float>*> hist;
    for (const auto& id : imp.history)
      if (auto it = cache_.find(id); it != cache_.end()) hist.push_back(&it->second);
    if (hist.size() > max_history_) hist.erase(hist.begin(), hist.end() - static_cast<std::ptrdiff_t>(max_history_));
    std::vector<const std::vector<float>*> cands;
    for (const auto& c : imp.candidates) {
      auto it = cache_.find(c.news_id);
      if (it == cache_.end()) return std::nullopt;
      cands.push_back(&it->second);
    }
    const auto user = infer_user(model_, hist);
    std::vector<double> scores;
    for (const auto* c : cands) scores.push_back(dot_score(user, *c));
    return scores;
  }

  const std::unordered_map<std::string, std::vector<float>>& news_cache() const { return cache_; }

 private:
  NewsRecModel& model_;
  std::size_t max_history_;
  std::unordered_map<std::string, std::vector<float>> cache_;
};

struct Evaluation {
  MetricReport report;
  std::vector<ScoredImpression> scored;
};

inline Evaluation evaluate(std::span<const Impression> impressions, const ImpressionScorer& scorer) {
  Evaluation out;
  MetricAccumulator acc;
  for (const auto& imp : impressions) {
    auto scores = scorer(imp);
    if (!scores) {
      acc.add_unresolvable();
      continue;
    }
    ScoredImpression s{imp.impression_id, {}, {}, std::move(*scores)};
    for (const auto& c : imp.candidates) {
      s.news_ids.push_back(c.news_id);
      s.labels.push_back(c.label);
    }
    acc.add(ImpressionMetrics::of(s.labels, s.scores));
    out.scored.push_back(std::move(s));
  }
  out.report = acc.report();
  return out;
}

// One JSON line per impression: candidates with scores and labels.
inline void write_predictions(const std::filesystem::path& path, std::span<const ScoredImpression> scored) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& s : scored) {
    nlohmann::json cands = nlohmann::json::array();
    for (std::size_t i = 0; i < s.news_ids.size(); ++i)
      cands.push_back({{"news_id", s.news_ids[i]}, {"score", s.scores[i]}, {"label", s.labels[i]}});
    out << nlohmann::json{{"impression_id", s.impression_id}, {"candidates", cands}}.dump() << '\n';
  }
}

}  // namespace nrec
