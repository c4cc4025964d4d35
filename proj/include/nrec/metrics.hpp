#pragma once

// Impression-level ranking metrics. Rankings are by descending score; equal
// scores keep the original candidate order.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrec/error.hpp"

namespace nrec {

namespace detail {

inline void check_lengths(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size())
    throw InputError("metric: " + std::to_string(labels.size()) + " labels vs " + std::to_string(scores.size()) + " scores");
}

// 1-based rank of every candidate.
inline std::vector<std::size_t> ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

}  // namespace detail

// Mann-Whitney AUC: share of (positive, negative) pairs ordered correctly,
// ties worth one half. nullopt for single-class impressions.
inline std::optional<double> auc(std::span<const int> labels, std::span<const double> scores) {
  detail::check_lengths(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the tie-averaged rank sum of the positives, kept integral.
  std::size_t pos = 0, twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t twice_avg = i + 1 + j;  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        ++pos;
        twice_rank_sum += twice_avg;
      }
    i = j;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double wins = static_cast<double>(twice_rank_sum - pos * (pos + 1)) / 2.0;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Mean reciprocal rank over all positives. nullopt without positives.
inline std::optional<double> mrr(std::span<const int> labels, std::span<const double> scores) {
  detail::check_lengths(labels, scores);
  const auto rank = detail::ranks(scores);
  double s = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++pos;
    s += 1.0 / static_cast<double>(rank[i]);
  }
  if (pos == 0) return std::nullopt;
  return s / static_cast<double>(pos);
}

// Binary-gain nDCG@k. nullopt without positives.
inline std::optional<double> ndcg_at_k(std::span<const int> labels, std::span<const double> scores, std::size_t k) {
  detail::check_lengths(labels, scores);
  if (k == 0) throw ConfigError("ndcg cutoff must be positive");
  const auto rank = detail::ranks(scores);
  double dcg = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++pos;
    if (rank[i] <= k) dcg += 1.0 / std::log2(static_cast<double>(rank[i]) + 1.0);
  }
  if (pos == 0) return std::nullopt;
  double idcg = 0.0;
  for (std::size_t r = 1; r <= std::min(pos, k); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

struct ImpressionMetrics {
  std::optional<double> auc, mrr, ndcg5, ndcg10;

  static ImpressionMetrics of(std::span<const int> labels, std::span<const double> scores) {
    return {nrec::auc(labels, scores), nrec::mrr(labels, scores), ndcg_at_k(labels, scores, 5), ndcg_at_k(labels, scores, 10)};
  }
};

struct MetricReport {
  std::optional<double> auc, mrr, ndcg5, ndcg10;
  std::size_t n_impressions = 0;       // impressions scored
  std::size_t n_auc = 0;               // of which both classes present
  std::size_t skipped_single_class = 0;
  std::size_t skipped_no_positive = 0;
  std::size_t skipped_unresolvable = 0;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"auc", opt(auc)},
            {"mrr", opt(mrr)},
            {"ndcg5", opt(ndcg5)},
            {"ndcg10", opt(ndcg10)},
            {"n_impressions", n_impressions},
            {"n_auc", n_auc},
            {"skipped_single_class", skipped_single_class},
            {"skipped_no_positive", skipped_no_positive},
            {"skipped_unresolvable", skipped_unresolvable}};
  }
};

// Unweighted means; AUC over two-class impressions, MRR/nDCG over
// impressions with at least one positive.
class MetricAccumulator {
 public:
  void add(const ImpressionMetrics& m) {
    ++report_.n_impressions;
    if (m.auc) {
      auc_ += *m.auc;
      ++report_.n_auc;
    } else {
      ++report_.skipped_single_class;
    }
    if (m.mrr) {
      mrr_ += *m.mrr;
      ndcg5_ += *m.ndcg5;
      ndcg10_ += *m.ndcg10;
      ++ranked_;
    } else {
      ++report_.skipped_no_positive;
    }
  }

  void add_unresolvable() { ++report_.skipped_unresolvable; }

  MetricReport report() const {
    MetricReport r = report_;
    if (r.n_auc) r.auc = auc_ / static_cast<double>(r.n_auc);
    if (ranked_) {
      const auto n = static_cast<double>(ranked_);
      r.mrr = mrr_ / n;
      r.ndcg5 = ndcg5_ / n;
      r.ndcg10 = ndcg10_ / n;
    }
    return r;
  }

 private:
  MetricReport report_;
  double auc_ = 0, mrr_ = 0, ndcg5_ = 0, ndcg10_ = 0;
  std::size_t ranked_ = 0;
};

}  // namespace nrec
