#pragma once

// Straight-line reference implementations used only by the test suites.
// They deliberately avoid the library's kernels and work in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nrec/rng.hpp"
#include "nrec/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const nrec::Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline nrec::Tensor random_tensor(std::vector<std::size_t> shape, nrec::Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  nrec::Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Row gather by explicit loop.
inline Matrix gather(const Matrix& table, const std::vector<std::int32_t>& idx) {
  Matrix out;
  for (auto i : idx) {
    std::vector<double> row;
    for (double v : table[static_cast<std::size_t>(i)]) row.push_back(v);
    out.push_back(row);
  }
  return out;
}

// Brute-force sliding window; filters[f][k * din + c], zero padded, ReLU.
inline Matrix conv1d_relu(const Matrix& x, const Matrix& filters, const std::vector<double>& bias, std::size_t window) {
  const auto steps = static_cast<long>(x.size());
  const std::size_t din = x.empty() ? 0 : x[0].size();
  const long half = static_cast<long>(window - 1) / 2;
  Matrix out(x.size(), std::vector<double>(filters.size(), 0.0));
  for (long t = 0; t < steps; ++t) {
    for (std::size_t f = 0; f < filters.size(); ++f) {
      double s = bias[f];
      for (std::size_t k = 0; k < window; ++k) {
        const long src = t + static_cast<long>(k) - half;
        if (src < 0 || src >= steps) continue;
        for (std::size_t c = 0; c < din; ++c) s += filters[f][k * din + c] * x[static_cast<std::size_t>(src)][c];
      }
      out[static_cast<std::size_t>(t)][f] = std::max(0.0, s);
    }
  }
  return out;
}

struct Pooling {
  std::vector<double> weights;
  std::vector<double> pooled;
};

// a_i = q . tanh(W x_i + b), softmax over unmasked positions, weighted sum.
inline Pooling additive_attention(const Matrix& x, const Matrix& w, const std::vector<double>& b,
                                  const std::vector<double>& q, const std::vector<std::uint8_t>& mask) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0;
    for (std::size_t r = 0; r < w.size(); ++r) {
      double h = b[r];
      for (std::size_t c = 0; c < d; ++c) h += w[r][c] * x[i][c];
      a += q[r] * std::tanh(h);
    }
    scores[i] = a;
  }
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask.empty() || mask[i]) denom += std::exp(scores[i]);
  Pooling p{std::vector<double>(n, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    p.weights[i] = std::exp(scores[i]) / denom;
    for (std::size_t c = 0; c < d; ++c) p.pooled[c] += p.weights[i] * x[i][c];
  }
  return p;
}

// Single-head attention: softmax(Q K^T / sqrt(d)) V with masked keys removed.
inline Matrix self_attention_single_head(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                                         const std::vector<std::uint8_t>& mask) {
  const std::size_t n = x.size(), d = wq.size();
  auto project = [&](const Matrix& w) {
    Matrix out(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < x[i].size(); ++c) out[i][r] += w[r][c] * x[i][c];
    return out;
  };
  const Matrix q = project(wq), k = project(wk), v = project(wv);
  Matrix out(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.empty() && !mask[j]) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
      e[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
      z += e[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i][c] += e[j] / z * v[j][c];
  }
  return out;
}

inline double cross_entropy(const std::vector<double>& logits, std::size_t target) {
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  return -std::log(std::exp(logits[target]) / z);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Pairwise Mann-Whitney AUC: wins + half ties over all (pos, neg) pairs.
inline double auc_pairs(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Rank of item i: 1 + number of items placed before it (higher score, or equal
// score and earlier position).
inline std::size_t rank_of(const std::vector<double>& scores, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++r;
  }
  return r;
}

inline double mrr(const std::vector<int>& labels, const std::vector<double>& scores) {
  double s = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++pos;
    s += 1.0 / static_cast<double>(rank_of(scores, i));
  }
  return s / static_cast<double>(pos);
}

inline double ndcg(const std::vector<int>& labels, const std::vector<double>& scores, std::size_t k) {
  double dcg = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++pos;
    const std::size_t r = rank_of(scores, i);
    if (r <= k) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  double idcg = 0.0;
  for (std::size_t r = 1; r <= std::min(pos, k); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

}  // namespace oracle
