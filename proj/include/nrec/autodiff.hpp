#pragma once

// Minimal reverse-mode differentiation over dense float tensors.
//
// A Tape records every operation of one forward pass. Parameters enter the
// tape as zero-copy leaves; Tape::backward() walks the nodes in reverse order
// exactly once and accumulates gradients into Parameter::grad. Reductions are
// accumulated in double and rounded to float on store.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nrec/error.hpp"
#include "nrec/rng.hpp"
#include "nrec/tensor.hpp"

namespace nrec {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  // Per-row trainability for embedding tables; empty means every row trains.
  std::vector<std::uint8_t> row_trainable;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)), trainable(train) {}

  bool row_is_trainable(std::size_t r) const {
    return trainable && (row_trainable.empty() || row_trainable[r] != 0);
  }

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor::zeros(value.shape);
    std::fill(grad.data.begin(), grad.data.end(), 0.0f);
  }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  float scalar() const { return value().data.at(0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  // A non-recording tape keeps forward values only; used for inference and
  // finite-difference probes.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  // Leaf bound to a parameter; repeated calls return the same node.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = record_ && p.trainable;
    nodes_.push_back(std::move(n));
    param_ids_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var push(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var push(Tensor value, std::span<const Var> inputs, Backward fn) {
    if (!value.all_finite()) throw RuntimeFailure("non-finite value produced on tape, shape " + value.shape_string());
    Node n;
    n.owned = std::move(value);
    if (record_) {
      for (const auto& in : inputs) n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
      if (n.requires_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  // Node with no tape inputs that still feeds gradients somewhere (for
  // example a sparse embedding gather that scatters into a parameter).
  Var push_source(Tensor value, bool requires_grad, Backward fn) {
    if (!value.all_finite()) throw RuntimeFailure("non-finite value produced on tape, shape " + value.shape_string());
    Node n;
    n.owned = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(value(id).shape);
    return n.grad;
  }

  // Backpropagates d(loss)/d(.) and returns how many nodes were visited.
  std::size_t backward(Var loss) {
    if (!record_) throw ConfigError("backward() on a non-recording tape");
    if (backward_done_) throw ConfigError("backward() may run only once per tape");
    if (value(loss.id).size() != 1) throw ConfigError("backward() requires a scalar loss");
    backward_done_ = true;
    grad(loss.id).data[0] = 1.0f;
    std::size_t visited = 0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      ++visited;
      if (n.param != nullptr) {
        accumulate_into_parameter(*n.param, n.grad);
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
    return visited;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  static void accumulate_into_parameter(Parameter& p, const Tensor& g) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros(p.value.shape);
    const std::size_t cols = p.value.cols();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.row_is_trainable(p.value.rank() >= 2 ? i / cols : 0)) p.grad.data[i] += g.data[i];
    }
  }

  bool record_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ad {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// C(n x m) = A(n x k) * B(k x m)
inline std::vector<float> mm_nn(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<float> out(n * m);
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0) continue;
      const float* brow = &b.data[p * m];
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = static_cast<float>(acc[j]);
  }
  return out;
}

// C(n x m) = A(n x k) * B(m x k)^T
inline std::vector<float> mm_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  std::vector<float> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const float* arow = &a.data[i * k];
    for (std::size_t j = 0; j < m; ++j) {
      const float* brow = &b.data[j * k];
      // four independent partial sums so the loop pipelines
      double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        a0 += static_cast<double>(arow[p]) * brow[p];
        a1 += static_cast<double>(arow[p + 1]) * brow[p + 1];
        a2 += static_cast<double>(arow[p + 2]) * brow[p + 2];
        a3 += static_cast<double>(arow[p + 3]) * brow[p + 3];
      }
      for (; p < k; ++p) a0 += static_cast<double>(arow[p]) * brow[p];
      out[i * m + j] = static_cast<float>((a0 + a1) + (a2 + a3));
    }
  }
  return out;
}

// C(n x m) = A(k x n)^T * B(k x m)
inline std::vector<float> mm_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  std::vector<double> acc(n * m, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = &b.data[p * m];
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a.data[p * n + i];
      if (av == 0.0) continue;
      double* crow = &acc[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return {acc.begin(), acc.end()};
}

inline void add_to(Tensor& dst, std::span<const float> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src[i];
}

}  // namespace detail

// Y = X W^T (+ b); X (n x in), W (out x in), b (out).
inline Var linear(Var x, Var w, const Var* b = nullptr) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require(xv.cols() == wv.cols(), "linear: input width " + std::to_string(xv.cols()) +
                                              " does not match weight " + wv.shape_string());
  const std::size_t n = xv.rows(), out = wv.rows();
  std::vector<float> y = detail::mm_nt(xv, wv);
  if (b != nullptr) {
    const Tensor& bv = b->value();
    detail::require(bv.size() == out, "linear: bias size mismatch");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bv.data[j];
  }
  Tensor result({n, out}, std::move(y));
  std::vector<Var> inputs{x, w};
  if (b != nullptr) inputs.push_back(*b);
  const std::size_t bid = b != nullptr ? b->id : SIZE_MAX;
  return x.tape->push(std::move(result), inputs, [x, w, bid](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (t.requires_grad(x.id)) detail::add_to(t.grad(x.id), detail::mm_nn(dy, t.value(w.id)));
    if (t.requires_grad(w.id)) detail::add_to(t.grad(w.id), detail::mm_tn(dy, t.value(x.id)));
    if (bid != SIZE_MAX && t.requires_grad(bid)) {
      Tensor& db = t.grad(bid);
      const std::size_t rows = dy.rows(), cols = dy.cols();
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += dy.data[i * cols + j];
        db.data[j] += static_cast<float>(s);
      }
    }
  });
}

// A (n x k) * B (k x m)
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  Tensor result({av.rows(), bv.cols()}, detail::mm_nn(av, bv));
  return a.tape->push(std::move(result), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (t.requires_grad(a.id)) detail::add_to(t.grad(a.id), detail::mm_nt(dy, t.value(b.id)));
    if (t.requires_grad(b.id)) detail::add_to(t.grad(b.id), detail::mm_tn(t.value(a.id), dy));
  });
}

// A (n x k) * B (m x k)^T
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ");
  Tensor result({av.rows(), bv.rows()}, detail::mm_nt(av, bv));
  return a.tape->push(std::move(result), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (t.requires_grad(a.id)) detail::add_to(t.grad(a.id), detail::mm_nn(dy, t.value(b.id)));
    if (t.requires_grad(b.id)) detail::add_to(t.grad(b.id), detail::mm_tn(dy, t.value(a.id)));
  });
}

inline Var scale(Var x, float s) {
  Tensor out = x.value();
  for (auto& v : out.data) v *= s;
  return x.tape->push(std::move(out), {x}, [x, s](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += s * dy.data[i];
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.value().size() == b.value().size(), "add: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (t.requires_grad(a.id)) detail::add_to(t.grad(a.id), dy.data);
    if (t.requires_grad(b.id)) detail::add_to(t.grad(b.id), dy.data);
  });
}

inline Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = std::tanh(v);
  return x.tape->push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * (1.0f - y.data[i] * y.data[i]);
  });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
  return x.tape->push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (y.data[i] > 0.0f) dx.data[i] += dy.data[i];
  });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[j * n + i] = xv.data[i * m + j];
  return x.tape->push(std::move(out), {x}, [x, n, m](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) dx.data[i * m + j] += dy.data[j * n + i];
  });
}

// Row-wise softmax of S (n x m); columns with mask[j] == 0 get exactly zero
// weight. Max-subtracted, sums in double.
inline Var masked_softmax_rows(Var s, std::span<const std::uint8_t> mask = {}) {
  const Tensor& sv = s.value();
  const std::size_t n = sv.rows(), m = sv.cols();
  detail::require(mask.empty() || mask.size() == m, "masked_softmax_rows: mask length mismatch");
  auto live = [&](std::size_t j) { return mask.empty() || mask[j] != 0; };
  bool any = false;
  for (std::size_t j = 0; j < m; ++j) any = any || live(j);
  if (!any) throw InputError("attention over a fully masked sequence");
  Tensor out({n, m}, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (live(j)) mx = std::max(mx, static_cast<double>(sv.data[i * m + j]));
    double z = 0.0;
    std::vector<double> e(m, 0.0);
    for (std::size_t j = 0; j < m; ++j)
      if (live(j)) z += e[j] = std::exp(static_cast<double>(sv.data[i * m + j]) - mx);
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] = static_cast<float>(e[j] / z);
  }
  return s.tape->push(std::move(out), {s}, [s, n, m](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ds = t.grad(s.id);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += static_cast<double>(dy.data[i * m + j]) * y.data[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        ds.data[i * m + j] += static_cast<float>(y.data[i * m + j] * (dy.data[i * m + j] - dot));
    }
  });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  detail::require(start + len <= m, "slice_cols: range out of bounds");
  Tensor out({n, len});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) out.data[i * len + j] = xv.data[i * m + start + j];
  return x.tape->push(std::move(out), {x}, [x, n, m, start, len](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j) dx.data[i * m + start + j] += dy.data[i * len + j];
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rows() == n, "concat_cols: row count mismatch");
    total += p.value().cols();
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t c = pv.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out.data[i * total + offset + j] = pv.data[i * c + j];
    offset += c;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [saved, n, total](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    std::size_t off = 0;
    for (const auto& p : saved) {
      const std::size_t c = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        Tensor& dp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) dp.data[i * c + j] += dy.data[i * total + off + j];
      }
      off += c;
    }
  });
}

// Stacks equally sized rows (rank 1 or 1 x d) into an (n x d) matrix.
inline Var stack_rows(std::span<const Var> rows) {
  detail::require(!rows.empty(), "stack_rows: no inputs");
  const std::size_t d = rows[0].value().size();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = rows[i].value();
    detail::require(rv.size() == d, "stack_rows: width mismatch");
    std::copy(rv.data.begin(), rv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<Var> saved(rows.begin(), rows.end());
  return rows[0].tape->push(std::move(out), rows, [saved, d](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (!t.requires_grad(saved[i].id)) continue;
      Tensor& dr = t.grad(saved[i].id);
      for (std::size_t j = 0; j < d; ++j) dr.data[j] += dy.data[i * d + j];
    }
  });
}

// Row i of X as a rank-1 tensor.
inline Var row(Var x, std::size_t i) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  detail::require(i < xv.rows(), "row: index out of range");
  Tensor out({d});
  std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>(i * d), d, out.data.begin());
  return x.tape->push(std::move(out), {x}, [x, i, d](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t j = 0; j < d; ++j) dx.data[i * d + j] += dy.data[j];
  });
}

// Reshape without copying semantics changes (same data order).
inline Var reshape(Var x, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), x.value().data);
  return x.tape->push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    detail::add_to(t.grad(x.id), t.grad(self).data);
  });
}

inline Var dot(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) throw InputError("dot: dimension mismatch " + av.shape_string() + " vs " + bv.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += static_cast<double>(av.data[i]) * bv.data[i];
  return a.tape->push(Tensor({1}, {static_cast<float>(s)}), {a, b}, [a, b](Tape& t, std::size_t self) {
    const float g = t.grad(self).data[0];
    const Tensor& av2 = t.value(a.id);
    const Tensor& bv2 = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor& da = t.grad(a.id);
      for (std::size_t i = 0; i < av2.size(); ++i) da.data[i] += g * bv2.data[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& db = t.grad(b.id);
      for (std::size_t i = 0; i < bv2.size(); ++i) db.data[i] += g * av2.data[i];
    }
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (float v : x.value().data) s += v;
  return x.tape->push(Tensor({1}, {static_cast<float>(s)}), {x}, [x](Tape& t, std::size_t self) {
    const float g = t.grad(self).data[0];
    for (auto& v : t.grad(x.id).data) v += g;
  });
}

// Mean of scalar nodes.
inline Var mean(std::span<const Var> scalars) {
  detail::require(!scalars.empty(), "mean: no inputs");
  double s = 0.0;
  for (const auto& v : scalars) s += v.value().data.at(0);
  const double n = static_cast<double>(scalars.size());
  std::vector<Var> saved(scalars.begin(), scalars.end());
  return scalars[0].tape->push(Tensor({1}, {static_cast<float>(s / n)}), scalars, [saved, n](Tape& t, std::size_t self) {
    const float g = static_cast<float>(t.grad(self).data[0] / n);
    for (const auto& v : saved)
      if (t.requires_grad(v.id)) t.grad(v.id).data[0] += g;
  });
}

// Inverted dropout; identity when p == 0.
inline Var dropout(Var x, float p, Rng& rng) {
  if (p <= 0.0f) return x;
  detail::require(p < 1.0f, "dropout: probability must be < 1");
  Tensor out = x.value();
  std::vector<float> keep(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = rng.unit() < p ? 0.0f : 1.0f / (1.0f - p);
    out.data[i] *= keep[i];
  }
  return x.tape->push(std::move(out), {x}, [x, keep = std::move(keep)](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * keep[i];
  });
}

}  // namespace ad
}  // namespace nrec
