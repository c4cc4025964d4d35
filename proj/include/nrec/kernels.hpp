#pragma once

// Differentiable building blocks of the news and user encoders.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nrec/autodiff.hpp"

namespace nrec {

// Glorot-uniform initialisation for a (fan_out x fan_in) weight.
inline Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const float a = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  for (auto& v : t.data) v = rng.uniform(-a, a);
  return t;
}

// Parameters of  a_i = query^T tanh(projection x_i + bias).
struct AdditiveAttentionParams {
  Parameter projection;  // att_dim x in_dim
  Parameter bias;        // att_dim
  Parameter query;       // att_dim

  static AdditiveAttentionParams create(const std::string& name, std::size_t in_dim, std::size_t att_dim, Rng& rng) {
    AdditiveAttentionParams p;
    p.projection = Parameter(name + ".projection", glorot_uniform({att_dim, in_dim}, in_dim, att_dim, rng));
    p.bias = Parameter(name + ".bias", Tensor::zeros({att_dim}));
    p.query = Parameter(name + ".query", glorot_uniform({att_dim}, att_dim, 1, rng));
    return p;
  }

  std::size_t in_dim() const { return projection.value.cols(); }
  std::size_t att_dim() const { return projection.value.rows(); }

  void validate() const {
    if (projection.value.rank() != 2 || bias.value.size() != att_dim() || query.value.size() != att_dim())
      throw ConfigError("additive attention parameters have inconsistent shapes");
  }

  std::vector<Parameter*> parameters() { return {&projection, &bias, &query}; }
};

// Scaled dot-product self-attention; value width equals input width.
struct SelfAttentionParams {
  Parameter wq;  // d x d
  Parameter wk;
  Parameter wv;
  std::size_t heads = 4;

  static SelfAttentionParams create(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("self-attention width " + std::to_string(dim) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    SelfAttentionParams p;
    p.wq = Parameter(name + ".wq", glorot_uniform({dim, dim}, dim, dim, rng));
    p.wk = Parameter(name + ".wk", glorot_uniform({dim, dim}, dim, dim, rng));
    p.wv = Parameter(name + ".wv", glorot_uniform({dim, dim}, dim, dim, rng));
    p.heads = heads;
    return p;
  }

  std::vector<Parameter*> parameters() { return {&wq, &wk, &wv}; }
};

// Gathers rows of `table`. Row 0 is the padding row; gradients reach only the
// looked-up rows and never rows marked untrainable.
inline Var embed_lookup(Tape& tape, Parameter& table, std::span<const std::int32_t> indices) {
  const Tensor& tv = table.value;
  const std::size_t rows = tv.rows(), dim = tv.cols();
  if (indices.empty()) throw InputError("embed_lookup: empty index sequence");
  Tensor out({indices.size(), dim});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows)
      throw InputError("embed_lookup: index " + std::to_string(idx) + " out of range for table '" + table.name +
                       "' with " + std::to_string(rows) + " rows");
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(idx * dim), dim,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  std::vector<std::int32_t> saved(indices.begin(), indices.end());
  Parameter* p = &table;
  return tape.push_source(std::move(out), table.trainable, [p, saved, dim](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (!p->grad.same_shape(p->value)) p->grad = Tensor::zeros(p->value.shape);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      const auto r = static_cast<std::size_t>(saved[i]);
      if (!p->row_is_trainable(r)) continue;
      for (std::size_t j = 0; j < dim; ++j) p->grad.data[r * dim + j] += dy.data[i * dim + j];
    }
  });
}

// Same-length 1-D convolution followed by ReLU.
//   seq:     T x d_in
//   filters: d_out x (window * d_in), column w * d_in + c multiplies seq[t + w - half][c]
//   bias:    d_out
// Positions outside [0, T) are zero.
inline Var conv1d(Var seq, Var filters, Var bias, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("conv1d window must be a positive odd number, got " + std::to_string(window));
  const Tensor& x = seq.value();
  const Tensor& w = filters.value();
  const std::size_t steps = x.rows(), din = x.cols(), dout = w.rows(), half = (window - 1) / 2;
  if (w.cols() != window * din) throw ConfigError("conv1d filter bank shape " + w.shape_string() + " does not match window x input width");
  if (bias.value().size() != dout) throw ConfigError("conv1d bias size mismatch");

  Tensor cols({steps, window * din}, 0.0f);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < window; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(half);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      std::copy_n(x.data.begin() + src * static_cast<std::ptrdiff_t>(din), din,
                  cols.data.begin() + static_cast<std::ptrdiff_t>(t * window * din + k * din));
    }
  }
  std::vector<float> y = ad::detail::mm_nt(cols, w);
  const Tensor& b = bias.value();
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t f = 0; f < dout; ++f) y[t * dout + f] += b.data[f];

  Tape& tape = *seq.tape;
  Var pre = tape.push(Tensor({steps, dout}, std::move(y)), {seq, filters, bias},
                      [seq, filters, bias, cols = std::move(cols), steps, din, window, half](Tape& t, std::size_t self) {
                        const Tensor& dy = t.grad(self);
                        if (t.requires_grad(filters.id)) ad::detail::add_to(t.grad(filters.id), ad::detail::mm_tn(dy, cols));
                        if (t.requires_grad(bias.id)) {
                          Tensor& db = t.grad(bias.id);
                          const std::size_t dout2 = dy.cols();
                          for (std::size_t f = 0; f < dout2; ++f) {
                            double s = 0.0;
                            for (std::size_t r = 0; r < steps; ++r) s += dy.data[r * dout2 + f];
                            db.data[f] += static_cast<float>(s);
                          }
                        }
                        if (t.requires_grad(seq.id)) {
                          const std::vector<float> dcols = ad::detail::mm_nn(dy, t.value(filters.id));
                          Tensor& dx = t.grad(seq.id);
                          for (std::size_t r = 0; r < steps; ++r) {
                            for (std::size_t k = 0; k < window; ++k) {
                              const auto src = static_cast<std::ptrdiff_t>(r + k) - static_cast<std::ptrdiff_t>(half);
                              if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
                              for (std::size_t c = 0; c < din; ++c)
                                dx.data[static_cast<std::size_t>(src) * din + c] += dcols[r * window * din + k * din + c];
                            }
                          }
                        }
                      });
  return ad::relu(pre);
}

struct AttentionOutput {
  Var weights;  // n
  Var pooled;   // d
};

// Additive attention pooling over the rows of `seq` (n x d). Masked rows get
// exactly zero weight; at least one row must be unmasked.
inline AttentionOutput additive_attention(Var seq, AdditiveAttentionParams& params, std::span<const std::uint8_t> mask = {}) {
  params.validate();
  Tape& tape = *seq.tape;
  const Tensor& x = seq.value();
  const std::size_t n = x.rows(), d = x.cols();
  if (d != params.in_dim())
    throw ConfigError("additive attention expects width " + std::to_string(params.in_dim()) + ", got " + std::to_string(d));
  if (!mask.empty() && mask.size() != n) throw ConfigError("additive attention mask length mismatch");
  Var w = tape.param(params.projection);
  Var b = tape.param(params.bias);
  Var q = tape.param(params.query);
  Var hidden = ad::tanh(ad::linear(seq, w, &b));
  Var scores = ad::reshape(ad::linear(hidden, q), {1, n});
  Var weights = ad::masked_softmax_rows(scores, mask);
  Var pooled = ad::matmul(weights, seq);
  return {ad::reshape(weights, {n}), ad::reshape(pooled, {d})};
}

// Multi-head scaled dot-product self-attention over `seq` (n x d). Masked
// rows are excluded as keys; every output row is a convex combination of the
// value projections of unmasked rows.
inline Var self_attention(Var seq, SelfAttentionParams& params, std::span<const std::uint8_t> mask = {}) {
  Tape& tape = *seq.tape;
  const Tensor& x = seq.value();
  const std::size_t d = x.cols();
  if (params.heads == 0 || d % params.heads != 0)
    throw ConfigError("self-attention width " + std::to_string(d) + " is not divisible by " + std::to_string(params.heads) + " heads");
  if (params.wq.value.cols() != d) throw ConfigError("self-attention projection width mismatch");
  const std::size_t dk = d / params.heads;
  Var q = ad::linear(seq, tape.param(params.wq));
  Var k = ad::linear(seq, tape.param(params.wk));
  Var v = ad::linear(seq, tape.param(params.wv));
  const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<Var> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    Var qh = ad::slice_cols(q, h * dk, dk);
    Var kh = ad::slice_cols(k, h * dk, dk);
    Var vh = ad::slice_cols(v, h * dk, dk);
    Var att = ad::masked_softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), mask);
    heads.push_back(ad::matmul(att, vh));
  }
  return heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
}

// -log softmax(logits)[target], max-subtracted.
inline Var softmax_cross_entropy(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  const std::size_t n = z.size();
  if (target >= n) throw InputError("softmax_cross_entropy: target " + std::to_string(target) + " out of range");
  double mx = z.data[0];
  for (float v : z.data) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : z.data) sum += std::exp(static_cast<double>(v) - mx);
  const double loss = std::log(sum) - (static_cast<double>(z.data[target]) - mx);
  return logits.tape->push(Tensor({1}, {static_cast<float>(std::max(0.0, loss))}), {logits},
                           [logits, target, mx, sum, n](Tape& t, std::size_t self) {
                             const float g = t.grad(self).data[0];
                             const Tensor& zz = t.value(logits.id);
                             Tensor& dz = t.grad(logits.id);
                             for (std::size_t i = 0; i < n; ++i) {
                               const double p = std::exp(static_cast<double>(zz.data[i]) - mx) / sum;
                               dz.data[i] += static_cast<float>(g * (p - (i == target ? 1.0 : 0.0)));
                             }
                           });
}

}  // namespace nrec
