#pragma once

#include <cmath>
#include <cstring>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nrec/error.hpp"

namespace nrec {

// Dense row-major float32 tensor. Rank 1 tensors behave as a single row
// wherever a matrix view is required.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f) : shape(std::move(dims)) {
    for (auto d : shape) {
      if (d == 0) throw ConfigError("tensor dimensions must be positive");
    }
    data.assign(element_count(shape), fill);
  }

  Tensor(std::vector<std::size_t> dims, std::vector<float> values) : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != element_count(shape)) {
      throw ConfigError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_string());
    }
  }

  static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims), 0.0f); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor vector(std::vector<float> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (float v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ')';
    return os.str();
  }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::memcmp(&a.data[i], &b.data[i], sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace nrec
