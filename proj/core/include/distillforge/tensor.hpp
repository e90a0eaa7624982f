// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "distillforge/common.hpp"

namespace df {

// Dense row-major array. Most of the pipeline uses rank-2 tensors
// (frames x dims), so 2-D accessors are first-class.
template <typename Real>
class TensorT {
 public:
  TensorT() = default;
  TensorT(size_t rows, size_t cols) : shape_{rows, cols}, data_(rows * cols, Real(0)) {}
  explicit TensorT(std::vector<size_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel(), Real(0));
  }

  size_t numel() const {
    size_t n = 1;
    for (size_t d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
  }
  const std::vector<size_t>& shape() const { return shape_; }
  size_t rows() const { return shape_.size() == 2 ? shape_[0] : 0; }
  size_t cols() const { return shape_.size() == 2 ? shape_[1] : 0; }

  Real* row(size_t r) { return data_.data() + r * cols(); }
  const Real* row(size_t r) const { return data_.data() + r * cols(); }
  Real& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  Real at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
  void ensure_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
  }

  template <typename Other>
  TensorT<Other> cast() const {
    TensorT<Other> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = static_cast<Other>(data_[i]);
    return out;
  }

 private:
  std::vector<size_t> shape_;
  std::vector<Real> data_;
};

using Tensor = TensorT<float>;

inline bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace df
