#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

#include "ruleforge/memtrack.hpp"

namespace ruleforge {

// Dense row-major 2-D tensor. Vectors are (n x 1) or (1 x n); scalars (1 x 1).
template <typename S>
class TensorT {
 public:
  TensorT() = default;
  TensorT(int rows, int cols) : rows_(rows), cols_(cols) {
    assert(rows >= 0 && cols >= 0);
    data_.assign(static_cast<std::size_t>(rows) * cols, S(0));
    memtrack::add(bytes());
  }
  TensorT(const TensorT& other)
      : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
    memtrack::add(bytes());
  }
  TensorT(TensorT&& other) noexcept
      : rows_(other.rows_), cols_(other.cols_), data_(std::move(other.data_)) {
    other.rows_ = 0;
    other.cols_ = 0;
    other.data_.clear();
  }
  TensorT& operator=(const TensorT& other) {
    if (this != &other) {
      memtrack::sub(bytes());
      rows_ = other.rows_;
      cols_ = other.cols_;
      data_ = other.data_;
      memtrack::add(bytes());
    }
    return *this;
  }
  TensorT& operator=(TensorT&& other) noexcept {
    if (this != &other) {
      memtrack::sub(bytes());
      rows_ = other.rows_;
      cols_ = other.cols_;
      data_ = std::move(other.data_);
      other.rows_ = 0;
      other.cols_ = 0;
      other.data_.clear();
    }
    return *this;
  }
  ~TensorT() { memtrack::sub(bytes()); }

  static TensorT scalar(S value) {
    TensorT t(1, 1);
    t.data_[0] = value;
    return t;
  }
  static TensorT full(int rows, int cols, S value) {
    TensorT t(rows, cols);
    for (S& x : t.data_) x = value;
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::int64_t bytes() const {
    return static_cast<std::int64_t>(data_.size() * sizeof(S));
  }
  bool same_shape(const TensorT& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  S& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  S operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  void set_zero() {
    for (S& x : data_) x = S(0);
  }

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<S> data_;
};

using Tensor = TensorT<float>;

}  // namespace ruleforge
