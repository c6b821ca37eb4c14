#pragma once

#include <cassert>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sigcast {

class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Dense row-major tensor of 64-bit reals. Rank 1 and rank 2 cover every
// structure in this codebase; scalars are rank-1 tensors of length 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long long>(data_.size()) != count(shape_)) {
      throw ShapeError("tensor data length does not match shape " + shape_str());
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    return Tensor(std::move(shape), std::move(data));
  }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  int rows() const {
    assert(ndim() >= 1);
    return shape_[0];
  }
  int cols() const {
    assert(ndim() == 2);
    return shape_[1];
  }

  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator()(int r, int c) const {
    assert(ndim() == 2);
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(c)];
  }
  double& operator()(int r, int c) {
    assert(ndim() == 2);
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(c)];
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static long long count(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative tensor extent");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace sigcast
