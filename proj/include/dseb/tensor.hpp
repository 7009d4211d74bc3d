#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dseb {

/// Dense real array, double precision, row-major. Rank 0 (scalar), 1
/// (vector) and 2 (matrix) are the shapes the models use.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape does not match data length");
    }
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor vector_of(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor zeros_like(const Tensor& t) {
    return Tensor(t.shape_, std::vector<double>(t.size(), 0.0));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
  }

  static Tensor zeros_vector(std::size_t n) {
    return Tensor({n}, std::vector<double>(n, 0.0));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows under the 2-D view: scalars are 1x1, vectors 1xN.
  std::size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  std::size_t cols() const {
    if (rank() == 0) return 1;
    return rank() == 1 ? shape_[0] : shape_[1];
  }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double item() const {
    if (size() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << 'x';
      os << shape_[i];
    }
    os << ')';
    return os.str();
  }

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// c = a * b for 2-D views, accumulating into preallocated c (must be zeroed
/// by the caller when accumulation is not wanted).
inline void matmul_accumulate(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ap[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bp + p * n;
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ, lhs " +
                                a.shape_string() + " rhs " + b.shape_string());
  }
  Tensor c = Tensor::zeros(a.rows(), b.cols());
  matmul_accumulate(a, b, c);
  return c;
}

inline Tensor transpose(const Tensor& t) {
  Tensor out = Tensor::zeros(t.cols(), t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(j, i) = t.at(i, j);
  return out;
}

}  // namespace dseb
