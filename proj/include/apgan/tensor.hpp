#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apgan {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of 64-bit floats. Rank 1 and rank 2 cover every
// structure the networks need; higher ranks are rejected at construction.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_string(shape_));
    return shape_[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_string(shape_));
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t r) { return data_.data() + r * shape_[1]; }
  const double* row(std::size_t r) const { return data_.data() + r * shape_[1]; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

 private:
  static std::size_t checked_count(const std::vector<std::size_t>& shape) {
    if (shape.size() > 2) {
      throw ShapeError("tensor rank " + std::to_string(shape.size()) + " not supported");
    }
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

// y += alpha * x
inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  check_same_shape("axpy", x, y);
  const double* xp = x.data();
  double* yp = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) yp[i] += alpha * xp[i];
}

inline void add_inplace(Tensor& a, const Tensor& b) { axpy(1.0, b, a); }

inline void scale_inplace(Tensor& a, double s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

namespace detail {

// c[m x n] += a[m x k] * b[k x n], all row-major contiguous.
inline void gemm_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
inline void gemm_nt_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace detail

}  // namespace apgan
