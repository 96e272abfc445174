#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace boed::ad {

/// Dense row-major array of 64-bit reals.
///
/// Rank 0 is a scalar, rank 1 of length n behaves as a single row [1, n] in
/// two-dimensional operations, rank 2 is [rows, cols]. Higher ranks are
/// storable (checkpoints) but no operation consumes them.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape, double fill = 0.0);
  Array(std::vector<std::size_t> shape, std::vector<double> values);

  static Array scalar(double v) { return Array({}, std::vector<double>{v}); }
  static Array matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Array({rows, cols}, fill);
  }
  static Array vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  bool all_finite() const;
  void fill(double v);

  /// Same values, new shape with equal element count.
  Array reshaped(std::vector<std::size_t> shape) const;

  friend bool operator==(const Array&, const Array&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Dense kernels shared by the graph and by tape-free inference paths.
// All matrices are row-major.

/// C[m,n] = A[m,k] * B[k,n]
void matmul_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
/// C[m,k] += A[m,n] * B[k,n]^T
void matmul_abt_accumulate(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t n, std::size_t k);
/// C[k,n] += A[m,k]^T * B[m,n]
void matmul_atb_accumulate(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t k, std::size_t n);

}  // namespace boed::ad
