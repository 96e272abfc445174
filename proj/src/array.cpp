#include "boed/autodiff/array.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "boed/error.hpp"

namespace boed::ad {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

}  // namespace

Array::Array(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (element_count(shape_) != values_.size()) {
    throw AutodiffError("array shape " + shape_string(shape_) + " does not match " +
                        std::to_string(values_.size()) + " values");
  }
}

std::size_t Array::rows() const {
  if (rank() == 2) return shape_[0];
  return 1;
}

std::size_t Array::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

bool Array::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Array::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Array Array::reshaped(std::vector<std::size_t> shape) const {
  return Array(std::move(shape), values_);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void matmul_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  Map(c, mi, ni).noalias() = ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
}

void matmul_abt_accumulate(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t n, std::size_t k) {
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  Map(c, mi, ki).noalias() += ConstMap(a, mi, ni) * ConstMap(b, ki, ni).transpose();
}

void matmul_atb_accumulate(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t k, std::size_t n) {
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  Map(c, ki, ni).noalias() += ConstMap(a, mi, ki).transpose() * ConstMap(b, mi, ni);
}

}  // namespace boed::ad
