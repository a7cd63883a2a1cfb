#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcd {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Element accessors take up to four indices and do not bounds-check in
/// release builds; use `check_shape` at API boundaries instead.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<double> values);
  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& operator()(std::size_t i) noexcept { return data_[i]; }
  double operator()(std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[offset(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[offset(i, j)]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[offset(i, j, k)];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[offset(i, j, k)];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) noexcept {
    return data_[offset(i, j, k, l)];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const noexcept {
    return data_[offset(i, j, k, l)];
  }

  void fill(double value);
  /// Elementwise `*this += scale * other`; shapes must match.
  void add_scaled(const Tensor& other, double scale = 1.0);
  void scale(double factor);

  double sum() const;
  double abs_sum() const;
  bool all_finite() const;

  /// Exact elementwise equality (same shape, same values).
  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::size_t i, std::size_t j) const noexcept {
    assert(shape_.size() == 2);
    return i * shape_[1] + j;
  }
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    assert(shape_.size() == 3);
    return (i * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const noexcept {
    assert(shape_.size() == 4);
    return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);

/// Throws DimensionError naming `what` unless `t` has exactly `expected`.
void check_shape(const Tensor& t, const Shape& expected, const char* what);

/// Largest elementwise |a - b|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// True when shapes match and every element has the same bit pattern.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace tcd
