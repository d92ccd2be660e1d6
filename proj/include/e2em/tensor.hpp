#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace e2em {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. The shape is fixed at construction;
/// reshaped() returns a copy with a new shape and the same element order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor identity(std::size_t n);
  /// 2-D tensor from nested rows, e.g. matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  /// Rows [begin, end) along the leading axis.
  Tensor rows(std::size_t begin, std::size_t end) const;
  /// Gathers the given indices along the leading axis.
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  std::size_t row_width() const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Maximum absolute element difference; shapes must match.
/// x rounded to the nearest 32-bit float. The volatile store keeps the
/// round trip from being optimised away.
inline double round_to_float(double x) {
  volatile float f = static_cast<float>(x);
  return static_cast<double>(f);
}

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Per-row argmax with lowest-index tie-break.
std::vector<std::size_t> argmax_rows(const Tensor& t);

}  // namespace e2em
