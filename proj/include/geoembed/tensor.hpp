#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace geoembed {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Spatial tensors are laid out
/// [batch, height, width, channels] (channel-last); flat tensors are
/// [batch, features].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 4-d accessors for [n, h, w, c] tensors.
  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }
  double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return values_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }
  double at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return values_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }

  /// Same values, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  /// Copy of the sample range [first, first + count) along axis 0.
  Tensor slice_batch(std::size_t first, std::size_t count) const;

  bool all_finite() const;
  void fill(double value);

 private:
  Shape shape_;
  std::vector<double> values_;
};

double dot(const Tensor& a, const Tensor& b);

}  // namespace geoembed
