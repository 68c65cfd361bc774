#include "geoembed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "geoembed/error.hpp"

namespace geoembed {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    fail(ErrorCode::ShapeMismatch, "tensor shape " + shape_string(shape_) +
                                       " does not hold " +
                                       std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), values_);
}

Tensor Tensor::slice_batch(std::size_t first, std::size_t count) const {
  if (shape_.empty() || first + count > shape_[0]) {
    fail(ErrorCode::ShapeMismatch, "batch slice out of range");
  }
  const std::size_t stride = shape_[0] ? values_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = count;
  std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                        values_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
  return Tensor(std::move(s), std::move(v));
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::ShapeMismatch, "dot of tensors with different sizes");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace geoembed
