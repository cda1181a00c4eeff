#include "salprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace salprune {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(int index) const {
  if (shape_.empty() || index < 0 || index >= shape_[0]) {
    throw ShapeError("slice index " + std::to_string(index) + " out of range for " +
                     shape_string(shape_));
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  if (inner.empty()) inner.push_back(1);
  const std::size_t n = shape_size(inner);
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(index));
  return Tensor(std::move(inner), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError(what + ": non-finite value encountered");
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list of tensors");
  const Shape& inner = items.front().shape();
  Shape shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const Tensor& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack: expected " + shape_string(inner) + ", got " + shape_string(t.shape()));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace salprune
