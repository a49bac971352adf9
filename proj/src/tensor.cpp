#include "transukan/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "transukan/error.hpp"

namespace tukan {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(data.begin(), data.end());
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

bool Tensor::equal(const Tensor& other) const {
  // Bitwise, so -0.0 vs 0.0 and NaN payloads count as differences.
  return shape() == other.shape() &&
         std::memcmp(impl_->data.data(), other.impl_->data.data(), impl_->data.size() * sizeof(double)) == 0;
}

}  // namespace tukan
