#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tukan {

/// 64-byte aligned storage. Vectorized kernels peel unaligned heads, so a
/// fixed base alignment keeps summation order, and results, independent of
/// where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;
using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape write gradients back into parameters held elsewhere. Use
/// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
  static Tensor normal(Shape shape, double mean, double stddev, Rng& rng);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  /// Size of `axis`; negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated zero-filled on first use. Const because the
  /// handle, not the storage, is what constness protects.
  std::span<double> grad_buffer() const;
  void zero_grad();

  Tensor clone() const;
  /// Same data and shape, detached from gradient tracking.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool equal(const Tensor& other) const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace tukan
