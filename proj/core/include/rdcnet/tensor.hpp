#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rdc {

enum class DType { f32, f64 };

/// Process-wide element type for newly created tensors. Training runs in f32;
/// gradient checks flip this to f64.
DType default_dtype();
void set_default_dtype(DType dtype);

class DTypeGuard {
 public:
  explicit DTypeGuard(DType dtype) : saved_(default_dtype()) { set_default_dtype(dtype); }
  ~DTypeGuard() { set_default_dtype(saved_); }
  DTypeGuard(const DTypeGuard&) = delete;
  DTypeGuard& operator=(const DTypeGuard&) = delete;

 private:
  DType saved_;
};

std::size_t dtype_size(DType dtype);

/// Calls f(float{}) or f(double{}) so kernels can be written once as templates.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f(float{});
  return f(double{});
}

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace memory {

/// Bytes held by every engine allocation (tensor storage, gradients, scratch).
struct Stats {
  std::size_t current = 0;
  std::size_t peak = 0;
};

Stats stats();
/// Sets the high-water mark to the current live byte count.
void reset_peak();
void on_allocate(std::size_t bytes);
void on_deallocate(std::size_t bytes);

}  // namespace memory

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    memory::on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory::on_deallocate(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Engine-owned contiguous buffer; all allocations show up in memory::stats().
template <class T>
using Buffer = std::vector<T, TrackedAllocator<T>>;

struct TensorImpl;
class Tensor;

/// Given the op's output and dL/d(output), returns dL/d(input) for each
/// recorded input (an undefined Tensor means "no contribution").
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& output, const Tensor& grad_output)>;

struct Node {
  std::string name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

/// Dense row-major n-dimensional array participating in reverse-mode
/// differentiation. Copies share storage; values are treated as immutable
/// once an op has produced them, except for gradient accumulation and
/// optimizer updates of leaf parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor zeros(const Shape& shape, DType dtype, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  template <class T>
  std::span<const T> data() const;
  /// Raw write access. Only for freshly created outputs and for the optimizer.
  template <class T>
  std::span<T> mutable_data();

  double item() const;
  double at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;

  bool has_grad() const;
  /// Accumulated gradient; all zeros if nothing was ever accumulated.
  Tensor grad() const;
  void zero_grad();
  void clear_grad();
  void accumulate_grad(const Tensor& delta);

  /// Reverse-mode pass from this scalar, accumulating into every reachable
  /// tracked leaf.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const;
  void set_node(std::shared_ptr<Node> node);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;
  friend struct TensorImpl;
};

/// Thread-local switch: when disabled, ops never record graph nodes so
/// intermediate activations are freed as soon as they go out of scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Attaches a backward rule to `output` if grad mode is on and any input
/// requires grad. Returns `output` for chaining.
Tensor record(Tensor output, std::vector<Tensor> inputs, BackwardFn backward, std::string name);

}  // namespace rdc
