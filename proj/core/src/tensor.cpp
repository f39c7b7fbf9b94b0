#include "rdcnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rdcnet/errors.hpp"

namespace rdc {

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer<float> f32;
  Buffer<double> f64;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
  std::shared_ptr<Node> node;

  template <class T>
  Buffer<T>& buffer() {
    if constexpr (std::is_same_v<T, float>) {
      return f32;
    } else {
      return f64;
    }
  }

  static std::shared_ptr<TensorImpl> make(const Shape& shape, DType dtype) {
    for (auto extent : shape) {
      if (extent <= 0) throw UsageError("tensor extents must be positive, got " + shape_string(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (dtype == DType::f32) {
      impl->f32.assign(n, 0.0f);
    } else {
      impl->f64.assign(n, 0.0);
    }
    return impl;
  }
};

namespace {

std::atomic<DType> g_default_dtype{DType::f32};
thread_local bool t_grad_enabled = true;

std::atomic<std::size_t> g_current_bytes{0};
std::atomic<std::size_t> g_peak_bytes{0};

}  // namespace

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dtype) { g_default_dtype.store(dtype); }

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? sizeof(float) : sizeof(double); }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace memory {

Stats stats() { return {g_current_bytes.load(), g_peak_bytes.load()}; }

void reset_peak() { g_peak_bytes.store(g_current_bytes.load()); }

void on_allocate(std::size_t bytes) {
  const std::size_t now = g_current_bytes.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

void on_deallocate(std::size_t bytes) { g_current_bytes.fetch_sub(bytes); }

}  // namespace memory

// --- Tensor -----------------------------------------------------------------

TensorImpl& Tensor::impl() const {
  if (!impl_) throw UsageError("access to an undefined tensor");
  return *impl_;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return zeros(shape, default_dtype(), requires_grad);
}

Tensor Tensor::zeros(const Shape& shape, DType dtype, bool requires_grad) {
  Tensor t(TensorImpl::make(shape, dtype));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  dispatch(t.dtype(), [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw UsageError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
  Tensor t = zeros(shape, requires_grad);
  dispatch(t.dtype(), [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    std::transform(values.begin(), values.end(), d.begin(), [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({}, value, requires_grad); }

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw UsageError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }
std::int64_t Tensor::numel() const { return shape_numel(shape()); }
DType Tensor::dtype() const { return impl().dtype; }

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl().node == nullptr; }

template <class T>
std::span<const T> Tensor::data() const {
  auto& im = impl();
  if ((std::is_same_v<T, float>) != (im.dtype == DType::f32)) {
    throw UsageError("tensor dtype mismatch on data access");
  }
  const auto& buf = im.buffer<T>();
  return {buf.data(), buf.size()};
}

template <class T>
std::span<T> Tensor::mutable_data() {
  auto& im = impl();
  if ((std::is_same_v<T, float>) != (im.dtype == DType::f32)) {
    throw UsageError("tensor dtype mismatch on data access");
  }
  auto& buf = im.buffer<T>();
  return {buf.data(), buf.size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::at(std::int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) throw UsageError("Tensor::at index out of range");
  return dispatch(dtype(), [&]<class T>(T) { return static_cast<double>(data<T>()[flat_index]); });
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<class T>(T) {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::has_grad() const { return impl().grad != nullptr; }

Tensor Tensor::grad() const {
  auto& im = impl();
  if (!im.grad) return zeros(im.shape, im.dtype);
  return Tensor(im.grad);
}

void Tensor::zero_grad() {
  auto& im = impl();
  if (!im.grad) {
    im.grad = TensorImpl::make(im.shape, im.dtype);
    return;
  }
  std::fill(im.grad->f32.begin(), im.grad->f32.end(), 0.0f);
  std::fill(im.grad->f64.begin(), im.grad->f64.end(), 0.0);
}

void Tensor::clear_grad() { impl().grad.reset(); }

void Tensor::accumulate_grad(const Tensor& delta) {
  auto& im = impl();
  if (delta.shape() != im.shape || delta.dtype() != im.dtype) {
    throw UsageError("gradient shape " + shape_string(delta.shape()) + " does not match tensor " +
                     shape_string(im.shape));
  }
  if (!im.grad) {
    im.grad = TensorImpl::make(im.shape, im.dtype);
  }
  dispatch(im.dtype, [&]<class T>(T) {
    auto& dst = im.grad->buffer<T>();
    auto src = delta.data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Tensor Tensor::detach() const {
  auto copy = std::make_shared<TensorImpl>();
  copy->shape = impl().shape;
  copy->dtype = impl().dtype;
  copy->f32 = impl().f32;
  copy->f64 = impl().f64;
  return Tensor(std::move(copy));
}

Tensor Tensor::clone() const { return detach(); }

const std::shared_ptr<Node>& Tensor::node() const { return impl().node; }
void Tensor::set_node(std::shared_ptr<Node> node) { impl().node = std::move(node); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_string(shape()));
  }
  if (!requires_grad()) return;
  NoGradGuard no_grad;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Tensor> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(*this, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.node();
    if (node && next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (in.defined() && in.requires_grad() && visited.insert(in.impl_.get()).second) {
        stack.emplace_back(in, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  std::unordered_map<const TensorImpl*, Tensor> pending;
  Tensor seed = zeros(shape(), dtype());
  dispatch(dtype(), [&]<class T>(T) { seed.mutable_data<T>()[0] = T(1); });
  pending.emplace(impl_.get(), seed);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    auto found = pending.find(t.impl_.get());
    if (found == pending.end()) continue;
    Tensor g = std::move(found->second);
    pending.erase(found);
    const auto& node = t.node();
    if (!node) {
      const_cast<Tensor&>(t).accumulate_grad(g);
      continue;
    }
    auto grads = node->backward(t, g);
    if (grads.size() != node->inputs.size()) {
      throw UsageError("backward rule of '" + node->name + "' returned wrong number of gradients");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!grads[i].defined() || !in.defined() || !in.requires_grad()) continue;
      auto [slot, inserted] = pending.try_emplace(in.impl_.get(), grads[i]);
      if (!inserted) {
        // Gradients may alias each other (e.g. add() forwards grad_output to
        // both operands), so sums always go to fresh storage.
        const Tensor& acc = slot->second;
        Tensor sum = zeros(acc.shape(), acc.dtype());
        dispatch(acc.dtype(), [&]<class T>(T) {
          auto dst = sum.mutable_data<T>();
          auto a = acc.data<T>();
          auto b = grads[i].data<T>();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = a[k] + b[k];
        });
        slot->second = std::move(sum);
      }
    }
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

Tensor record(Tensor output, std::vector<Tensor> inputs, BackwardFn backward, std::string name) {
  if (!grad_enabled()) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return output;
  output.set_requires_grad(true);
  output.set_node(std::make_shared<Node>(Node{std::move(name), std::move(inputs), std::move(backward)}));
  return output;
}

}  // namespace rdc
