#include "rdcnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rdcnet/errors.hpp"

namespace rdc {

Tensor ParamGroup::add(const std::string& name, Tensor value) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  Entry e{name, value, Tensor::zeros(value.shape(), value.dtype()), Tensor::zeros(value.shape(), value.dtype())};
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

Tensor& ParamGroup::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw UsageError("unknown parameter '" + name + "'");
}

const Tensor& ParamGroup::at(const std::string& name) const {
  return const_cast<ParamGroup*>(this)->at(name);
}

bool ParamGroup::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::int64_t ParamGroup::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParamGroup::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void adam_step(ParamGroup& params, double lr, double beta1, double beta2, double eps) {
  for (const auto& e : params.entries_) {
    if (!e.value.has_grad()) throw UsageError("adam_step: parameter '" + e.name + "' has no gradient");
  }
  const std::int64_t t = ++params.step_;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& e : params.entries_) {
    Tensor grad = e.value.grad();
    dispatch(e.value.dtype(), [&]<class T>(T) {
      auto w = e.value.mutable_data<T>();
      auto m = e.first_moment.mutable_data<T>();
      auto v = e.second_moment.mutable_data<T>();
      auto g = grad.data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr * (mi / correction1) / (std::sqrt(vi / correction2) + eps);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    });
    e.value.zero_grad();
  }
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr_max, double lr_min) {
  if (total <= 0) throw UsageError("cosine_lr: total must be positive");
  if (step < 0 || step > total) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace rdc
