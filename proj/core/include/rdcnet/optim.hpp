#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdcnet/tensor.hpp"

namespace rdc {

/// Named trainable tensors plus Adam moment buffers.
class ParamGroup {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  /// Registers a parameter (marked requires_grad) with zeroed moments.
  /// Throws UsageError on a duplicate name.
  Tensor add(const std::string& name, Tensor value);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t parameter_count() const;

  /// Allocates (or clears) every gradient buffer.
  void zero_grad();

  /// Number of optimizer steps taken; drives Adam's bias correction.
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }

 private:
  friend void adam_step(ParamGroup&, double, double, double, double);

  std::vector<Entry> entries_;
  std::int64_t step_ = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter, then gradients are
/// zeroed. Throws UsageError if any parameter has no gradient buffer.
void adam_step(ParamGroup& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Cosine annealing from lr_max at step 0 to lr_min at step == total.
double cosine_lr(std::int64_t step, std::int64_t total, double lr_max, double lr_min);

}  // namespace rdc
