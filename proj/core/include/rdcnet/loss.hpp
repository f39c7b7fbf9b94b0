#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "rdcnet/image.hpp"
#include "rdcnet/model.hpp"
#include "rdcnet/tensor.hpp"

namespace rdc {

/// sigma = margin / sqrt(-2 ln 0.5); margin is the embedding distance at
/// which the instance probability drops to 0.5.
double sigma_from_margin(double margin);
double margin_from_sigma(double sigma);

struct LossConfig {
  /// Pixels.
  double margin = 10.0;
  double semantic_weight = 1.0;
  double instance_weight = 1.0;
  double epsilon = 1e-6;
  bool supervise_all_iterations = false;
  /// Treat centroids as constants during backprop (ablation switch).
  bool centroid_stop_gradient = false;

  double sigma() const { return sigma_from_margin(margin); }
  void validate() const;

  bool operator==(const LossConfig&) const = default;
};

/// One byte per pixel, 0 or 1.
using BinaryMask = std::vector<std::uint8_t>;

/// Mean of `embeddings` [D, H, W] over the listed flat pixel indices -> [D].
Tensor masked_mean(const Tensor& embeddings, std::span<const std::int64_t> pixels);

/// Centroid of every instance (mean embedding under its true mask).
/// `embeddings` is [D, H, W]; undefined pixels never belong to an instance.
std::map<std::uint16_t, Tensor> true_centroids(const Tensor& embeddings, const LabelMap& labels);

/// exp(-|y_u - c|^2 / (2 sigma^2)) per pixel: [D, H, W] x [D] -> [H, W].
Tensor instance_prob(const Tensor& embeddings, const Tensor& centroid, double sigma);

/// 1 - (sum m*p*t + eps) / (sum m*p + sum m*t - sum m*p*t + eps), differentiable in pred.
Tensor soft_jaccard(const Tensor& pred, std::span<const std::uint8_t> target, std::span<const std::uint8_t> mask,
                    double epsilon);

/// Loss of one image: semantic_probs [classes, H, W], embeddings [D, H, W].
Tensor esj_image(const Tensor& semantic_probs, const Tensor& embeddings, const LabelMap& labels,
                 const LossConfig& cfg);

/// Batch loss (mean over images). Uses the final iteration only unless
/// cfg.supervise_all_iterations, in which case iterations are averaged.
Tensor esj_total(std::span<const IterationOutput> iteration_outputs, std::span<const LabelMap> labels,
                 const LossConfig& cfg);

/// Image n of an NCHW tensor as [C, H, W] (differentiable).
Tensor select_image(const Tensor& batch, std::int64_t n);

}  // namespace rdc
