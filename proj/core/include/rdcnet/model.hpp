#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rdcnet/image.hpp"
#include "rdcnet/optim.hpp"
#include "rdcnet/rng.hpp"
#include "rdcnet/tensor.hpp"

namespace rdc {

struct RDCNetConfig {
  int in_channels = 3;
  /// Number of parallel SSDC blocks.
  int groups = 8;
  int group_channels = 64;
  std::vector<int> dilation_rates{1, 2, 4, 8};
  int iterations = 5;
  /// Stem stride s_d; the head upsamples by the same factor.
  int scale = 4;
  int stem_channels = 32;
  int embedding_dim = 2;
  int semantic_classes = 2;
  double dropout_p = 0.1;
  double leaky_slope = 0.01;

  /// Width of the recurrent state Y.
  int state_channels() const { return groups * group_channels; }
  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  bool operator==(const RDCNetConfig&) const = default;
};

/// Parameter names, in build order.
namespace param_names {
inline constexpr const char* kStemWeight = "stem.weight";
inline constexpr const char* kStemBias = "stem.bias";
inline constexpr const char* kMixWeight = "mix.weight";
inline constexpr const char* kMixBias = "mix.bias";
inline constexpr const char* kSsdcWeight = "ssdc.weight";
inline constexpr const char* kSsdcBias = "ssdc.bias";
inline constexpr const char* kProjWeight = "ssdc_proj.weight";
inline constexpr const char* kProjBias = "ssdc_proj.bias";
inline constexpr const char* kHeadWeight = "head.weight";
inline constexpr const char* kHeadBias = "head.bias";
inline constexpr const char* kOutWeight = "out.weight";
inline constexpr const char* kOutBias = "out.bias";
}  // namespace param_names

/// Expected shape of every parameter, in build order. Pure function of the config.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const RDCNetConfig& config);

/// He-initialized weights (fan-in, leaky-slope gain) and zero biases.
ParamGroup build(const RDCNetConfig& config, Rng& rng);

/// Strided stem convolution: [N, in, H, W] -> [N, stem, H/s, W/s]. No pre-activation.
Tensor stem(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config);

/// Stacked dilated convolutions with one shared grouped 3x3 kernel, followed
/// by a grouped point-wise projection back to the state width.
Tensor ssdc(const Tensor& x, const ParamGroup& params, const RDCNetConfig& config);

/// Y^i = f(X, Y^{i-1}) + Y^{i-1}.
Tensor recurrent_step(const Tensor& x_feat, const Tensor& y_prev, const ParamGroup& params,
                      const RDCNetConfig& config, bool training, Rng& rng);

struct HeadOutput {
  Tensor semantic_probs;  // [N, classes, H, W], softmax over classes
  Tensor displacement;    // [N, embedding_dim, H, W]
};

HeadOutput heads(const Tensor& y, const ParamGroup& params, const RDCNetConfig& config);

/// [N, D, H, W] grid whose channel c holds each pixel's own coordinate along
/// axis c (row, then column), in pixels, origin at the top-left pixel centre.
Tensor coordinate_grid(std::int64_t batch, int dims, std::int64_t height, std::int64_t width);

/// Additive semi-convolutional embedding: displacement + coords.
Tensor semi_conv(const Tensor& displacement, const Tensor& coords);

struct IterationOutput {
  Tensor semantic_probs;  // [N, classes, H, W]
  Tensor embeddings;      // [N, D, H, W]
};

/// Visitor receiving each iteration's prediction (0-based index).
using IterationVisitor = std::function<void(int iteration, const IterationOutput& out)>;

/// Runs the stem once and the recurrent block `iterations` times (0 = use
/// config.iterations), calling `visit` with the head output of every
/// iteration. Only one state tensor is alive at a time.
void forward_each(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config, bool training,
                  Rng& rng, const IterationVisitor& visit, int iterations = 0);

/// Every iteration's prediction, in order.
std::vector<IterationOutput> forward(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config,
                                     bool training, Rng& rng, int iterations = 0);

/// Only the last iteration's prediction; heads are evaluated once.
IterationOutput forward_final(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config,
                              bool training, Rng& rng, int iterations = 0);

/// Packs images [C, H, W] into an NCHW tensor of the default dtype.
Tensor to_batch(const std::vector<const FloatImage*>& images);

}  // namespace rdc
