#pragma once

#include <array>
#include <span>

#include "rdcnet/rng.hpp"
#include "rdcnet/tensor.hpp"

namespace rdc {

/// (row, col) integer pair used for stride, padding and dilation.
using Int2 = std::array<int, 2>;

struct Conv2dOptions {
  Int2 stride{1, 1};
  Int2 padding{0, 0};
  Int2 dilation{1, 1};
  int groups = 1;
};

struct ConvTranspose2dOptions {
  Int2 stride{1, 1};
  Int2 padding{0, 0};
};

/// Grouped, dilated, strided 2-D convolution (cross-correlation) over NCHW input.
///   x: [N, Cin, H, W], w: [Cout, Cin/groups, kh, kw], b: [Cout] or undefined.
/// Output extent per axis: floor((H + 2*pad - ((k-1)*dil + 1)) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt = {});

/// Linear adjoint of conv2d with the same stride and padding.
///   x: [N, Cin, H, W], w: [Cin, Cout, kh, kw], b: [Cout] or undefined.
/// Output extent per axis: (H-1)*stride - 2*pad + k.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b,
                        const ConvTranspose2dOptions& opt = {});

/// Output spatial extent of conv2d along one axis; throws ConfigError when empty.
std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad, int dilation,
                                const char* axis_name);

Tensor leaky_relu(const Tensor& x, double slope);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Zeroes whole (sample, channel) planes with probability p and rescales the
/// survivors by 1/(1-p). Identity when !training or p == 0.
Tensor spatial_dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Sum of all elements as a scalar tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, int axis);

/// Concatenates NCHW tensors along channels so that the channel block of
/// group g from every part lands contiguously:
///   [p0.g0, p1.g0, ..., p0.g1, p1.g1, ...].
/// This is the layout a grouped convolution over the result expects.
Tensor interleave_groups(std::span<const Tensor> parts, int groups);

/// Sub-range [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

Tensor reshape(const Tensor& x, const Shape& shape);

}  // namespace rdc
