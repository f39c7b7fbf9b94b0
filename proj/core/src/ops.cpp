#include "rdcnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "rdcnet/errors.hpp"

namespace rdc {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

/// Geometry of one convolution: input image [C, H, W] -> columns [C*kh*kw, Ho*Wo].
struct ConvGeometry {
  std::int64_t channels, height, width;
  int kh, kw;
  Int2 stride, pad, dil;
  std::int64_t out_h, out_w;

  bool pointwise() const {
    return kh == 1 && kw == 1 && stride[0] == 1 && stride[1] == 1 && pad[0] == 0 && pad[1] == 0;
  }
  std::int64_t col_rows() const { return channels * kh * kw; }
  std::int64_t col_cols() const { return out_h * out_w; }
};

/// Range of output columns [lo, hi) whose input column ow*stride - pad + offset
/// falls inside [0, extent).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t out_extent, int stride, std::int64_t shift,
                                                  std::int64_t extent) {
  // input = o*stride + shift, need 0 <= input < extent
  std::int64_t lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  std::int64_t hi = extent - shift <= 0 ? 0 : (extent - shift + stride - 1) / stride;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

template <class T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        const std::int64_t shift_w = static_cast<std::int64_t>(j) * g.dil[1] - g.pad[1];
        const auto [wlo, whi] = valid_range(g.out_w, g.stride[1], shift_w, g.width);
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          T* out = row + oh * g.out_w;
          const std::int64_t ih = oh * g.stride[0] - g.pad[0] + static_cast<std::int64_t>(i) * g.dil[0];
          if (ih < 0 || ih >= g.height) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = plane + ih * g.width;
          std::fill(out, out + wlo, T(0));
          if (g.stride[1] == 1) {
            std::memcpy(out + wlo, src + wlo + shift_w, static_cast<std::size_t>(whi - wlo) * sizeof(T));
          } else {
            for (std::int64_t ow = wlo; ow < whi; ++ow) out[ow] = src[ow * g.stride[1] + shift_w];
          }
          std::fill(out + whi, out + g.out_w, T(0));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds columns back into an image.
template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        const std::int64_t shift_w = static_cast<std::int64_t>(j) * g.dil[1] - g.pad[1];
        const auto [wlo, whi] = valid_range(g.out_w, g.stride[1], shift_w, g.width);
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride[0] - g.pad[0] + static_cast<std::int64_t>(i) * g.dil[0];
          if (ih < 0 || ih >= g.height) continue;
          const T* in = row + oh * g.out_w;
          T* dst = plane + ih * g.width;
          for (std::int64_t ow = wlo; ow < whi; ++ow) dst[ow * g.stride[1] + shift_w] += in[ow];
        }
      }
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) throw UsageError(std::string(op) + ": dtype mismatch");
}

/// Scratch buffer owned by the engine so it shows up in memory accounting.
template <class T>
Buffer<T> scratch(std::int64_t n) {
  return Buffer<T>(static_cast<std::size_t>(n));
}

// Shared implementation of the three conv2d products, parameterized by geometry.
struct ConvPlan {
  std::int64_t batch, cin, cout;
  int groups;
  ConvGeometry geo;

  std::int64_t cin_g() const { return cin / groups; }
  std::int64_t cout_g() const { return cout / groups; }
  std::int64_t k_g() const { return cin_g() * geo.kh * geo.kw; }
  std::int64_t in_plane() const { return geo.height * geo.width; }
  std::int64_t out_plane() const { return geo.out_h * geo.out_w; }
};

template <class T>
void conv_forward(const ConvPlan& p, const T* x, const T* w, const T* b, T* y) {
  Buffer<T> col;
  if (!p.geo.pointwise()) col = scratch<T>(p.geo.col_rows() * p.geo.col_cols());
  const std::int64_t hw = p.out_plane();
  for (std::int64_t n = 0; n < p.batch; ++n) {
    const T* xn = x + n * p.cin * p.in_plane();
    const T* cols = xn;
    if (!p.geo.pointwise()) {
      im2col(xn, p.geo, col.data());
      cols = col.data();
    }
    for (int g = 0; g < p.groups; ++g) {
      MapConstMat<T> wg(w + g * p.cout_g() * p.k_g(), p.cout_g(), p.k_g());
      MapConstMat<T> cg(cols + g * p.k_g() * hw, p.k_g(), hw);
      MapMat<T> yg(y + (n * p.cout + g * p.cout_g()) * hw, p.cout_g(), hw);
      yg.noalias() = wg * cg;
    }
    if (b) {
      for (std::int64_t c = 0; c < p.cout; ++c) {
        T* plane = y + (n * p.cout + c) * hw;
        const T bias = b[c];
        for (std::int64_t k = 0; k < hw; ++k) plane[k] += bias;
      }
    }
  }
}

/// dx += W^T * dy (per group), folded back through col2im.
template <class T>
void conv_backward_input(const ConvPlan& p, const T* dy, const T* w, T* dx) {
  Buffer<T> col;
  if (!p.geo.pointwise()) col = scratch<T>(p.geo.col_rows() * p.geo.col_cols());
  const std::int64_t hw = p.out_plane();
  for (std::int64_t n = 0; n < p.batch; ++n) {
    T* dxn = dx + n * p.cin * p.in_plane();
    T* cols = p.geo.pointwise() ? dxn : col.data();
    for (int g = 0; g < p.groups; ++g) {
      MapConstMat<T> wg(w + g * p.cout_g() * p.k_g(), p.cout_g(), p.k_g());
      MapConstMat<T> dyg(dy + (n * p.cout + g * p.cout_g()) * hw, p.cout_g(), hw);
      MapMat<T> cg(cols + g * p.k_g() * hw, p.k_g(), hw);
      if (p.geo.pointwise()) {
        cg.noalias() += wg.transpose() * dyg;
      } else {
        cg.noalias() = wg.transpose() * dyg;
      }
    }
    if (!p.geo.pointwise()) col2im_add(col.data(), p.geo, dxn);
  }
}

/// dW += dy * cols(x)^T (per group).
template <class T>
void conv_backward_weight(const ConvPlan& p, const T* x, const T* dy, T* dw) {
  Buffer<T> col;
  if (!p.geo.pointwise()) col = scratch<T>(p.geo.col_rows() * p.geo.col_cols());
  const std::int64_t hw = p.out_plane();
  for (std::int64_t n = 0; n < p.batch; ++n) {
    const T* xn = x + n * p.cin * p.in_plane();
    const T* cols = xn;
    if (!p.geo.pointwise()) {
      im2col(xn, p.geo, col.data());
      cols = col.data();
    }
    for (int g = 0; g < p.groups; ++g) {
      MapMat<T> dwg(dw + g * p.cout_g() * p.k_g(), p.cout_g(), p.k_g());
      MapConstMat<T> dyg(dy + (n * p.cout + g * p.cout_g()) * hw, p.cout_g(), hw);
      MapConstMat<T> cg(cols + g * p.k_g() * hw, p.k_g(), hw);
      dwg.noalias() += dyg * cg.transpose();
    }
  }
}

template <class T>
void bias_backward(std::int64_t batch, std::int64_t channels, std::int64_t plane, const T* dy, T* db) {
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* src = dy + (n * channels + c) * plane;
      T acc = 0;
      for (std::int64_t k = 0; k < plane; ++k) acc += src[k];
      db[c] += acc;
    }
  }
}

void check_conv_operands(const Tensor& x, const Tensor& w, const Tensor& b, const char* op) {
  if (x.ndim() != 4) throw ConfigError(std::string(op) + ": input must be NCHW, got " + shape_string(x.shape()));
  if (w.ndim() != 4) throw ConfigError(std::string(op) + ": weight must be 4-D, got " + shape_string(w.shape()));
  require_same_dtype(x, w, op);
  if (b.defined()) {
    require_same_dtype(x, b, op);
    if (b.ndim() != 1) throw ConfigError(std::string(op) + ": bias must be 1-D");
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad, int dilation,
                                const char* axis_name) {
  require(stride >= 1, std::string("conv: stride along ") + axis_name + " must be positive");
  require(dilation >= 1, std::string("conv: dilation along ") + axis_name + " must be positive");
  require(pad >= 0, std::string("conv: padding along ") + axis_name + " must be non-negative");
  const std::int64_t effective = static_cast<std::int64_t>(kernel - 1) * dilation + 1;
  const std::int64_t padded = in + 2 * static_cast<std::int64_t>(pad);
  if (padded < effective) {
    throw ConfigError(std::string("conv: padded ") + axis_name + " extent " + std::to_string(padded) +
                      " is smaller than effective kernel extent " + std::to_string(effective));
  }
  return (padded - effective) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
  check_conv_operands(x, w, b, "conv2d");
  require(opt.groups >= 1, "conv2d: groups must be positive");
  const auto cin = x.dim(1);
  const auto cout = w.dim(0);
  if (cin % opt.groups != 0) {
    throw ConfigError("conv2d: input channels " + std::to_string(cin) + " not divisible by groups " +
                      std::to_string(opt.groups));
  }
  if (cout % opt.groups != 0) {
    throw ConfigError("conv2d: output channels " + std::to_string(cout) + " not divisible by groups " +
                      std::to_string(opt.groups));
  }
  if (w.dim(1) != cin / opt.groups) {
    throw ConfigError("conv2d: weight in-channel dimension is " + std::to_string(w.dim(1)) + ", expected " +
                      std::to_string(cin / opt.groups));
  }
  if (b.defined() && b.dim(0) != cout) {
    throw ConfigError("conv2d: bias length " + std::to_string(b.dim(0)) + " != output channels " +
                      std::to_string(cout));
  }
  const int kh = static_cast<int>(w.dim(2));
  const int kw = static_cast<int>(w.dim(3));
  ConvPlan plan{x.dim(0), cin, cout, opt.groups,
                ConvGeometry{cin, x.dim(2), x.dim(3), kh, kw, opt.stride, opt.padding, opt.dilation,
                             conv_output_extent(x.dim(2), kh, opt.stride[0], opt.padding[0], opt.dilation[0], "H"),
                             conv_output_extent(x.dim(3), kw, opt.stride[1], opt.padding[1], opt.dilation[1], "W")}};

  Tensor y = Tensor::zeros({plan.batch, cout, plan.geo.out_h, plan.geo.out_w}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    conv_forward<T>(plan, x.data<T>().data(), w.data<T>().data(), b.defined() ? b.data<T>().data() : nullptr,
                    y.mutable_data<T>().data());
  });

  return record(
      y, {x, w, b},
      [x, w, b, plan](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx, gw, gb;
        dispatch(gy.dtype(), [&]<class T>(T) {
          if (x.requires_grad()) {
            gx = Tensor::zeros(x.shape(), x.dtype());
            conv_backward_input<T>(plan, gy.data<T>().data(), w.data<T>().data(), gx.mutable_data<T>().data());
          }
          if (w.requires_grad()) {
            gw = Tensor::zeros(w.shape(), w.dtype());
            conv_backward_weight<T>(plan, x.data<T>().data(), gy.data<T>().data(), gw.mutable_data<T>().data());
          }
          if (b.defined() && b.requires_grad()) {
            gb = Tensor::zeros(b.shape(), b.dtype());
            bias_backward<T>(plan.batch, plan.cout, plan.out_plane(), gy.data<T>().data(),
                             gb.mutable_data<T>().data());
          }
        });
        return {gx, gw, gb};
      },
      "conv2d");
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, const ConvTranspose2dOptions& opt) {
  check_conv_operands(x, w, b, "conv2d_transpose");
  const auto cin = x.dim(1);
  if (w.dim(0) != cin) {
    throw ConfigError("conv2d_transpose: weight in-channel dimension is " + std::to_string(w.dim(0)) +
                      ", expected " + std::to_string(cin));
  }
  const auto cout = w.dim(1);
  if (b.defined() && b.dim(0) != cout) {
    throw ConfigError("conv2d_transpose: bias length " + std::to_string(b.dim(0)) + " != output channels " +
                      std::to_string(cout));
  }
  const int kh = static_cast<int>(w.dim(2));
  const int kw = static_cast<int>(w.dim(3));
  require(opt.stride[0] >= 1 && opt.stride[1] >= 1, "conv2d_transpose: stride must be positive");
  require(opt.padding[0] >= 0 && opt.padding[1] >= 0, "conv2d_transpose: padding must be non-negative");
  const std::int64_t out_h = (x.dim(2) - 1) * opt.stride[0] - 2 * opt.padding[0] + kh;
  const std::int64_t out_w = (x.dim(3) - 1) * opt.stride[1] - 2 * opt.padding[1] + kw;
  if (out_h <= 0) throw ConfigError("conv2d_transpose: output H extent is not positive");
  if (out_w <= 0) throw ConfigError("conv2d_transpose: output W extent is not positive");

  // The adjoint conv maps y [cout, out_h, out_w] -> x [cin, H, W].
  const ConvGeometry geo{cout, out_h, out_w, kh, kw, opt.stride, opt.padding, Int2{1, 1}, x.dim(2), x.dim(3)};
  const std::int64_t batch = x.dim(0);
  const std::int64_t k = geo.col_rows();
  const std::int64_t hw = geo.col_cols();

  Tensor y = Tensor::zeros({batch, cout, out_h, out_w}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto col = scratch<T>(k * hw);
    const T* xp = x.data<T>().data();
    T* yp = y.mutable_data<T>().data();
    MapConstMat<T> wm(w.data<T>().data(), cin, k);
    for (std::int64_t n = 0; n < batch; ++n) {
      MapConstMat<T> xn(xp + n * cin * hw, cin, hw);
      MapMat<T> cm(col.data(), k, hw);
      cm.noalias() = wm.transpose() * xn;
      col2im_add(col.data(), geo, yp + n * cout * out_h * out_w);
    }
    if (b.defined()) {
      const T* bp = b.data<T>().data();
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < cout; ++c) {
          T* plane = yp + (n * cout + c) * out_h * out_w;
          for (std::int64_t i = 0; i < out_h * out_w; ++i) plane[i] += bp[c];
        }
      }
    }
  });

  return record(
      y, {x, w, b},
      [x, w, b, geo, batch, cin, cout](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx, gw, gb;
        const std::int64_t k = geo.col_rows();
        const std::int64_t hw = geo.col_cols();
        const std::int64_t out_plane = geo.height * geo.width;
        dispatch(gy.dtype(), [&]<class T>(T) {
          auto col = scratch<T>(k * hw);
          const T* gyp = gy.data<T>().data();
          MapConstMat<T> wm(w.data<T>().data(), cin, k);
          if (x.requires_grad()) gx = Tensor::zeros(x.shape(), x.dtype());
          if (w.requires_grad()) gw = Tensor::zeros(w.shape(), w.dtype());
          for (std::int64_t n = 0; n < batch; ++n) {
            im2col(gyp + n * cout * out_plane, geo, col.data());
            MapConstMat<T> cm(col.data(), k, hw);
            if (gx.defined()) {
              MapMat<T> gxn(gx.mutable_data<T>().data() + n * cin * hw, cin, hw);
              gxn.noalias() = wm * cm;
            }
            if (gw.defined()) {
              MapConstMat<T> xn(x.data<T>().data() + n * cin * hw, cin, hw);
              MapMat<T> gwm(gw.mutable_data<T>().data(), cin, k);
              gwm.noalias() += xn * cm.transpose();
            }
          }
          if (b.defined() && b.requires_grad()) {
            gb = Tensor::zeros(b.shape(), b.dtype());
            bias_backward<T>(batch, cout, out_plane, gyp, gb.mutable_data<T>().data());
          }
        });
        return {gx, gw, gb};
      },
      "conv2d_transpose");
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu: slope must lie in (0, 1)");
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    auto dst = y.mutable_data<T>();
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : s * src[i];
  });
  return record(
      y, {x},
      [x, slope](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx = Tensor::zeros(x.shape(), x.dtype());
        dispatch(x.dtype(), [&]<class T>(T) {
          auto src = x.data<T>();
          auto g = gy.data<T>();
          auto dst = gx.mutable_data<T>();
          const T s = static_cast<T>(slope);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? g[i] : s * g[i];
        });
        return {gx};
      },
      "leaky_relu");
}

namespace {

struct AxisSplit {
  std::int64_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  const int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw UsageError("axis out of range for shape " + shape_string(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    auto dst = y.mutable_data<T>();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.extent * s.inner + i;
        T m = -std::numeric_limits<T>::infinity();
        for (std::int64_t a = 0; a < s.extent; ++a) m = std::max(m, src[base + a * s.inner]);
        T total = 0;
        for (std::int64_t a = 0; a < s.extent; ++a) {
          const T e = std::exp(src[base + a * s.inner] - m);
          dst[base + a * s.inner] = e;
          total += e;
        }
        for (std::int64_t a = 0; a < s.extent; ++a) dst[base + a * s.inner] /= total;
      }
    }
  });
  return record(
      y, {x},
      [s](const Tensor& out, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx = Tensor::zeros(out.shape(), out.dtype());
        dispatch(out.dtype(), [&]<class T>(T) {
          auto p = out.data<T>();
          auto g = gy.data<T>();
          auto dst = gx.mutable_data<T>();
          for (std::int64_t o = 0; o < s.outer; ++o) {
            for (std::int64_t i = 0; i < s.inner; ++i) {
              const std::int64_t base = o * s.extent * s.inner + i;
              T dot = 0;
              for (std::int64_t a = 0; a < s.extent; ++a) dot += p[base + a * s.inner] * g[base + a * s.inner];
              for (std::int64_t a = 0; a < s.extent; ++a) {
                const auto idx = base + a * s.inner;
                dst[idx] = p[idx] * (g[idx] - dot);
              }
            }
          }
        });
        return {gx};
      },
      "softmax");
}

Tensor spatial_dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("spatial_dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  if (x.ndim() < 2) throw UsageError("spatial_dropout: expects at least [N, C, ...]");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t plane = x.numel() / planes;
  std::vector<double> keep(static_cast<std::size_t>(planes));
  const double survivor_scale = 1.0 / (1.0 - p);
  for (auto& k : keep) k = rng.bernoulli(p) ? 0.0 : survivor_scale;

  auto apply = [plane](const Tensor& src, const std::vector<double>& factors) {
    Tensor out = Tensor::zeros(src.shape(), src.dtype());
    dispatch(src.dtype(), [&]<class T>(T) {
      auto in = src.data<T>();
      auto dst = out.mutable_data<T>();
      for (std::size_t q = 0; q < factors.size(); ++q) {
        const T f = static_cast<T>(factors[q]);
        const auto off = static_cast<std::int64_t>(q) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[off + i] = in[off + i] * f;
      }
    });
    return out;
  };

  Tensor y = apply(x, keep);
  return record(
      y, {x},
      [keep, apply](const Tensor&, const Tensor& gy) -> std::vector<Tensor> { return {apply(gy, keep)}; },
      "spatial_dropout");
}

namespace {

template <class Fn>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, Fn fn) {
  if (a.shape() != b.shape()) {
    throw UsageError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  require_same_dtype(a, b, "elementwise");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>(T) {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto out = y.mutable_data<T>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
  });
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y = elementwise_binary(a, b, [](auto u, auto v) { return u + v; });
  return record(
      y, {a, b}, [](const Tensor&, const Tensor& gy) -> std::vector<Tensor> { return {gy, gy}; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor y = elementwise_binary(a, b, [](auto u, auto v) { return u - v; });
  return record(
      y, {a, b},
      [](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        NoGradGuard guard;
        return {gy, scale(gy, -1.0)};
      },
      "sub");
}

Tensor scale(const Tensor& x, double factor) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    auto dst = y.mutable_data<T>();
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * f;
  });
  return record(
      y, {x},
      [factor](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        NoGradGuard guard;
        return {scale(gy, factor)};
      },
      "scale");
}

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    double acc = 0.0;
    for (T v : x.data<T>()) acc += static_cast<double>(v);
    y.mutable_data<T>()[0] = static_cast<T>(acc);
  });
  return record(
      y, {x},
      [x](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx = Tensor::zeros(x.shape(), x.dtype());
        dispatch(x.dtype(), [&]<class T>(T) {
          auto d = gx.mutable_data<T>();
          std::fill(d.begin(), d.end(), gy.data<T>()[0]);
        });
        return {gx};
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Tensor& first = parts.front();
  const int nd = first.ndim();
  if (axis < 0) axis += nd;
  Shape out_shape = first.shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.ndim() != nd) throw UsageError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) {
        throw UsageError("concat: extent mismatch along axis " + std::to_string(d));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor y = Tensor::zeros(out_shape, first.dtype());
  std::vector<std::int64_t> offsets;
  dispatch(first.dtype(), [&]<class T>(T) {
    auto dst = y.mutable_data<T>();
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      offsets.push_back(offset);
      const std::int64_t block = p.dim(axis) * os.inner;
      auto src = p.data<T>();
      for (std::int64_t o = 0; o < os.outer; ++o) {
        std::copy_n(src.begin() + o * block, block, dst.begin() + o * os.extent * os.inner + offset * os.inner);
      }
      offset += p.dim(axis);
    }
  });
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record(
      y, inputs,
      [inputs, offsets, axis](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        NoGradGuard guard;
        std::vector<Tensor> grads;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          grads.push_back(inputs[i].requires_grad() ? narrow(gy, axis, offsets[i], inputs[i].dim(axis)) : Tensor{});
        }
        return grads;
      },
      "concat");
}

Tensor interleave_groups(std::span<const Tensor> parts, int groups) {
  if (parts.empty()) throw UsageError("interleave_groups: no inputs");
  const Tensor& first = parts.front();
  if (first.ndim() != 4) throw UsageError("interleave_groups: expects NCHW");
  const std::int64_t channels = first.dim(1);
  if (groups < 1 || channels % groups != 0) throw UsageError("interleave_groups: channels not divisible by groups");
  for (const auto& p : parts) {
    if (p.shape() != first.shape()) throw UsageError("interleave_groups: all parts must share a shape");
    require_same_dtype(first, p, "interleave_groups");
  }
  const std::int64_t n_parts = static_cast<std::int64_t>(parts.size());
  const std::int64_t batch = first.dim(0);
  const std::int64_t cg = channels / groups;
  const std::int64_t plane = first.dim(2) * first.dim(3);
  const std::int64_t out_c = channels * n_parts;
  // Output channel index for (part, channel) of an input.
  auto out_channel = [=](std::int64_t part, std::int64_t c) {
    const std::int64_t g = c / cg;
    return g * (n_parts * cg) + part * cg + (c % cg);
  };

  Tensor y = Tensor::zeros({batch, out_c, first.dim(2), first.dim(3)}, first.dtype());
  dispatch(first.dtype(), [&]<class T>(T) {
    auto dst = y.mutable_data<T>();
    for (std::int64_t p = 0; p < n_parts; ++p) {
      auto src = parts[static_cast<std::size_t>(p)].data<T>();
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < channels; ++c) {
          std::copy_n(src.begin() + (n * channels + c) * plane, plane,
                      dst.begin() + (n * out_c + out_channel(p, c)) * plane);
        }
      }
    }
  });
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record(
      y, inputs,
      [inputs, out_channel, batch, channels, plane, out_c](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        std::vector<Tensor> grads;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          if (!inputs[p].requires_grad()) {
            grads.emplace_back();
            continue;
          }
          Tensor g = Tensor::zeros(inputs[p].shape(), inputs[p].dtype());
          dispatch(gy.dtype(), [&]<class T>(T) {
            auto src = gy.data<T>();
            auto dst = g.mutable_data<T>();
            for (std::int64_t n = 0; n < batch; ++n) {
              for (std::int64_t c = 0; c < channels; ++c) {
                std::copy_n(src.begin() + (n * out_c + out_channel(static_cast<std::int64_t>(p), c)) * plane, plane,
                            dst.begin() + (n * channels + c) * plane);
              }
            }
          });
          grads.push_back(g);
        }
        return grads;
      },
      "interleave_groups");
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int nd = x.ndim();
  if (axis < 0) axis += nd;
  const std::int64_t extent = x.dim(axis);
  if (start < 0 || length <= 0 || start + length > extent) {
    throw UsageError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside extent " + std::to_string(extent));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor y = Tensor::zeros(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    auto dst = y.mutable_data<T>();
    const std::int64_t block = length * s.inner;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + o * s.extent * s.inner + start * s.inner, block, dst.begin() + o * block);
    }
  });
  return record(
      y, {x},
      [x, s, start, length](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        Tensor gx = Tensor::zeros(x.shape(), x.dtype());
        dispatch(x.dtype(), [&]<class T>(T) {
          auto src = gy.data<T>();
          auto dst = gx.mutable_data<T>();
          const std::int64_t block = length * s.inner;
          for (std::int64_t o = 0; o < s.outer; ++o) {
            std::copy_n(src.begin() + o * block, block, dst.begin() + o * s.extent * s.inner + start * s.inner);
          }
        });
        return {gx};
      },
      "narrow");
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw UsageError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor y = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    std::copy(src.begin(), src.end(), y.mutable_data<T>().begin());
  });
  const Shape in_shape = x.shape();
  return record(
      y, {x},
      [in_shape](const Tensor&, const Tensor& gy) -> std::vector<Tensor> {
        NoGradGuard guard;
        return {reshape(gy, in_shape)};
      },
      "reshape");
}

}  // namespace rdc
