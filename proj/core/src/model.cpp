#include "rdcnet/model.hpp"

#include <algorithm>
#include <cmath>

#include "rdcnet/errors.hpp"
#include "rdcnet/ops.hpp"

namespace rdc {
namespace pn = param_names;

void RDCNetConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (in_channels < 1) fail("in_channels", "must be >= 1");
  if (groups < 1) fail("groups", "must be >= 1");
  if (group_channels < 1) fail("group_channels", "must be >= 1");
  if (dilation_rates.empty()) fail("dilation_rates", "must not be empty");
  if (dilation_rates.front() < 1) fail("dilation_rates", "first rate must be >= 1");
  for (std::size_t i = 1; i < dilation_rates.size(); ++i) {
    if (dilation_rates[i] <= dilation_rates[i - 1]) fail("dilation_rates", "must be strictly increasing");
  }
  if (iterations < 1) fail("iterations", "must be >= 1");
  if (scale < 1) fail("scale", "must be >= 1");
  if (stem_channels < 1) fail("stem_channels", "must be >= 1");
  if (embedding_dim != 2) fail("embedding_dim", "only 2-D embeddings are supported");
  if (semantic_classes != 2) fail("semantic_classes", "only foreground/background is supported");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p", "must lie in [0, 1)");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) fail("leaky_slope", "must lie in (0, 1)");
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const RDCNetConfig& c) {
  const std::int64_t state = c.state_channels();
  const std::int64_t rates = static_cast<std::int64_t>(c.dilation_rates.size());
  const std::int64_t s = c.scale;
  return {
      {pn::kStemWeight, {c.stem_channels, c.in_channels, s, s}},
      {pn::kStemBias, {c.stem_channels}},
      {pn::kMixWeight, {state, c.stem_channels + state, 1, 1}},
      {pn::kMixBias, {state}},
      {pn::kSsdcWeight, {state, c.group_channels, 3, 3}},
      {pn::kSsdcBias, {state}},
      {pn::kProjWeight, {state, rates * c.group_channels, 1, 1}},
      {pn::kProjBias, {state}},
      {pn::kHeadWeight, {state, c.stem_channels, 2 * s, 2 * s}},
      {pn::kHeadBias, {c.stem_channels}},
      {pn::kOutWeight, {c.semantic_classes + c.embedding_dim, c.stem_channels, 1, 1}},
      {pn::kOutBias, {c.semantic_classes + c.embedding_dim}},
  };
}

ParamGroup build(const RDCNetConfig& config, Rng& rng) {
  config.validate();
  const double gain = std::sqrt(2.0 / (1.0 + config.leaky_slope * config.leaky_slope));
  ParamGroup params;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t = Tensor::zeros(shape);
    if (shape.size() == 4) {
      double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      if (name == pn::kHeadWeight) {
        // Transposed conv: each output pixel sees in_channels * (k / stride)^2 taps.
        fan_in = static_cast<double>(shape[0]) * 4.0;
      }
      const double stddev = gain / std::sqrt(fan_in);
      dispatch(t.dtype(), [&]<class T>(T) {
        for (auto& v : t.mutable_data<T>()) v = static_cast<T>(rng.normal(0.0, stddev));
      });
    }
    params.add(name, t);
  }
  return params;
}

namespace {

void require_nchw(const Tensor& t, std::int64_t channels, const char* what) {
  if (t.ndim() != 4) throw UsageError(std::string(what) + ": expected NCHW tensor, got " + shape_string(t.shape()));
  if (t.dim(1) != channels) {
    throw UsageError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(t.dim(1)));
  }
}

}  // namespace

Tensor stem(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config) {
  require_nchw(image, config.in_channels, "stem");
  for (int axis : {2, 3}) {
    if (image.dim(axis) % config.scale != 0) {
      throw UsageError(std::string("image ") + (axis == 2 ? "height " : "width ") + std::to_string(image.dim(axis)) +
                       " is not divisible by scale " + std::to_string(config.scale) +
                       "; pad the image to a multiple of the scale");
    }
  }
  Conv2dOptions opt;
  opt.stride = {config.scale, config.scale};
  return conv2d(image, params.at(pn::kStemWeight), params.at(pn::kStemBias), opt);
}

Tensor ssdc(const Tensor& x, const ParamGroup& params, const RDCNetConfig& config) {
  require_nchw(x, config.state_channels(), "ssdc");
  const Tensor act = leaky_relu(x, config.leaky_slope);
  const Tensor& w = params.at(pn::kSsdcWeight);
  const Tensor& b = params.at(pn::kSsdcBias);
  std::vector<Tensor> stacked;
  stacked.reserve(config.dilation_rates.size());
  for (int d : config.dilation_rates) {
    Conv2dOptions opt;
    opt.groups = config.groups;
    opt.dilation = {d, d};
    opt.padding = {d, d};
    stacked.push_back(conv2d(act, w, b, opt));
  }
  const Tensor merged = stacked.size() == 1 ? stacked.front() : interleave_groups(stacked, config.groups);
  Conv2dOptions proj;
  proj.groups = config.groups;
  return conv2d(leaky_relu(merged, config.leaky_slope), params.at(pn::kProjWeight), params.at(pn::kProjBias), proj);
}

Tensor recurrent_step(const Tensor& x_feat, const Tensor& y_prev, const ParamGroup& params,
                      const RDCNetConfig& config, bool training, Rng& rng) {
  require_nchw(x_feat, config.stem_channels, "recurrent_step (features)");
  require_nchw(y_prev, config.state_channels(), "recurrent_step (state)");
  if (x_feat.dim(0) != y_prev.dim(0) || x_feat.dim(2) != y_prev.dim(2) || x_feat.dim(3) != y_prev.dim(3)) {
    throw UsageError("recurrent_step: features " + shape_string(x_feat.shape()) + " and state " +
                     shape_string(y_prev.shape()) + " disagree");
  }
  const Tensor joined = concat(std::vector<Tensor>{x_feat, y_prev}, 1);
  const Tensor dropped = spatial_dropout(joined, config.dropout_p, training, rng);
  const Tensor mixed =
      conv2d(leaky_relu(dropped, config.leaky_slope), params.at(pn::kMixWeight), params.at(pn::kMixBias));
  return add(ssdc(mixed, params, config), y_prev);
}

HeadOutput heads(const Tensor& y, const ParamGroup& params, const RDCNetConfig& config) {
  require_nchw(y, config.state_channels(), "heads");
  const int s = config.scale;
  ConvTranspose2dOptions up;
  up.stride = {s, s};
  up.padding = {s / 2, s / 2};
  Tensor full = conv2d_transpose(leaky_relu(y, config.leaky_slope), params.at(pn::kHeadWeight),
                                 params.at(pn::kHeadBias), up);
  if (s % 2 == 1) {
    // Odd scales overshoot by one pixel per axis.
    full = narrow(narrow(full, 2, 0, y.dim(2) * s), 3, 0, y.dim(3) * s);
  }
  const Tensor raw = conv2d(leaky_relu(full, config.leaky_slope), params.at(pn::kOutWeight), params.at(pn::kOutBias));
  return {softmax(narrow(raw, 1, 0, config.semantic_classes), 1),
          narrow(raw, 1, config.semantic_classes, config.embedding_dim)};
}

Tensor coordinate_grid(std::int64_t batch, int dims, std::int64_t height, std::int64_t width) {
  if (dims != 2) throw UsageError("coordinate_grid: only 2-D grids are supported");
  Tensor grid = Tensor::zeros({batch, 2, height, width});
  dispatch(grid.dtype(), [&]<class T>(T) {
    auto d = grid.mutable_data<T>();
    const std::int64_t plane = height * width;
    for (std::int64_t n = 0; n < batch; ++n) {
      T* rows = d.data() + (n * 2) * plane;
      T* cols = rows + plane;
      for (std::int64_t r = 0; r < height; ++r) {
        for (std::int64_t c = 0; c < width; ++c) {
          rows[r * width + c] = static_cast<T>(r);
          cols[r * width + c] = static_cast<T>(c);
        }
      }
    }
  });
  return grid;
}

Tensor semi_conv(const Tensor& displacement, const Tensor& coords) { return add(displacement, coords); }

namespace {

void run_iterations(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config, bool training,
                    Rng& rng, const IterationVisitor& visit, int iterations, bool final_only) {
  const int n_iter = iterations > 0 ? iterations : config.iterations;
  const Tensor features = stem(image, params, config);
  Tensor state =
      Tensor::zeros({features.dim(0), config.state_channels(), features.dim(2), features.dim(3)}, features.dtype());
  const Tensor coords = coordinate_grid(image.dim(0), config.embedding_dim, image.dim(2), image.dim(3));
  for (int i = 0; i < n_iter; ++i) {
    state = recurrent_step(features, state, params, config, training, rng);
    if (final_only && i + 1 < n_iter) continue;
    HeadOutput h = heads(state, params, config);
    visit(i, IterationOutput{std::move(h.semantic_probs), semi_conv(h.displacement, coords)});
  }
}

}  // namespace

void forward_each(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config, bool training,
                  Rng& rng, const IterationVisitor& visit, int iterations) {
  run_iterations(image, params, config, training, rng, visit, iterations, false);
}

std::vector<IterationOutput> forward(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config,
                                     bool training, Rng& rng, int iterations) {
  std::vector<IterationOutput> outputs;
  forward_each(image, params, config, training, rng,
               [&](int, const IterationOutput& out) { outputs.push_back(out); }, iterations);
  return outputs;
}

IterationOutput forward_final(const Tensor& image, const ParamGroup& params, const RDCNetConfig& config,
                              bool training, Rng& rng, int iterations) {
  IterationOutput last;
  run_iterations(image, params, config, training, rng, [&](int, const IterationOutput& out) { last = out; },
                 iterations, true);
  return last;
}

Tensor to_batch(const std::vector<const FloatImage*>& images) {
  if (images.empty()) throw UsageError("to_batch: no images");
  const FloatImage& first = *images.front();
  for (const auto* img : images) {
    if (img->channels != first.channels || img->height != first.height || img->width != first.width) {
      throw UsageError("to_batch: images differ in shape");
    }
  }
  Tensor batch = Tensor::zeros({static_cast<std::int64_t>(images.size()), first.channels, first.height, first.width});
  dispatch(batch.dtype(), [&]<class T>(T) {
    auto d = batch.mutable_data<T>();
    std::size_t offset = 0;
    for (const auto* img : images) {
      std::transform(img->values.begin(), img->values.end(), d.begin() + static_cast<std::ptrdiff_t>(offset),
                     [](float v) { return static_cast<T>(v); });
      offset += img->values.size();
    }
  });
  return batch;
}

}  // namespace rdc
