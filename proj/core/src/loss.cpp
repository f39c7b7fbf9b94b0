#include "rdcnet/loss.hpp"

#include <cmath>
#include <iostream>

#include "rdcnet/errors.hpp"
#include "rdcnet/ops.hpp"

namespace rdc {
namespace {

const double kMarginFactor = std::sqrt(-2.0 * std::log(0.5));

void require_chw(const Tensor& t, const char* what) {
  if (t.ndim() != 3) throw UsageError(std::string(what) + ": expected [C, H, W], got " + shape_string(t.shape()));
}

}  // namespace

double sigma_from_margin(double margin) {
  if (!(margin > 0.0)) throw ConfigError("loss.margin: must be positive");
  return margin / kMarginFactor;
}

double margin_from_sigma(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("loss.sigma: must be positive");
  return sigma * kMarginFactor;
}

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("loss.margin: must be positive");
  if (!(semantic_weight >= 0.0)) throw ConfigError("loss.semantic_weight: must be >= 0");
  if (!(instance_weight >= 0.0)) throw ConfigError("loss.instance_weight: must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon: must be positive");
}

Tensor select_image(const Tensor& batch, std::int64_t n) {
  if (batch.ndim() != 4) throw UsageError("select_image: expected NCHW");
  return reshape(narrow(batch, 0, n, 1), {batch.dim(1), batch.dim(2), batch.dim(3)});
}

Tensor masked_mean(const Tensor& embeddings, std::span<const std::int64_t> pixels) {
  require_chw(embeddings, "masked_mean");
  if (pixels.empty()) throw UsageError("masked_mean: empty pixel set");
  const std::int64_t dims = embeddings.dim(0);
  const std::int64_t plane = embeddings.dim(1) * embeddings.dim(2);
  const double inv = 1.0 / static_cast<double>(pixels.size());
  Tensor out = Tensor::zeros({dims}, embeddings.dtype());
  dispatch(embeddings.dtype(), [&]<class T>(T) {
    auto e = embeddings.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t d = 0; d < dims; ++d) {
      double acc = 0.0;
      for (auto u : pixels) acc += static_cast<double>(e[d * plane + u]);
      o[d] = static_cast<T>(acc * inv);
    }
  });
  std::vector<std::int64_t> idx(pixels.begin(), pixels.end());
  const Shape in_shape = embeddings.shape();
  return record(
      out, {embeddings},
      [idx, in_shape, dims, plane, inv](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        Tensor ge = Tensor::zeros(in_shape, g.dtype());
        dispatch(g.dtype(), [&]<class T>(T) {
          auto gd = g.data<T>();
          auto dst = ge.mutable_data<T>();
          for (std::int64_t d = 0; d < dims; ++d) {
            const T share = static_cast<T>(static_cast<double>(gd[d]) * inv);
            for (auto u : idx) dst[d * plane + u] += share;
          }
        });
        return {ge};
      },
      "masked_mean");
}

std::map<std::uint16_t, Tensor> true_centroids(const Tensor& embeddings, const LabelMap& labels) {
  require_chw(embeddings, "true_centroids");
  if (embeddings.dim(1) != labels.height || embeddings.dim(2) != labels.width) {
    throw UsageError("true_centroids: labels and embeddings differ in extent");
  }
  std::map<std::uint16_t, std::vector<std::int64_t>> members;
  for (std::size_t u = 0; u < labels.ids.size(); ++u) {
    const auto id = labels.ids[u];
    if (id != kBackgroundLabel && id != kUndefinedLabel) members[id].push_back(static_cast<std::int64_t>(u));
  }
  std::map<std::uint16_t, Tensor> out;
  for (const auto& [id, pixels] : members) out.emplace(id, masked_mean(embeddings, pixels));
  return out;
}

Tensor instance_prob(const Tensor& embeddings, const Tensor& centroid, double sigma) {
  require_chw(embeddings, "instance_prob");
  if (!(sigma > 0.0)) throw ConfigError("instance_prob: sigma must be positive");
  const std::int64_t dims = embeddings.dim(0);
  if (centroid.numel() != dims) throw UsageError("instance_prob: centroid dimension mismatch");
  const std::int64_t h = embeddings.dim(1);
  const std::int64_t w = embeddings.dim(2);
  const std::int64_t plane = h * w;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);

  Tensor prob = Tensor::zeros({h, w}, embeddings.dtype());
  dispatch(embeddings.dtype(), [&]<class T>(T) {
    auto e = embeddings.data<T>();
    auto c = centroid.data<T>();
    auto p = prob.mutable_data<T>();
    for (std::int64_t u = 0; u < plane; ++u) {
      T sq = 0;
      for (std::int64_t d = 0; d < dims; ++d) {
        const T diff = e[d * plane + u] - c[d];
        sq += diff * diff;
      }
      p[u] = std::exp(-sq * static_cast<T>(inv_two_var));
    }
  });

  return record(
      prob, {embeddings, centroid},
      [embeddings, centroid, dims, plane, inv_two_var](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
        Tensor ge = Tensor::zeros(embeddings.shape(), embeddings.dtype());
        Tensor gc = Tensor::zeros(centroid.shape(), centroid.dtype());
        dispatch(g.dtype(), [&]<class T>(T) {
          auto e = embeddings.data<T>();
          auto c = centroid.data<T>();
          auto p = out.data<T>();
          auto gp = g.data<T>();
          auto dge = ge.mutable_data<T>();
          std::vector<double> dc(static_cast<std::size_t>(dims), 0.0);
          const T k = static_cast<T>(2.0 * inv_two_var);
          for (std::int64_t u = 0; u < plane; ++u) {
            const T common = -gp[u] * p[u] * k;
            if (common == T(0)) continue;
            for (std::int64_t d = 0; d < dims; ++d) {
              const T term = common * (e[d * plane + u] - c[d]);
              dge[d * plane + u] = term;
              dc[static_cast<std::size_t>(d)] -= static_cast<double>(term);
            }
          }
          auto dgc = gc.mutable_data<T>();
          for (std::int64_t d = 0; d < dims; ++d) dgc[d] = static_cast<T>(dc[static_cast<std::size_t>(d)]);
        });
        return {ge, gc};
      },
      "instance_prob");
}

Tensor soft_jaccard(const Tensor& pred, std::span<const std::uint8_t> target, std::span<const std::uint8_t> mask,
                    double epsilon) {
  const auto n = static_cast<std::size_t>(pred.numel());
  if (target.size() != n || mask.size() != n) throw UsageError("soft_jaccard: target/mask size mismatch");

  double inter = 0.0, psum = 0.0, tsum = 0.0;
  dispatch(pred.dtype(), [&]<class T>(T) {
    auto p = pred.data<T>();
    for (std::size_t u = 0; u < n; ++u) {
      if (!mask[u]) continue;
      const double pu = static_cast<double>(p[u]);
      psum += pu;
      if (target[u]) {
        inter += pu;
        tsum += 1.0;
      }
    }
  });
  const double num = inter + epsilon;
  const double den = psum + tsum - inter + epsilon;
  Tensor loss = Tensor::zeros({}, pred.dtype());
  dispatch(pred.dtype(), [&]<class T>(T) { loss.mutable_data<T>()[0] = static_cast<T>(1.0 - num / den); });

  std::vector<std::uint8_t> t(target.begin(), target.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return record(
      loss, {pred},
      [t = std::move(t), m = std::move(m), num, den, shape = pred.shape()](const Tensor&,
                                                                           const Tensor& g) -> std::vector<Tensor> {
        Tensor gp = Tensor::zeros(shape, g.dtype());
        dispatch(g.dtype(), [&]<class T>(T) {
          const double go = static_cast<double>(g.data<T>()[0]);
          const double d2 = den * den;
          // d(1 - num/den)/dp_u for masked u: -(t*den - num*(1-t)) / den^2.
          const T on_target = static_cast<T>(-go / den);
          const T off_target = static_cast<T>(go * num / d2);
          auto dst = gp.mutable_data<T>();
          for (std::size_t u = 0; u < dst.size(); ++u) {
            if (m[u]) dst[u] = t[u] ? on_target : off_target;
          }
        });
        return {gp};
      },
      "soft_jaccard");
}

Tensor esj_image(const Tensor& semantic_probs, const Tensor& embeddings, const LabelMap& labels,
                 const LossConfig& cfg) {
  require_chw(semantic_probs, "esj_image");
  require_chw(embeddings, "esj_image");
  if (semantic_probs.dim(1) != labels.height || semantic_probs.dim(2) != labels.width ||
      embeddings.dim(1) != labels.height || embeddings.dim(2) != labels.width) {
    throw UsageError("esj: labels " + std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                     " do not match prediction extent");
  }
  const std::size_t n = labels.ids.size();
  BinaryMask defined(n), foreground(n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto id = labels.ids[u];
    defined[u] = id != kUndefinedLabel;
    foreground[u] = id != kUndefinedLabel && id != kBackgroundLabel;
  }

  const Tensor fg_prob = reshape(narrow(semantic_probs, 0, 1, 1), {labels.height, labels.width});
  Tensor total = scale(soft_jaccard(fg_prob, foreground, defined, cfg.epsilon), cfg.semantic_weight);

  auto centroids = true_centroids(embeddings, labels);
  if (centroids.empty()) return total;

  const double sigma = cfg.sigma();
  Tensor instance_sum;
  BinaryMask target(n);
  for (auto& [id, centroid] : centroids) {
    const Tensor c = cfg.centroid_stop_gradient ? centroid.detach() : centroid;
    for (std::size_t u = 0; u < n; ++u) target[u] = labels.ids[u] == id;
    Tensor term = soft_jaccard(instance_prob(embeddings, c, sigma), target, foreground, cfg.epsilon);
    instance_sum = instance_sum.defined() ? add(instance_sum, term) : term;
  }
  const double w = cfg.instance_weight / static_cast<double>(centroids.size());
  return add(total, scale(instance_sum, w));
}

Tensor esj_total(std::span<const IterationOutput> iteration_outputs, std::span<const LabelMap> labels,
                 const LossConfig& cfg) {
  if (iteration_outputs.empty()) throw UsageError("esj_total: no iteration outputs");
  const std::size_t first = cfg.supervise_all_iterations ? 0 : iteration_outputs.size() - 1;
  const std::size_t count = iteration_outputs.size() - first;
  Tensor total;
  for (std::size_t i = first; i < iteration_outputs.size(); ++i) {
    const auto& out = iteration_outputs[i];
    const std::int64_t batch = out.semantic_probs.dim(0);
    if (static_cast<std::size_t>(batch) != labels.size()) {
      throw UsageError("esj_total: " + std::to_string(labels.size()) + " label maps for batch of " +
                       std::to_string(batch));
    }
    for (std::int64_t b = 0; b < batch; ++b) {
      Tensor term = esj_image(select_image(out.semantic_probs, b), select_image(out.embeddings, b),
                              labels[static_cast<std::size_t>(b)], cfg);
      total = total.defined() ? add(total, term) : term;
    }
  }
  const auto batch = static_cast<double>(labels.size());
  return scale(total, 1.0 / (batch * static_cast<double>(count)));
}

}  // namespace rdc
