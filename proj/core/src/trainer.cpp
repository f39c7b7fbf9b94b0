#include "rdcnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rdcnet/errors.hpp"
#include "rdcnet/optim.hpp"

namespace rdc {

namespace {

enum Stream : std::uint64_t { kShuffle = 1, kAugment = 2, kDropout = 3, kCrop = 4 };

std::vector<std::size_t> epoch_order(std::size_t n, const Rng& base, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = base.derive(kShuffle).derive(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Sample crop(const Sample& s, int patch, Rng& rng) {
  if (s.image.height < patch || s.image.width < patch) {
    throw ConfigError("trainer.patch_size: " + std::to_string(patch) + " exceeds image extent " +
                      std::to_string(s.image.height) + "x" + std::to_string(s.image.width));
  }
  if (s.image.height == patch && s.image.width == patch) return s;
  const int r0 = static_cast<int>(rng.uniform_int(0, s.image.height - patch));
  const int c0 = static_cast<int>(rng.uniform_int(0, s.image.width - patch));
  Sample out{FloatImage(s.image.channels, patch, patch), LabelMap(patch, patch)};
  for (int r = 0; r < patch; ++r) {
    for (int c = 0; c < patch; ++c) {
      for (int ch = 0; ch < s.image.channels; ++ch) out.image.at(ch, r, c) = s.image.at(ch, r0 + r, c0 + c);
      out.labels.at(r, c) = s.labels.at(r0 + r, c0 + c);
    }
  }
  return out;
}

FloatImage to_image(const Tensor& t, int height, int width) {
  const auto& shape = t.shape();
  const int channels = static_cast<int>(shape[1]);
  const auto th = shape[2];
  const auto tw = shape[3];
  const auto values = t.to_vector();
  FloatImage img(channels, height, width);
  for (int c = 0; c < channels; ++c) {
    for (int r = 0; r < height; ++r) {
      for (int col = 0; col < width; ++col) {
        img.at(c, r, col) = static_cast<float>(values[static_cast<std::size_t>((c * th + r) * tw + col)]);
      }
    }
  }
  return img;
}

FloatImage pad_to_multiple(const FloatImage& image, int multiple) {
  const int h = (image.height + multiple - 1) / multiple * multiple;
  const int w = (image.width + multiple - 1) / multiple * multiple;
  if (h == image.height && w == image.width) return image;
  FloatImage out(image.channels, h, w);
  for (int c = 0; c < image.channels; ++c) {
    for (int r = 0; r < image.height; ++r) {
      for (int col = 0; col < image.width; ++col) out.at(c, r, col) = image.at(c, r, col);
    }
  }
  return out;
}

}  // namespace

void TrainerConfig::validate(const RDCNetConfig& model) const {
  if (epochs < 0) throw ConfigError("trainer.epochs: must be >= 0");
  if (batch_size < 1) throw ConfigError("trainer.batch_size: must be >= 1");
  if (!(lr_max > 0.0)) throw ConfigError("trainer.lr_max: must be positive");
  if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw ConfigError("trainer.lr_min: must lie in [0, trainer.lr_max]");
  if (patch_size < 1 || patch_size % model.scale != 0) {
    throw ConfigError("trainer.patch_size: " + std::to_string(patch_size) + " is not divisible by model.scale " +
                      std::to_string(model.scale));
  }
}

std::int64_t steps_per_epoch(std::size_t n_train, int batch_size) {
  return static_cast<std::int64_t>((n_train + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

std::vector<EpochRecord> train(ParamGroup& params, const TrainSetup& setup, std::span<const Sample> train_set,
                               std::span<const Sample> val_set, const TrainCallbacks& callbacks) {
  const auto& tc = setup.trainer;
  setup.model.validate();
  setup.loss.validate();
  setup.decoder.validate();
  setup.augment.validate();
  tc.validate(setup.model);
  if (train_set.empty()) throw ConfigError("trainer: the training split is empty");

  const Rng base(tc.seed);
  const std::int64_t spe = steps_per_epoch(train_set.size(), tc.batch_size);
  const std::int64_t total = spe * tc.epochs;
  std::vector<EpochRecord> history;
  double best_f1 = -1.0;

  std::int64_t step = params.step();
  if (step > total) throw ConfigError("trainer.epochs: checkpoint is already past the configured schedule");
  std::vector<std::size_t> order;
  int order_epoch = -1;
  double epoch_loss = 0.0;
  int epoch_steps = 0;
  while (step < total) {
    const int epoch = static_cast<int>(step / spe);
    if (epoch != order_epoch) {
      order = epoch_order(train_set.size(), base, epoch);
      order_epoch = epoch;
    }
    const std::size_t first = static_cast<std::size_t>((step % spe) * tc.batch_size);
    const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(tc.batch_size));

    std::vector<Sample> batch;
    std::vector<LabelMap> labels;
    for (std::size_t k = first; k < last; ++k) {
      Rng crop_rng = base.derive(kCrop).derive(static_cast<std::uint64_t>(step)).derive(k - first);
      Sample s = crop(train_set[order[k]], tc.patch_size, crop_rng);
      Rng aug_rng = base.derive(kAugment).derive(static_cast<std::uint64_t>(step)).derive(k - first);
      augment(s, setup.augment, aug_rng);
      labels.push_back(s.labels);
      batch.push_back(std::move(s));
    }
    std::vector<const FloatImage*> images;
    for (const auto& s : batch) images.push_back(&s.image);
    const Tensor x = to_batch(images);

    Rng dropout_rng = base.derive(kDropout).derive(static_cast<std::uint64_t>(step));
    params.zero_grad();
    Tensor loss;
    if (setup.loss.supervise_all_iterations) {
      const auto outs = forward(x, params, setup.model, true, dropout_rng);
      loss = esj_total(outs, labels, setup.loss);
    } else {
      const IterationOutput out = forward_final(x, params, setup.model, true, dropout_rng);
      loss = esj_total(std::span<const IterationOutput>(&out, 1), labels, setup.loss);
    }
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step));
    loss.backward();
    const double lr = total > 1 ? cosine_lr(step, total - 1, tc.lr_max, tc.lr_min) : tc.lr_max;
    adam_step(params, lr);
    if (callbacks.on_step) callbacks.on_step({step, epoch, lr, value});
    epoch_loss += value;
    ++epoch_steps;
    ++step;

    if (step % spe == 0) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.loss = epoch_steps > 0 ? epoch_loss / epoch_steps : 0.0;
      rec.val_f1 = val_set.empty() ? 0.0 : evaluate_model(params, setup.model, setup.decoder, val_set, 0.5).mean.f1;
      const bool improved = rec.val_f1 > best_f1;
      best_f1 = std::max(best_f1, rec.val_f1);
      history.push_back(rec);
      if (callbacks.on_epoch) callbacks.on_epoch(rec, params, improved);
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }
  return history;
}

std::vector<Prediction> predict_each(const ParamGroup& params, const RDCNetConfig& config, const FloatImage& image,
                                     int iterations) {
  NoGradGuard no_grad;
  const FloatImage padded = pad_to_multiple(image, config.scale);
  const Tensor x = to_batch({&padded});
  Rng unused(0);
  std::vector<Prediction> out;
  forward_each(x, params, config, false, unused, [&](int, const IterationOutput& it) {
    out.push_back({to_image(it.semantic_probs, image.height, image.width),
                   to_image(it.embeddings, image.height, image.width)});
  }, iterations);
  return out;
}

Prediction predict(const ParamGroup& params, const RDCNetConfig& config, const FloatImage& image, int iterations) {
  NoGradGuard no_grad;
  const FloatImage padded = pad_to_multiple(image, config.scale);
  const Tensor x = to_batch({&padded});
  Rng unused(0);
  const IterationOutput out = forward_final(x, params, config, false, unused, iterations);
  return {to_image(out.semantic_probs, image.height, image.width), to_image(out.embeddings, image.height, image.width)};
}

LabelMap segment(const ParamGroup& params, const RDCNetConfig& config, const DecoderConfig& decoder,
                 const FloatImage& image, int iterations) {
  const Prediction p = predict(params, config, image, iterations);
  return decode(p.semantic_probs, p.embeddings, decoder);
}

EvalReport evaluate_model(const ParamGroup& params, const RDCNetConfig& config, const DecoderConfig& decoder,
                          std::span<const Sample> samples, double iou_threshold, int iterations) {
  std::vector<LabelMap> preds, gts;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    preds.push_back(segment(params, config, decoder, samples[k].image, iterations));
    gts.push_back(samples[k].labels);
    names.push_back(std::to_string(k));
  }
  return evaluate(preds, gts, names, iou_threshold);
}

}  // namespace rdc
