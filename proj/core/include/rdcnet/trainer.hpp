#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rdcnet/augment.hpp"
#include "rdcnet/decoder.hpp"
#include "rdcnet/image.hpp"
#include "rdcnet/loss.hpp"
#include "rdcnet/metrics.hpp"
#include "rdcnet/model.hpp"

namespace rdc {

struct TrainerConfig {
  int epochs = 30;
  int batch_size = 2;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  std::uint64_t seed = 0;
  std::string checkpoint_dir = "checkpoints";
  /// Side of the square training crop; must be divisible by the model scale.
  int patch_size = 64;

  /// Throws ConfigError naming the offending field (prefix "trainer.").
  void validate(const RDCNetConfig& model) const;
  bool operator==(const TrainerConfig&) const = default;
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  /// Mean training loss over the epoch's steps.
  double loss = 0.0;
  /// Mean F1 at IoU 0.5 on the validation samples.
  double val_f1 = 0.0;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  /// Called after validation; `improved` is true when val_f1 beats every earlier epoch.
  std::function<void(const EpochRecord&, const ParamGroup&, bool improved)> on_epoch;
};

struct TrainSetup {
  RDCNetConfig model;
  LossConfig loss;
  DecoderConfig decoder;
  AugmentConfig augment;
  TrainerConfig trainer;
};

std::int64_t steps_per_epoch(std::size_t n_train, int batch_size);

/// Trains `params` in place from params.step() to epochs * steps_per_epoch.
/// Batch order, crops, augmentation and dropout depend only on (seed, step),
/// so a resumed run reproduces the uninterrupted one. Throws NumericError on a
/// non-finite loss, naming the step.
std::vector<EpochRecord> train(ParamGroup& params, const TrainSetup& setup, std::span<const Sample> train_set,
                               std::span<const Sample> val_set, const TrainCallbacks& callbacks = {});

/// Per-pixel network outputs of a single image.
struct Prediction {
  FloatImage semantic_probs;
  FloatImage embeddings;
};

/// Inference on one [C, H, W] image; zero-pads to a multiple of the scale and
/// crops the outputs back. iterations = 0 uses the configured count.
Prediction predict(const ParamGroup& params, const RDCNetConfig& config, const FloatImage& image, int iterations = 0);

/// Every iteration's outputs for one image, in order.
std::vector<Prediction> predict_each(const ParamGroup& params, const RDCNetConfig& config, const FloatImage& image,
                                     int iterations = 0);

LabelMap segment(const ParamGroup& params, const RDCNetConfig& config, const DecoderConfig& decoder,
                 const FloatImage& image, int iterations = 0);

/// Segments every sample and scores it against its labels.
EvalReport evaluate_model(const ParamGroup& params, const RDCNetConfig& config, const DecoderConfig& decoder,
                          std::span<const Sample> samples, double iou_threshold = 0.5, int iterations = 0);

}  // namespace rdc
