#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rdcnet/augment.hpp"
#include "rdcnet/decoder.hpp"
#include "rdcnet/loss.hpp"
#include "rdcnet/model.hpp"
#include "rdcnet/synthetic.hpp"
#include "rdcnet/trainer.hpp"

namespace rdc::cli {

struct DataConfig {
  SyntheticConfig synthetic;
  int n_train = 200;
  int n_val = 32;
  int n_test = 32;
  bool operator==(const DataConfig&) const = default;
};

/// Everything a run needs, loaded from one JSON document with sections
/// "model", "loss", "decoder", "augment", "trainer" and "data" plus a
/// top-level "seed". Omitted keys keep their defaults; unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  RDCNetConfig model;
  LossConfig loss;
  DecoderConfig decoder;
  AugmentConfig augment;
  TrainerConfig trainer;
  DataConfig data;

  /// Validates every section and their cross-constraints (patch and image
  /// sizes divisible by the scale). Throws ConfigError.
  void validate() const;
  TrainSetup train_setup() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses JSON text. When "decoder.window" is absent it is derived from
/// "loss.margin". Throws ConfigError with the offending key path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Complete JSON rendering (every key), parseable by parse_run_config.
std::string dump_run_config(const RunConfig& config);

}  // namespace rdc::cli
