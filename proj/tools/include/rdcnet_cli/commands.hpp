#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rdcnet/manifest.hpp"
#include "rdcnet_cli/run_config.hpp"

namespace rdc::cli {

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kConfigExit = 2, kIoExit = 3, kNumericExit = 4, kMissingExit = 5 };

struct GenerateOptions {
  RunConfig config;
  std::filesystem::path out_dir;
  std::optional<int> n_train, n_val, n_test;
};

/// Writes images/<split>_NNNN.png, labels/<split>_NNNN.png and manifest.tsv
/// under out_dir. Returns the manifest path.
std::filesystem::path cmd_generate(const GenerateOptions& opt);

struct TrainOptions {
  RunConfig config;
  std::filesystem::path manifest;
  /// Defaults to config.trainer.checkpoint_dir.
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> resume;
};

/// Trains and writes last.ckpt, best.ckpt, metrics.tsv
/// (epoch<TAB>loss<TAB>val_f1), steps.tsv (step<TAB>lr<TAB>loss) and
/// config.json into the output directory. Resuming appends to the logs.
void cmd_train(const TrainOptions& opt);

struct PredictOptions {
  RunConfig config;
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> images;
  std::filesystem::path out_dir;
  std::optional<int> iterations;
  std::optional<int> window;
};

/// Writes one 16-bit label PNG per input, named after the input file.
void cmd_predict(const PredictOptions& opt);

struct EvalOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path manifest;
  Split split = Split::Test;
  double iou = 0.5;
  std::filesystem::path out_report;
};

/// Scores predictions (matched to ground truth by image file name) and writes
/// the report. Throws MissingInputError naming the first absent prediction.
EvalReport cmd_eval(const EvalOptions& opt);

struct InspectOptions {
  RunConfig config;
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::filesystem::path out_dir;
  std::optional<int> iterations;
};

/// Writes iter<i>_foreground.png, iter<i>_embedding.png and iter<i>_votes.png
/// for i = 1..iterations. Returns the written paths.
std::vector<std::filesystem::path> cmd_inspect(const InspectOptions& opt);

/// Colour-wheel rendering of 2-D embeddings: hue from the direction of each
/// embedding relative to the image centre, saturation from its distance.
FloatImage render_embeddings(const FloatImage& embeddings);

/// Entry point shared by the executable and tests; maps exceptions to exit codes.
int run(int argc, const char* const* argv);

}  // namespace rdc::cli
