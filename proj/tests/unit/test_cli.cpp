#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rdcnet/errors.hpp"
#include "rdcnet_cli/commands.hpp"
#include "rdcnet_cli/run_config.hpp"

using namespace rdc;
using namespace rdc::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rdcnet_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "rdcnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

constexpr const char* kTinyConfig = R"({
  "seed": 3,
  "model": {"groups": 2, "group_channels": 4, "dilation_rates": [1, 2], "iterations": 2,
            "scale": 2, "stem_channels": 4},
  "loss": {"margin": 3.0},
  "trainer": {"epochs": 2, "batch_size": 2, "patch_size": 24},
  "data": {"n_train": 4, "n_val": 2, "n_test": 2, "size": 24, "min_instances": 1, "max_instances": 2,
           "radius_range": [3, 5]}
})";

}  // namespace

TEST_CASE("run config parsing") {
  const RunConfig def = parse_run_config("{}");
  CHECK(def == RunConfig{[] {
          RunConfig r;
          r.decoder.window = DecoderConfig::window_for_margin(r.loss.margin);
          return r;
        }()});
  const RunConfig tiny = parse_run_config(kTinyConfig);
  CHECK(tiny.seed == 3);
  CHECK(tiny.model.dilation_rates == std::vector<int>{1, 2});
  CHECK(tiny.decoder.window == 7);
  CHECK(tiny.data.synthetic.radius_range == std::pair{3.0, 5.0});
  CHECK(parse_run_config(dump_run_config(tiny)) == tiny);
  CHECK(tiny.train_setup().trainer.seed == 3);

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"depth": 3}})"), doctest::Contains("model.depth"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"groups": "x"}})"), doctest::Contains("model.groups"),
                       ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"data": {"size": 63}})").validate(),
                       doctest::Contains("data.size"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"trainer": {"patch_size": 30}})").validate(),
                       doctest::Contains("trainer.patch_size"), ConfigError);
}

TEST_CASE("cli end to end") {
  TempDir dir("e2e");
  const fs::path config = dir.path / "config.json";
  std::ofstream(config) << kTinyConfig;
  const std::string cfg = config.string();

  // generate: line count and reproducibility.
  REQUIRE(invoke({"--config", cfg, "generate", "--out", (dir.path / "data").string()}) == 0);
  REQUIRE(invoke({"--config", cfg, "generate", "--out", (dir.path / "data2").string()}) == 0);
  const std::string manifest = slurp(dir.path / "data" / "manifest.tsv");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 1 + 8);
  CHECK(manifest == slurp(dir.path / "data2" / "manifest.tsv"));
  CHECK(slurp(dir.path / "data" / "images" / "train_0003.png") ==
        slurp(dir.path / "data2" / "images" / "train_0003.png"));
  REQUIRE(invoke({"--config", cfg, "generate", "--out", (dir.path / "small").string(), "--n-train", "1", "--n-val",
               "0", "--n-test", "1"}) == 0);

  // train: logs and checkpoints.
  const std::string mpath = (dir.path / "data" / "manifest.tsv").string();
  const fs::path run_dir = dir.path / "run";
  REQUIRE(invoke({"--config", cfg, "train", "--manifest", mpath, "--out", run_dir.string()}) == 0);
  CHECK(fs::exists(run_dir / "last.ckpt"));
  CHECK(fs::exists(run_dir / "best.ckpt"));
  CHECK(parse_run_config(slurp(run_dir / "config.json")) == parse_run_config(kTinyConfig));
  const std::string metrics = slurp(run_dir / "metrics.tsv");
  CHECK(metrics.rfind("epoch\tloss\tval_f1\n", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);
  std::istringstream steps(slurp(run_dir / "steps.tsv"));
  std::string header, line, last;
  std::getline(steps, header);
  std::getline(steps, line);
  CHECK(line.rfind("0\t0.001\t", 0) == 0);
  while (std::getline(steps, line)) last = line;
  CHECK(last.rfind("3\t1e-05\t", 0) == 0);

  // Resuming a finished run changes nothing.
  const std::string ckpt_before = slurp(run_dir / "last.ckpt");
  REQUIRE(invoke({"--config", cfg, "train", "--manifest", mpath, "--out", run_dir.string(), "--resume",
               (run_dir / "last.ckpt").string()}) == 0);
  CHECK(slurp(run_dir / "last.ckpt") == ckpt_before);

  // predict: reproducible, one file per image.
  const std::string ckpt = (run_dir / "last.ckpt").string();
  const fs::path pa = dir.path / "pred_a", pb = dir.path / "pred_b";
  REQUIRE(invoke({"--config", cfg, "predict", "--checkpoint", ckpt, "--out", pa.string(), "--manifest", mpath,
               "--split", "test"}) == 0);
  REQUIRE(invoke({"--config", cfg, "predict", "--checkpoint", ckpt, "--out", pb.string(), "--manifest", mpath,
               "--split", "test"}) == 0);
  CHECK(slurp(pa / "test_0000.png") == slurp(pb / "test_0000.png"));
  CHECK(slurp(pa / "test_0001.png") == slurp(pb / "test_0001.png"));

  // eval: a prediction equal to the ground truth scores 1.
  const fs::path gt_pred = dir.path / "gt_pred";
  fs::create_directories(gt_pred);
  for (const char* name : {"test_0000.png", "test_0001.png"}) {
    fs::copy_file(dir.path / "data" / "labels" / name, gt_pred / name);
  }
  const fs::path report = dir.path / "report.txt";
  REQUIRE(invoke({"eval", "--pred", gt_pred.string(), "--manifest", mpath, "--out", report.string()}) == 0);
  const std::string text = slurp(report);
  CHECK(text.find("\nf1\t1.000000\n") != std::string::npos);
  CHECK(text.find("\naji\t1.000000\n") != std::string::npos);
  CHECK(text.find("\nsbd\t1.000000\n") != std::string::npos);
  REQUIRE(invoke({"eval", "--pred", pa.string(), "--manifest", mpath, "--out", (dir.path / "r2.txt").string()}) == 0);

  // inspect: three panels per iteration.
  const fs::path insp = dir.path / "inspect";
  REQUIRE(invoke({"--config", cfg, "inspect", "--checkpoint", ckpt, "--image",
               (dir.path / "data" / "images" / "test_0000.png").string(), "--out", insp.string(), "--iterations",
               "3"}) == 0);
  CHECK(std::distance(fs::directory_iterator(insp), fs::directory_iterator{}) == 9);
  CHECK(fs::exists(insp / "iter2_votes.png"));

  // Exit codes.
  CHECK(invoke({"eval", "--pred", (dir.path / "nowhere").string(), "--manifest", mpath}) == kMissingExit);
  CHECK(invoke({"train", "--manifest", (dir.path / "small" / "manifest.tsv").string(), "--out",
             (dir.path / "x").string()}) == kMissingExit);
  CHECK(invoke({"predict", "--checkpoint", (dir.path / "none.ckpt").string(), "--out", pa.string(),
             (dir.path / "data" / "images" / "test_0000.png").string()}) == kIoExit);
  std::ofstream(dir.path / "bad.json") << R"({"model": {"scale": 5}, "data": {"size": 64}})";
  CHECK(invoke({"--config", (dir.path / "bad.json").string(), "generate", "--out", (dir.path / "y").string()}) ==
        kConfigExit);
  std::ofstream(dir.path / "unknown.json") << R"({"modle": {}})";
  CHECK(invoke({"--config", (dir.path / "unknown.json").string(), "generate", "--out", (dir.path / "y").string()}) ==
        kConfigExit);
  CHECK(invoke({"frobnicate"}) == kConfigExit);
  CHECK(invoke({"--help"}) == 0);
  // Resuming with a model section that differs from the checkpoint's.
  std::ofstream(dir.path / "other.json") << R"({"model": {"groups": 2, "group_channels": 8, "scale": 2},
    "trainer": {"patch_size": 24}, "data": {"size": 24, "radius_range": [3, 5]}})";
  CHECK(invoke({"--config", (dir.path / "other.json").string(), "train", "--manifest", mpath, "--out",
                (dir.path / "z").string(), "--resume", ckpt}) == kConfigExit);
}
