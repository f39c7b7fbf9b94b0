// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Set RDCNET_ACCEPTANCE_DIR to keep the synthetic runs in a fixed directory.

#include <spdlog/spdlog.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "rdcnet/checkpoint.hpp"
#include "rdcnet/decoder.hpp"
#include "rdcnet/loss.hpp"
#include "rdcnet/metrics.hpp"
#include "rdcnet/model.hpp"
#include "rdcnet/ops.hpp"
#include "rdcnet_cli/commands.hpp"
#include "rdcnet_cli/run_config.hpp"

using namespace rdc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  auto cases = testing::op_gradient_cases();
  cases.push_back(testing::end_to_end_gradient_case());
  double worst_ops = 0.0;
  Outcome o{true, {}};
  std::size_t checked = 0;
  for (const auto& c : cases) {
    const auto r = c.run();
    checked += r.checked;
    if (c.tolerance < 1e-3) worst_ops = std::max(worst_ops, r.max_rel_error);
    if (!(r.max_rel_error < c.tolerance)) {
      o.pass = false;
      o.detail += " [" + c.name + " " + r.worst + " rel " + num(r.max_rel_error) + " >= " + num(c.tolerance) + "]";
    }
    if (c.tolerance >= 1e-3) o.detail += " end-to-end max rel " + num(r.max_rel_error) + " (< 1e-3);";
  }
  const double elapsed = seconds_since(t0);
  if (elapsed >= 120.0) o.pass = false;
  o.detail = std::to_string(cases.size()) + " cases, " + std::to_string(checked) + " elements; ops max rel " +
             num(worst_ops) + " (< 1e-4);" + o.detail + " " + num(elapsed, 3) + " s (< 120 s)";
  return o;
}

Outcome loss_analytics() {
  Outcome o{true, {}};
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + what + (ok ? "" : " FAILED");
  };
  for (DType dt : {DType::f32, DType::f64}) {
    DTypeGuard guard(dt);
    const std::string tag = dt == DType::f32 ? "f32 " : "f64 ";
    const double margin = 6.0;
    const double sigma = sigma_from_margin(margin);
    const Tensor centroid = Tensor::from_values({2}, std::vector<double>{3.0, -2.0});
    // Pixel 0 at the centroid, pixel 1 at distance margin along a diagonal, pixel 2 along an axis.
    const double d = margin / std::sqrt(2.0);
    const Tensor emb =
        Tensor::from_values({2, 1, 3}, std::vector<double>{3.0, 3.0 + d, 3.0 + margin, -2.0, -2.0 - d, -2.0});
    const Tensor p = instance_prob(emb, centroid, sigma);
    check(p.at(0) == 1.0, tag + "p(centroid) = " + num(p.at(0), 10));
    const double e1 = std::abs(p.at(1) - 0.5), e2 = std::abs(p.at(2) - 0.5);
    check(e1 <= 1e-6 && e2 <= 1e-6, tag + "|p(margin) - 0.5| = " + num(std::max(e1, e2), 3) + " (<= 1e-6)");

    const std::vector<std::uint8_t> mask{0, 1, 1, 0, 1, 1, 0, 0}, all(8, 1);
    const Tensor same = Tensor::from_values({8}, std::vector<double>{0, 1, 1, 0, 1, 1, 0, 0});
    const double sj = soft_jaccard(same, mask, all, 1e-6).item();
    check(sj == 0.0, tag + "soft_jaccard(identical) = " + num(sj));

    const LabelMap undefined(16, 16, kUndefinedLabel);
    const Tensor probs = softmax(testing::random_tensor({1, 2, 16, 16}, 1, -3.0, 3.0), 1);
    const Tensor embeddings = testing::random_tensor({1, 2, 16, 16}, 2, -20.0, 20.0);
    const IterationOutput out{dt == DType::f32 ? Tensor::from_values(probs.shape(), probs.to_vector()) : probs,
                              dt == DType::f32 ? Tensor::from_values(embeddings.shape(), embeddings.to_vector())
                                               : embeddings};
    LossConfig cfg;
    cfg.margin = margin;
    const double total =
        esj_total(std::span<const IterationOutput>(&out, 1), std::span<const LabelMap>(&undefined, 1), cfg).item();
    check(total == 0.0, tag + "all-undefined loss = " + num(total));
  }
  return o;
}

Outcome decoder_oracle() {
  int exact = 0, total_centres = 0;
  const int n = 200;
  for (int k = 0; k < n; ++k) {
    Rng rng = Rng(7001).derive(static_cast<std::uint64_t>(k));
    const int h = static_cast<int>(rng.uniform_int(1, 32));
    const int w = static_cast<int>(rng.uniform_int(1, 32));
    const int clusters = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<std::pair<double, double>> centres;
    for (int i = 0; i < clusters; ++i) centres.emplace_back(rng.uniform(-3.0, h + 2.0), rng.uniform(-3.0, w + 2.0));
    FloatImage emb(2, h, w), probs(2, h, w);
    const std::size_t plane = emb.plane_size();
    const double spread = rng.uniform(0.0, 3.0);
    for (std::size_t u = 0; u < plane; ++u) {
      const auto& c = centres[static_cast<std::size_t>(rng.uniform_int(0, clusters - 1))];
      emb.values[u] = static_cast<float>(c.first + rng.normal() * spread);
      emb.values[plane + u] = static_cast<float>(c.second + rng.normal() * spread);
      const auto fg = static_cast<float>(rng.uniform());
      probs.values[plane + u] = fg;
      probs.values[u] = 1.0f - fg;
    }
    DecoderConfig cfg;
    cfg.fg_threshold = rng.uniform(0.2, 0.8);
    cfg.window = 1 + 2 * static_cast<int>(rng.uniform_int(0, 7));
    cfg.min_votes = static_cast<int>(rng.uniform_int(1, 3));
    const LabelMap got = decode(probs, emb, cfg);
    const LabelMap ref = testing::brute_decode(probs, emb, cfg);
    exact += got == ref;
    total_centres += static_cast<int>(ref.instance_ids().size());
  }
  return {exact == n, std::to_string(exact) + "/" + std::to_string(n) + " cases identical to the brute-force oracle (" +
                          std::to_string(total_centres) + " instances total)"};
}

Outcome metrics_oracle() {
  const int n = 100;
  int agree = 0;
  double worst = 0.0;
  for (int k = 0; k < n; ++k) {
    Rng rng = Rng(7002).derive(static_cast<std::uint64_t>(k));
    const int h = static_cast<int>(rng.uniform_int(4, 32));
    const int w = static_cast<int>(rng.uniform_int(4, 32));
    const LabelMap gt = testing::random_label_map(h, w, 5, rng, k % 4 == 0 ? 0.05 : 0.0);
    const LabelMap pred = k % 3 == 0 ? testing::random_label_map(h, w, 5, rng)
                                     : testing::perturb_labels(gt, rng.uniform(0.0, 0.5), rng);
    const double ds = std::abs(sbd(pred, gt) - testing::brute_sbd(pred, gt));
    const double da = std::abs(aji(pred, gt) - testing::brute_aji(pred, gt));
    worst = std::max({worst, ds, da});
    agree += ds <= 1e-12 && da <= 1e-12;
  }
  bool identity_ok = true;
  for (int k = 0; k < 20; ++k) {
    Rng rng = Rng(7003).derive(static_cast<std::uint64_t>(k));
    const LabelMap m = testing::random_label_map(24, 24, 5, rng, k % 2 ? 0.05 : 0.0);
    const ImageScores s = score_image(m, m, 0.5);
    identity_ok &= s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0 && s.sbd == 1.0 && s.aji == 1.0;
  }
  return {agree == n && identity_ok, std::to_string(agree) + "/" + std::to_string(n) +
                                         " pairs agree (max |diff| " + num(worst, 3) + "); identity maps " +
                                         (identity_ok ? "score 1.0 on every metric" : "DO NOT score 1.0")};
}

// ---------------------------------------------------------------------------

cli::RunConfig end_to_end_config() {
  cli::RunConfig c;
  c.seed = 2024;
  c.model.groups = 4;
  c.model.group_channels = 16;
  c.model.dilation_rates = {1, 2, 4};
  c.model.iterations = 5;
  c.model.scale = 2;
  c.loss.margin = 6.0;
  c.decoder.window = DecoderConfig::window_for_margin(c.loss.margin);
  c.trainer.epochs = 15;
  c.trainer.patch_size = 64;
  c.data.n_train = 200;
  c.data.n_val = 32;
  c.data.n_test = 32;
  c.data.synthetic.size = 64;
  c.data.synthetic.min_instances = 3;
  c.data.synthetic.max_instances = 8;
  return c;
}

struct PipelineRun {
  fs::path dir;
  double seconds = 0.0;
  EvalReport report;
};

std::vector<fs::path> split_images(const fs::path& manifest, Split split) {
  std::vector<fs::path> out;
  for (const auto& e : load_manifest(manifest).split(split)) out.push_back(e.image);
  return out;
}

/// generate -> train -> predict(test) -> eval, through the CLI command layer.
PipelineRun run_pipeline(const cli::RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  const fs::path manifest = cli::cmd_generate({cfg, dir / "data", {}, {}, {}});
  cli::cmd_train({cfg, manifest, dir / "run", {}});
  cli::cmd_predict({cfg, dir / "run" / "best.ckpt", split_images(manifest, Split::Test), dir / "pred", {}, {}});
  PipelineRun r;
  r.report = cli::cmd_eval({dir / "pred", manifest, Split::Test, 0.5, dir / "report.txt"});
  r.seconds = seconds_since(t0);
  r.dir = dir;
  return r;
}

Outcome end_to_end(const PipelineRun& run) {
  const double f1 = run.report.mean.f1, a = run.report.mean.aji;
  const bool ok = f1 >= 0.80 && a >= 0.60 && run.seconds <= 20 * 60.0;
  return {ok, "test F1@0.5 " + num(f1) + " (>= 0.80), AJI " + num(a) + " (>= 0.60), SBD " +
                  num(run.report.mean.sbd) + "; generate+train+eval " + num(run.seconds, 4) + " s (<= 1200 s)"};
}

Outcome iteration_effect(const cli::RunConfig& cfg, const PipelineRun& run) {
  const fs::path manifest = run.dir / "data" / "manifest.tsv";
  std::ostringstream detail;
  double f1[2] = {0, 0};
  int k = 0;
  for (int iters : {1, 5}) {
    const fs::path out = run.dir / ("pred_iter" + std::to_string(iters));
    cli::cmd_predict({cfg, run.dir / "run" / "best.ckpt", split_images(manifest, Split::Test), out, iters, {}});
    f1[k++] = cli::cmd_eval({out, manifest, Split::Test, 0.5, run.dir / ("report_iter" + std::to_string(iters) + ".txt")})
                  .mean.f1;
  }
  const double gap = f1[1] - f1[0];
  return {gap >= 0.05, "F1@0.5 with 1 iteration " + num(f1[0]) + ", with 5 iterations " + num(f1[1]) + ", gap " +
                           num(gap) + " (>= 0.05)"};
}

Outcome constant_memory(const cli::RunConfig& cfg) {
  Rng rng(1);
  const ParamGroup params = build(cfg.model, rng);
  const Tensor image = testing::random_tensor({1, 3, 64, 64}, 3, 0.0, 1.0);
  const Tensor img = default_dtype() == DType::f64 ? image : Tensor::from_values(image.shape(), image.to_vector());
  auto high_water = [&](int iterations) {
    NoGradGuard no_grad;
    Rng r(0);
    memory::reset_peak();
    const std::size_t base = memory::stats().current;
    const IterationOutput out = forward_final(img, params, cfg.model, false, r, iterations);
    return static_cast<double>(memory::stats().peak - base);
  };
  const double m2 = high_water(2);
  const double m10 = high_water(10);
  const double rel = std::abs(m10 - m2) / m2;
  return {rel <= 0.01, "inference peak " + num(m2, 8) + " B at 2 iterations, " + num(m10, 8) +
                           " B at 10 iterations, relative difference " + num(rel, 3) + " (<= 0.01)"};
}

Outcome shared_weights(const cli::RunConfig& cfg) {
  RDCNetConfig one = cfg.model, four = cfg.model;
  one.dilation_rates = {1};
  four.dilation_rates = {1, 2, 4, 8};
  Rng a(0), b(0);
  const ParamGroup p1 = build(one, a), p4 = build(four, b);
  const auto proj_bytes =
      (p4.at(param_names::kProjWeight).numel() - p1.at(param_names::kProjWeight).numel()) * std::int64_t{4};
  const auto model_delta = static_cast<std::int64_t>(serialize_checkpoint(four, p4, false).size()) -
                           static_cast<std::int64_t>(serialize_checkpoint(one, p1, false).size());
  const auto full_delta = static_cast<std::int64_t>(serialize_checkpoint(four, p4, true).size()) -
                          static_cast<std::int64_t>(serialize_checkpoint(one, p1, true).size());
  const bool ok = model_delta == proj_bytes && full_delta == 3 * proj_bytes &&
                  p1.at(param_names::kSsdcWeight).numel() == p4.at(param_names::kSsdcWeight).numel();
  return {ok, "{1,2,4,8} minus {1}: weights-only checkpoint +" + std::to_string(model_delta) +
                  " B, projection weight grows by " + std::to_string(proj_bytes) +
                  " B; with optimizer moments +" + std::to_string(full_delta) + " B (expected " +
                  std::to_string(3 * proj_bytes) + ")"};
}

Outcome reproducibility(const PipelineRun& a, const PipelineRun& b) {
  bool ok = true;
  std::string detail;
  for (const fs::path& rel : {fs::path("report.txt"), fs::path("run") / "metrics.tsv", fs::path("run") / "steps.tsv"}) {
    const std::string x = slurp(a.dir / rel), y = slurp(b.dir / rel);
    const bool same = !x.empty() && x == y;
    ok &= same;
    detail += (detail.empty() ? "" : ", ") + rel.string() + (same ? " identical" : " DIFFERS") + " (" +
              std::to_string(x.size()) + " B)";
  }
  return {ok, detail};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  std::cout.setf(std::ios::unitbuf);
  const char* keep = std::getenv("RDCNET_ACCEPTANCE_DIR");
  const fs::path work =
      keep ? fs::path(keep) : fs::temp_directory_path() / ("rdcnet_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  };

  const cli::RunConfig cfg = end_to_end_config();
  report("gradient suite", gradient_suite);
  report("loss analytics", loss_analytics);
  report("decoder oracle", decoder_oracle);
  report("metrics oracle", metrics_oracle);
  report("constant inference memory", [&] { return constant_memory(cfg); });
  report("shared-weight checkpoint size", [&] { return shared_weights(cfg); });

  std::optional<PipelineRun> first, second;
  std::string pipeline_error;
  try {
    first = run_pipeline(cfg, work / "run_a");
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  report("end-to-end synthetic", [&] {
    if (!first) return Outcome{false, "pipeline threw: " + pipeline_error};
    return end_to_end(*first);
  });
  report("iteration effect", [&] {
    if (!first) return Outcome{false, "no trained model"};
    return iteration_effect(cfg, *first);
  });
  report("reproducibility", [&] {
    if (!first) return Outcome{false, "first run failed"};
    second = run_pipeline(cfg, work / "run_b");
    return reproducibility(*first, *second);
  });

  if (!keep) fs::remove_all(work);
  std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failures) +
                                                                          " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
