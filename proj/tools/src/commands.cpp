#include "rdcnet_cli/commands.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "rdcnet/checkpoint.hpp"
#include "rdcnet/errors.hpp"
#include "rdcnet/image_io.hpp"
#include "rdcnet/synthetic.hpp"
#include "rdcnet/trainer.hpp"

namespace rdc::cli {

namespace fs = std::filesystem;

namespace {

enum Stream : std::uint64_t { kGenerateStream = 100, kInitStream = 101 };

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
}

std::string sample_name(Split split, int index) {
  std::ostringstream os;
  os << split_name(split) << '_' << std::setw(4) << std::setfill('0') << index << ".png";
  return os.str();
}

std::vector<Sample> load_split(const Manifest& m, Split split) {
  std::vector<Sample> out;
  for (const auto& e : m.split(split)) out.push_back(load_sample(e.image, e.labels));
  return out;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Highest val_f1 already logged in an existing metrics file, or -1.
double logged_best(const fs::path& metrics) {
  std::ifstream in(metrics);
  double best = -1.0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string epoch;
    double loss = 0.0, f1 = 0.0;
    if (std::getline(is, epoch, '\t') && epoch != "epoch" && is >> loss >> f1) best = std::max(best, f1);
  }
  return best;
}

std::ofstream open_log(const fs::path& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  return out;
}

Checkpoint load_model(const fs::path& path, std::optional<int> iterations) {
  Checkpoint ck = load_checkpoint(path);
  if (iterations) {
    if (*iterations < 1) throw ConfigError("--iterations: must be >= 1");
    ck.config.iterations = *iterations;
  }
  return ck;
}

FloatImage load_input(const fs::path& path, const RDCNetConfig& model) {
  FloatImage img = load_image_png(path);
  if (img.channels != model.in_channels) {
    throw ConfigError(path.string() + ": image has " + std::to_string(img.channels) + " channels, model.in_channels is " +
                      std::to_string(model.in_channels));
  }
  return img;
}

FloatImage gray(const std::vector<float>& values, int height, int width) {
  FloatImage img(1, height, width);
  img.values = values;
  return img;
}

}  // namespace

fs::path cmd_generate(const GenerateOptions& opt) {
  RunConfig cfg = opt.config;
  if (opt.n_train) cfg.data.n_train = *opt.n_train;
  if (opt.n_val) cfg.data.n_val = *opt.n_val;
  if (opt.n_test) cfg.data.n_test = *opt.n_test;
  cfg.validate();

  make_dir(opt.out_dir / "images");
  make_dir(opt.out_dir / "labels");
  Manifest manifest;
  manifest.seed = cfg.seed;
  const Rng root = Rng(cfg.seed).derive(kGenerateStream);
  std::size_t instances = 0, total = 0;
  const std::pair<Split, int> splits[] = {
      {Split::Train, cfg.data.n_train}, {Split::Val, cfg.data.n_val}, {Split::Test, cfg.data.n_test}};
  for (const auto& [split, count] : splits) {
    const auto samples = generate_synthetic(count, cfg.data.synthetic, root.derive(static_cast<std::uint64_t>(split)));
    for (int i = 0; i < count; ++i) {
      const std::string name = sample_name(split, i);
      const auto& s = samples[static_cast<std::size_t>(i)];
      save_sample(opt.out_dir / "images" / name, opt.out_dir / "labels" / name, s);
      manifest.entries.push_back({split, fs::path("images") / name, fs::path("labels") / name});
      instances += s.labels.instance_ids().size();
      ++total;
    }
  }
  const fs::path path = opt.out_dir / "manifest.tsv";
  save_manifest(path, manifest);
  std::cout << "generated " << cfg.data.n_train << " train / " << cfg.data.n_val << " val / " << cfg.data.n_test
            << " test samples of " << cfg.data.synthetic.size << "x" << cfg.data.synthetic.size
            << ", mean instances " << fixed(total ? static_cast<double>(instances) / total : 0.0, 2) << "\n"
            << "manifest " << path.string() << "\n";
  return path;
}

void cmd_train(const TrainOptions& opt) {
  const RunConfig& cfg = opt.config;
  cfg.validate();
  const Manifest manifest = load_manifest(opt.manifest);
  if (manifest.split(Split::Train).empty()) throw MissingInputError(opt.manifest.string() + ": no train split");
  if (manifest.split(Split::Val).empty()) throw MissingInputError(opt.manifest.string() + ": no val split");
  std::optional<Checkpoint> resume;
  if (opt.resume) {
    resume = load_checkpoint(*opt.resume);
    if (!(resume->config == cfg.model)) {
      throw ConfigError(opt.resume->string() + ": model section differs from the checkpoint's configuration");
    }
  }
  const auto train_set = load_split(manifest, Split::Train);
  const auto val_set = load_split(manifest, Split::Val);

  const fs::path out = opt.out_dir.value_or(fs::path(cfg.trainer.checkpoint_dir));
  make_dir(out);
  Rng init = Rng(cfg.seed).derive(kInitStream);
  ParamGroup params = build(cfg.model, init);
  if (opt.resume) load_checkpoint_into(*opt.resume, params);
  {
    std::ofstream conf(out / "config.json", std::ios::trunc);
    if (!conf) throw IoError((out / "config.json").string() + ": cannot open for writing");
    conf << dump_run_config(cfg);
  }

  const bool append = opt.resume.has_value();
  double best = append ? logged_best(out / "metrics.tsv") : -1.0;
  auto metrics = open_log(out / "metrics.tsv", append);
  auto steps = open_log(out / "steps.tsv", append);
  if (!append) {
    metrics << "epoch\tloss\tval_f1\n";
    steps << "step\tlr\tloss\n";
  }
  spdlog::info("training {} steps/epoch x {} epochs from step {}", steps_per_epoch(train_set.size(), cfg.trainer.batch_size),
               cfg.trainer.epochs, params.step());

  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) {
    std::ostringstream os;
    os << r.step << '\t' << std::setprecision(9) << r.lr << '\t' << fixed(r.loss) << '\n';
    steps << os.str();
    spdlog::debug("step {} lr {:.3g} loss {:.6f}", r.step, r.lr, r.loss);
  };
  cb.on_epoch = [&](const EpochRecord& r, const ParamGroup& p, bool) {
    metrics << (r.epoch + 1) << '\t' << fixed(r.loss) << '\t' << fixed(r.val_f1) << '\n';
    metrics.flush();
    steps.flush();
    save_checkpoint(out / "last.ckpt", cfg.model, p);
    if (r.val_f1 > best) {
      best = r.val_f1;
      save_checkpoint(out / "best.ckpt", cfg.model, p);
    }
    spdlog::info("epoch {} loss {:.4f} val_f1 {:.4f}", r.epoch + 1, r.loss, r.val_f1);
  };
  train(params, cfg.train_setup(), train_set, val_set, cb);
  if (!metrics || !steps) throw IoError(out.string() + ": writing training logs failed");
  if (!fs::exists(out / "last.ckpt")) save_checkpoint(out / "last.ckpt", cfg.model, params);
}

void cmd_predict(const PredictOptions& opt) {
  RunConfig cfg = opt.config;
  if (opt.window) cfg.decoder.window = *opt.window;
  cfg.decoder.validate();
  const Checkpoint ck = load_model(opt.checkpoint, opt.iterations);
  make_dir(opt.out_dir);
  for (const auto& path : opt.images) {
    const FloatImage img = load_input(path, ck.config);
    const LabelMap labels = segment(ck.params, ck.config, cfg.decoder, img);
    const fs::path target = opt.out_dir / path.filename();
    save_labels_png(target, labels);
    spdlog::info("{} -> {} ({} instances)", path.string(), target.string(), labels.instance_ids().size());
  }
}

EvalReport cmd_eval(const EvalOptions& opt) {
  if (!(opt.iou > 0.0 && opt.iou < 1.0)) throw ConfigError("--iou: must lie in (0, 1)");
  const Manifest manifest = load_manifest(opt.manifest);
  std::vector<LabelMap> preds, gts;
  std::vector<std::string> names;
  for (const auto& e : manifest.split(opt.split)) {
    const fs::path pred = opt.pred_dir / e.image.filename();
    if (!fs::exists(pred)) {
      throw MissingInputError("missing prediction for " + e.image.filename().string() + " (expected " +
                              pred.string() + ")");
    }
    preds.push_back(load_labels_png(pred));
    gts.push_back(load_labels_png(e.labels));
    names.push_back(e.image.filename().string());
  }
  const EvalReport report = evaluate(preds, gts, names, opt.iou);
  const std::string text = format_report(report);
  if (opt.out_report.empty()) {
    std::cout << text;
  } else {
    if (opt.out_report.has_parent_path()) make_dir(opt.out_report.parent_path());
    std::ofstream out(opt.out_report, std::ios::trunc);
    if (!out) throw IoError(opt.out_report.string() + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(opt.out_report.string() + ": write failed");
    std::cout << "f1 " << fixed(report.mean.f1) << "  sbd " << fixed(report.mean.sbd) << "  aji "
              << fixed(report.mean.aji) << "\n";
  }
  return report;
}

FloatImage render_embeddings(const FloatImage& emb) {
  if (emb.channels != 2) throw UsageError("render_embeddings: expected 2-channel embeddings");
  FloatImage rgb(3, emb.height, emb.width);
  const double cr = (emb.height - 1) / 2.0;
  const double cc = (emb.width - 1) / 2.0;
  const double reach = 0.5 * std::max(emb.height, emb.width);
  const std::size_t plane = emb.plane_size();
  for (std::size_t u = 0; u < plane; ++u) {
    const double dr = emb.values[u] - cr;
    const double dc = emb.values[plane + u] - cc;
    const auto hue = static_cast<float>((std::atan2(dr, dc) + std::numbers::pi) / (2.0 * std::numbers::pi));
    const auto sat = static_cast<float>(std::min(1.0, std::hypot(dr, dc) / reach));
    hsv_to_rgb(hue, sat, 1.0f, rgb.values[u], rgb.values[plane + u], rgb.values[2 * plane + u]);
  }
  return rgb;
}

std::vector<fs::path> cmd_inspect(const InspectOptions& opt) {
  opt.config.decoder.validate();
  const Checkpoint ck = load_model(opt.checkpoint, opt.iterations);
  const FloatImage img = load_input(opt.image, ck.config);
  const auto outputs = predict_each(ck.params, ck.config, img);
  make_dir(opt.out_dir);
  std::vector<fs::path> written;
  const std::size_t plane = img.plane_size();
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& p = outputs[i];
    const std::string prefix = "iter" + std::to_string(i + 1) + "_";
    const std::vector<float> fg(p.semantic_probs.values.begin() + static_cast<std::ptrdiff_t>(plane),
                                p.semantic_probs.values.begin() + static_cast<std::ptrdiff_t>(2 * plane));
    const auto mask = foreground_mask(p.semantic_probs, opt.config.decoder.fg_threshold);
    const VoteGrid votes = vote_histogram(p.embeddings, mask);
    const auto peak = std::max(1, *std::max_element(votes.counts.begin(), votes.counts.end()));
    std::vector<float> vote_img(plane);
    for (std::size_t u = 0; u < plane; ++u) vote_img[u] = static_cast<float>(votes.counts[u]) / static_cast<float>(peak);

    written.push_back(opt.out_dir / (prefix + "foreground.png"));
    save_image_png(written.back(), gray(fg, img.height, img.width));
    written.push_back(opt.out_dir / (prefix + "embedding.png"));
    save_image_png(written.back(), render_embeddings(p.embeddings));
    written.push_back(opt.out_dir / (prefix + "votes.png"));
    save_image_png(written.back(), gray(vote_img, img.height, img.width));
  }
  return written;
}

namespace {

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.decoder.window = DecoderConfig::window_for_margin(c.loss.margin);
    return c;
  }
  return load_run_config(path);
}

void setup_logging() {
  const char* level = std::getenv("RDCNET_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int run(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"rdcnet: recurrent dilated instance segmentation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset and its manifest");
  std::string gen_out;
  std::optional<int> n_train, n_val, n_test;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n-train", n_train);
  gen->add_option("--n-val", n_val);
  gen->add_option("--n-test", n_test);

  auto* tr = app.add_subcommand("train", "Train a model on a manifest");
  std::string tr_manifest, tr_out, tr_resume;
  tr->add_option("--manifest", tr_manifest)->required();
  tr->add_option("--out", tr_out, "Checkpoint/log directory (default trainer.checkpoint_dir)");
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");

  auto* pr = app.add_subcommand("predict", "Segment images with a trained checkpoint");
  std::string pr_ckpt, pr_out, pr_manifest, pr_split = "test";
  std::vector<std::string> pr_images;
  std::optional<int> pr_iters, pr_window;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--out", pr_out)->required();
  pr->add_option("--iterations", pr_iters, "Override the recurrent iteration count");
  pr->add_option("--window", pr_window, "Override the decoder window");
  pr->add_option("--manifest", pr_manifest, "Predict every image of a manifest split");
  pr->add_option("--split", pr_split);
  pr->add_option("images", pr_images, "Image files");

  auto* ev = app.add_subcommand("eval", "Score predictions against a manifest split");
  std::string ev_pred, ev_manifest, ev_split = "test", ev_out;
  double ev_iou = 0.5;
  ev->add_option("--pred", ev_pred, "Prediction directory")->required();
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--split", ev_split);
  ev->add_option("--iou", ev_iou);
  ev->add_option("--out", ev_out, "Report path (stdout if omitted)");

  auto* in = app.add_subcommand("inspect", "Write per-iteration foreground, embedding and vote panels");
  std::string in_ckpt, in_image, in_out;
  std::optional<int> in_iters;
  in->add_option("--checkpoint", in_ckpt)->required();
  in->add_option("--image", in_image)->required();
  in->add_option("--out", in_out)->required();
  in->add_option("--iterations", in_iters);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    const RunConfig cfg = config_or_default(config_path);
    if (gen->parsed()) {
      cmd_generate({cfg, gen_out, n_train, n_val, n_test});
    } else if (tr->parsed()) {
      TrainOptions opt{cfg, tr_manifest, std::nullopt, std::nullopt};
      if (!tr_out.empty()) opt.out_dir = tr_out;
      if (!tr_resume.empty()) opt.resume = tr_resume;
      cmd_train(opt);
    } else if (pr->parsed()) {
      PredictOptions opt{cfg, pr_ckpt, {}, pr_out, pr_iters, pr_window};
      if (!pr_manifest.empty()) {
        for (const auto& e : load_manifest(pr_manifest).split(parse_split(pr_split))) opt.images.push_back(e.image);
      }
      for (const auto& p : pr_images) opt.images.emplace_back(p);
      if (opt.images.empty()) throw MissingInputError("predict: no input images given");
      cmd_predict(opt);
    } else if (ev->parsed()) {
      cmd_eval({ev_pred, ev_manifest, parse_split(ev_split), ev_iou, ev_out});
    } else if (in->parsed()) {
      const auto files = cmd_inspect({cfg, in_ckpt, in_image, in_out, in_iters});
      std::cout << "wrote " << files.size() << " panels to " << in_out << "\n";
    }
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfigExit;
  } catch (const GenerationError& e) {
    spdlog::error("generate: {}", e.what());
    return kConfigExit;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kConfigExit;
  } catch (const IoError& e) {
    spdlog::error("io: {}", e.what());
    return kIoExit;
  } catch (const NumericError& e) {
    spdlog::error("numeric: {}", e.what());
    return kNumericExit;
  } catch (const MissingInputError& e) {
    spdlog::error("missing: {}", e.what());
    return kMissingExit;
  }
  return kOk;
}

}  // namespace rdc::cli
