#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "rdcnet/checkpoint.hpp"
#include "rdcnet/errors.hpp"
#include "rdcnet/image_io.hpp"
#include "rdcnet/manifest.hpp"
#include "rdcnet/synthetic.hpp"

using namespace rdc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rdcnet_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RDCNetConfig tiny_model() {
  RDCNetConfig c;
  c.groups = 2;
  c.group_channels = 4;
  c.dilation_rates = {1, 2};
  c.iterations = 2;
  c.scale = 2;
  c.stem_channels = 4;
  return c;
}

}  // namespace

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.min_instances = cfg.max_instances = 1;
  const auto one = generate_synthetic(3, cfg, Rng(1));
  for (const auto& s : one) CHECK(s.labels.instance_ids().size() == 1);

  cfg = SyntheticConfig{};
  cfg.overlap_fraction = 0.0;
  const auto disjoint = generate_synthetic(20, cfg, Rng(2));
  for (const auto& s : disjoint) {
    const auto ids = s.labels.instance_ids();
    CHECK(ids.size() >= 3);
    CHECK(ids.front() == 1);
    CHECK(s.image.channels == 3);
    for (float v : s.image.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  const auto a = generate_synthetic(4, SyntheticConfig{}, Rng(9));
  const auto b = generate_synthetic(4, SyntheticConfig{}, Rng(9));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].labels == b[i].labels);
  }
}

TEST_CASE("synthetic instance count is uniform on [min, max]") {
  SyntheticConfig cfg;
  cfg.size = 48;
  cfg.radius_range = {3.0, 6.0};
  const auto samples = generate_synthetic(500, cfg, Rng(11));
  double total = 0.0;
  for (const auto& s : samples) total += static_cast<double>(s.labels.instance_ids().size());
  // Occlusion never removes an instance entirely (>= half of each stays visible).
  const double mean = total / 500.0;
  CHECK(std::abs(mean - 5.5) <= 0.05 * 5.5);
}

TEST_CASE("synthetic config errors") {
  SyntheticConfig cfg;
  cfg.min_instances = 5;
  cfg.max_instances = 2;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("data."), ConfigError);
  cfg = SyntheticConfig{};
  cfg.radius_range = {20.0, 40.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SyntheticConfig{};
  cfg.size = 24;
  cfg.radius_range = {8.0, 10.0};
  cfg.min_instances = cfg.max_instances = 40;
  cfg.overlap_fraction = 0.0;
  Rng rng(0);
  CHECK_THROWS_AS(generate_sample(cfg, rng), GenerationError);
}

TEST_CASE("png round trips") {
  TempDir dir("png");
  Rng rng(4);
  Sample s{FloatImage(3, 13, 17), testing::random_label_map(13, 17, 6, rng, 0.1)};
  for (auto& v : s.image.values) v = static_cast<float>(rng.uniform());
  s.labels.ids[0] = kUndefinedLabel;
  s.labels.ids[1] = 40000;
  save_sample(dir.path / "img.png", dir.path / "lab.png", s);
  const Sample back = load_sample(dir.path / "img.png", dir.path / "lab.png");
  CHECK(back.labels == s.labels);
  CHECK(back.image.channels == 3);
  double worst = 0.0;
  for (std::size_t i = 0; i < s.image.values.size(); ++i) {
    worst = std::max(worst, std::abs(double(back.image.values[i]) - s.image.values[i]));
  }
  CHECK(worst <= 1.0 / 255.0);

  FloatImage gray(1, 4, 5, 0.5f);
  save_image_png(dir.path / "gray.png", gray);
  CHECK(load_image_png(dir.path / "gray.png").channels == 1);

  CHECK_THROWS_WITH_AS(load_image_png(dir.path / "missing.png"), doctest::Contains("missing.png"), IoError);
  std::ofstream(dir.path / "junk.png") << "not a png";
  CHECK_THROWS_WITH_AS(load_labels_png(dir.path / "junk.png"), doctest::Contains("junk.png"), IoError);
  save_labels_png(dir.path / "small.png", LabelMap(4, 4));
  CHECK_THROWS_AS(load_sample(dir.path / "img.png", dir.path / "small.png"), IoError);
}

TEST_CASE("checkpoint round trip and errors") {
  TempDir dir("ckpt");
  const RDCNetConfig cfg = tiny_model();
  Rng rng(3);
  ParamGroup params = build(cfg, rng);
  for (auto& e : params.entries()) {
    dispatch(e.value.dtype(), [&]<class T>(T) {
      auto m = e.first_moment.template mutable_data<T>();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = T(0.001 * double(i));
    });
  }
  params.set_step(17);
  const fs::path p1 = dir.path / "a.ckpt", p2 = dir.path / "b.ckpt";
  save_checkpoint(p1, cfg, params);
  const Checkpoint ck = load_checkpoint(p1);
  CHECK(ck.config == cfg);
  CHECK(ck.has_optimizer);
  CHECK(ck.params.step() == 17);
  save_checkpoint(p2, ck.config, ck.params);
  CHECK(read_bytes(p1) == read_bytes(p2));
  const auto bytes = read_bytes(p1);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RDCN");

  Rng other(99);
  ParamGroup fresh = build(cfg, other);
  load_checkpoint_into(p1, fresh);
  CHECK(fresh.step() == 17);
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    CHECK(fresh.entries()[i].value.to_vector() == params.entries()[i].value.to_vector());
    CHECK(fresh.entries()[i].first_moment.to_vector() == params.entries()[i].first_moment.to_vector());
  }

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(parse_checkpoint(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(parse_checkpoint(bad_version), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(trailing), FormatError);

  RDCNetConfig wider = cfg;
  wider.group_channels = 6;
  Rng r2(0);
  ParamGroup mismatched = build(wider, r2);
  const auto before = mismatched.entries()[0].value.to_vector();
  CHECK_THROWS_WITH_AS(load_checkpoint_into(p1, mismatched), doctest::Contains("'mix.weight'"), ConfigError);
  CHECK(mismatched.entries()[0].value.to_vector() == before);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "nope.ckpt"), IoError);
}

TEST_CASE("checkpoint size grows only by the projection for extra dilation rates") {
  RDCNetConfig one = tiny_model(), three = tiny_model();
  one.dilation_rates = {1};
  three.dilation_rates = {1, 2, 4};
  Rng a(0), b(0);
  const ParamGroup p1 = build(one, a), p3 = build(three, b);
  const auto delta = p3.at(param_names::kProjWeight).numel() - p1.at(param_names::kProjWeight).numel();
  const auto s1 = serialize_checkpoint(one, p1, false).size();
  const auto s3 = serialize_checkpoint(three, p3, false).size();
  CHECK(static_cast<std::int64_t>(s3 - s1) == delta * 4);
  const auto f1 = serialize_checkpoint(one, p1, true).size();
  const auto f3 = serialize_checkpoint(three, p3, true).size();
  CHECK(static_cast<std::int64_t>(f3 - f1) == delta * 12);
}

TEST_CASE("manifest") {
  TempDir dir("manifest");
  fs::create_directories(dir.path / "images");
  Manifest m;
  m.seed = 42;
  for (auto [split, name] : {std::pair{Split::Train, "a"}, {Split::Val, "b"}, {Split::Test, "c"}, {Split::Train, "d"}}) {
    const fs::path img = dir.path / "images" / (std::string(name) + ".png");
    const fs::path lab = dir.path / "images" / (std::string(name) + "_l.png");
    std::ofstream(img) << "x";
    std::ofstream(lab) << "x";
    m.entries.push_back({split, img, lab});
  }
  save_manifest(dir.path / "manifest.tsv", m);
  const Manifest back = load_manifest(dir.path / "manifest.tsv");
  CHECK(back.seed == 42);
  REQUIRE(back.entries.size() == 4);
  CHECK(fs::equivalent(back.entries[3].image, m.entries[3].image));
  CHECK(back.split(Split::Train).size() == 2);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (auto s : {Split::Train, Split::Val, Split::Test}) {
    for (const auto& e : back.split(s)) seen.insert(e.image.string());
    total += back.split(s).size();
  }
  CHECK(total == back.entries.size());
  CHECK(seen.size() == total);

  std::ofstream(dir.path / "bad.tsv") << "# seed 1\ntrain\ta.png\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir.path / "bad.tsv"), doctest::Contains("bad.tsv:2"), FormatError);
  std::ofstream(dir.path / "tag.tsv") << "# seed 1\nholdout\ta.png\tb.png\n";
  CHECK_THROWS_AS(load_manifest(dir.path / "tag.tsv", false), FormatError);
  std::ofstream(dir.path / "gone.tsv") << "# seed 1\ntrain\tgone.png\tgone_l.png\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir.path / "gone.tsv"), doctest::Contains("gone.png"), IoError);
  CHECK(parse_split("val") == Split::Val);
  CHECK(std::string(split_name(Split::Test)) == "test");
}
