#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "rdcnet/augment.hpp"
#include "rdcnet/errors.hpp"

using namespace rdc;

namespace {

Sample random_sample(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Sample s{FloatImage(c, h, w), testing::random_label_map(h, w, 5, rng, 0.02)};
  for (auto& v : s.image.values) v = static_cast<float>(rng.uniform());
  return s;
}

double max_abs_diff(const FloatImage& a, const FloatImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(double(a.values[i]) - b.values[i]));
  return m;
}

bool labels_subset(const LabelMap& out, const LabelMap& in) {
  std::set<std::uint16_t> allowed(in.ids.begin(), in.ids.end());
  allowed.insert(kUndefinedLabel);
  return std::all_of(out.ids.begin(), out.ids.end(), [&](auto v) { return allowed.count(v) > 0; });
}

}  // namespace

TEST_CASE("config validation") {
  AugmentConfig c;
  c.validate();
  c.flip.p_flip = 1.5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("augment.flip"), ConfigError);
  c = AugmentConfig{};
  c.hsv.sat_range = {1.2, 0.8};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AugmentConfig{};
  c.warp.amplitude = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("flips") {
  const Sample s = random_sample(3, 5, 7, 1);
  Sample t = s;
  Rng rng(0);
  random_flip(t, {FlipAxis::X, FlipAxis::Y}, 0.0, rng);
  CHECK(t.image == s.image);
  CHECK(t.labels == s.labels);
  for (auto axis : {FlipAxis::X, FlipAxis::Y}) {
    Sample f = s;
    flip_axis(f, axis);
    CHECK(f.labels != s.labels);
    if (axis == FlipAxis::X) {
      CHECK(f.labels.at(1, 0) == s.labels.at(1, 6));
      CHECK(f.image.at(2, 3, 1) == s.image.at(2, 3, 5));
    } else {
      CHECK(f.labels.at(0, 2) == s.labels.at(4, 2));
      CHECK(f.image.at(1, 1, 2) == s.image.at(1, 3, 2));
    }
    flip_axis(f, axis);
    CHECK(f.image == s.image);
    CHECK(f.labels == s.labels);
  }
}

TEST_CASE("offset, noise, clip") {
  const Sample s = random_sample(3, 6, 6, 2);
  Rng rng(0);
  FloatImage a = s.image;
  random_offset(a, 0.0, 0.0, rng);
  random_noise(a, 0.0, 0.0, rng);
  CHECK(a == s.image);
  random_offset(a, 0.25, 0.0, rng);
  CHECK(a.values[3] == doctest::Approx(s.image.values[3] + 0.25));

  FloatImage inside = s.image;
  random_clip(inside, -1.0, 1.0, 0.0, rng);
  CHECK(inside == s.image);
  for (int trial = 0; trial < 20; ++trial) {
    FloatImage wide = s.image;
    for (auto& v : wide.values) v = v * 6.0f - 3.0f;
    Rng draw(static_cast<std::uint64_t>(trial));
    Rng replay = draw;
    random_clip(wide, -1.0, 1.0, 0.3, draw);
    auto lo = static_cast<float>(replay.normal(-1.0, 0.3));
    auto hi = static_cast<float>(replay.normal(1.0, 0.3));
    if (lo > hi) std::swap(lo, hi);
    for (float v : wide.values) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("hsv") {
  float h, s, v, r, g, b;
  rgb_to_hsv(1.0f, 0.0f, 0.0f, h, s, v);
  CHECK(h == doctest::Approx(0.0));
  hsv_to_rgb(0.4f, 0.5f, 0.8f, r, g, b);
  rgb_to_hsv(r, g, b, h, s, v);
  CHECK(h == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(s == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(v == doctest::Approx(0.8).epsilon(1e-5));

  const Sample sample = random_sample(3, 8, 8, 3);
  FloatImage same = sample.image;
  Rng rng(1);
  hsv_shift(same, 0.0, {1.0, 1.0}, {1.0, 1.0}, rng);
  CHECK(max_abs_diff(same, sample.image) <= 1e-6);

  FloatImage red(3, 1, 1);
  red.values = {1.0f, 0.0f, 0.0f};
  hsv_shift_fixed(red, 1.0 / 3.0, 1.0, 1.0);
  CHECK(red.values[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(red.values[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(red.values[2] == doctest::Approx(0.0).epsilon(1e-6));

  FloatImage gray(1, 2, 2);
  CHECK_THROWS_AS(hsv_shift(gray, 0.1, {1, 1}, {1, 1}, rng), UsageError);
}

TEST_CASE("blur") {
  for (double sigma : {0.5, 1.3, 3.0}) {
    const auto k = gaussian_kernel(sigma);
    CHECK(std::accumulate(k.begin(), k.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
  }
  FloatImage constant(3, 9, 9, 0.37f);
  gaussian_blur_fixed(constant, 2.0);
  for (float v : constant.values) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));
  const Sample s = random_sample(3, 6, 6, 4);
  FloatImage untouched = s.image;
  Rng rng(0);
  gaussian_blur(untouched, 0.0, {0.5, 3.0}, rng);
  CHECK(untouched == s.image);
}

TEST_CASE("affine") {
  const Sample s = random_sample(3, 9, 9, 5);
  Sample same = s;
  Rng rng(0);
  random_affine(same, {1.0, 1.0}, 0.0, 0.0, rng);
  CHECK(same.image == s.image);
  CHECK(same.labels == s.labels);

  Sample rot = s;
  apply_affine(rot, make_affine(1.0, 0.0, 90.0));
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      CHECK(rot.labels.at(r, c) == s.labels.at(c, 8 - r));
      CHECK(rot.image.at(0, r, c) == doctest::Approx(s.image.at(0, c, 8 - r)).epsilon(1e-5));
    }
  }

  Sample zoomed = s;
  apply_affine(zoomed, make_affine(0.5, 0.0, 0.0));
  CHECK(labels_subset(zoomed.labels, s.labels));
  CHECK(zoomed.labels.at(0, 0) == kUndefinedLabel);
  CHECK(zoomed.image.at(0, 0, 0) == 0.0f);
}

TEST_CASE("warp") {
  const Sample s = random_sample(3, 16, 16, 6);
  Sample same = s;
  Rng rng(0);
  random_warp(same, 0.0, rng);
  CHECK(same.image == s.image);
  CHECK(same.labels == s.labels);
  for (double a : {0.5, 3.0, 20.0}) {
    Rng r(7);
    const auto f = random_warp_field(16, 16, a, r);
    for (std::size_t u = 0; u < f.d_row.size(); ++u) {
      CHECK(std::abs(f.d_row[u]) <= a);
      CHECK(std::abs(f.d_col[u]) <= a);
    }
  }
  DisplacementField shift{16, 16, std::vector<double>(256, 1.0), std::vector<double>(256, 0.0)};
  Sample moved = s;
  apply_warp(moved, shift);
  CHECK(moved.labels.at(3, 4) == s.labels.at(4, 4));
  CHECK(moved.labels.at(15, 4) == kUndefinedLabel);
  CHECK(moved.image.at(1, 3, 4) == doctest::Approx(s.image.at(1, 4, 4)));
}

TEST_CASE("pipeline") {
  const Sample s = random_sample(3, 24, 24, 8);
  Sample off = s;
  Rng rng(0);
  augment(off, AugmentConfig::none(), rng);
  CHECK(off.image == s.image);
  CHECK(off.labels == s.labels);

  AugmentConfig cfg;
  cfg.noise.enabled = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Sample a = s, b = s;
    Rng ra(seed), rb(seed);
    augment(a, cfg, ra);
    augment(b, cfg, rb);
    CHECK(a.image == b.image);
    CHECK(a.labels == b.labels);
    CHECK(labels_subset(a.labels, s.labels));
  }

  AugmentConfig intensity = AugmentConfig::none();
  intensity.offset.enabled = intensity.noise.enabled = intensity.hsv.enabled = true;
  intensity.blur.enabled = intensity.clip.enabled = true;
  intensity.blur.p_active = 1.0;
  Sample i = s;
  augment(i, intensity, rng);
  CHECK(i.labels == s.labels);
  CHECK(i.image != s.image);
}
