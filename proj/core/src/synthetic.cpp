#include "rdcnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rdcnet/augment.hpp"
#include "rdcnet/errors.hpp"

namespace rdc {

void SyntheticConfig::validate() const {
  if (size < 8) throw ConfigError("data.size: must be >= 8");
  if (min_instances < 0) throw ConfigError("data.min_instances: must be >= 0");
  if (max_instances < min_instances) throw ConfigError("data.max_instances: must be >= data.min_instances");
  if (max_instances >= kUndefinedLabel) throw ConfigError("data.max_instances: too many for 16-bit labels");
  if (!(radius_range.first > 0.0 && radius_range.first <= radius_range.second)) {
    throw ConfigError("data.radius_range: need 0 < low <= high");
  }
  if (2.0 * radius_range.second + 2.0 > size) throw ConfigError("data.radius_range: ellipses do not fit data.size");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) {
    throw ConfigError("data.overlap_fraction: must lie in [0, 1]");
  }
  if (!(noise_level >= 0.0)) throw ConfigError("data.noise_level: must be >= 0");
}

namespace {

constexpr int kPlacementTries = 200;
constexpr int kSampleTries = 20;

struct Ellipse {
  double row = 0, col = 0, a = 1, b = 1, angle = 0;
  float color[3] = {0, 0, 0};
  std::vector<std::size_t> pixels;  // raster indices covered
};

void rasterize(Ellipse& e, int size) {
  const double ca = std::cos(e.angle);
  const double sa = std::sin(e.angle);
  const double reach = std::max(e.a, e.b);
  const int r0 = std::max(0, static_cast<int>(std::floor(e.row - reach)));
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(e.row + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(e.col - reach)));
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(e.col + reach)));
  e.pixels.clear();
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dr = r - e.row;
      const double dc = c - e.col;
      const double u = (dr * ca + dc * sa) / e.a;
      const double v = (-dr * sa + dc * ca) / e.b;
      if (u * u + v * v <= 1.0) e.pixels.push_back(static_cast<std::size_t>(r) * size + c);
    }
  }
}

std::size_t overlap(const Ellipse& x, const Ellipse& y) {
  std::size_t n = 0;
  auto i = x.pixels.begin();
  auto j = y.pixels.begin();
  while (i != x.pixels.end() && j != y.pixels.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n, ++i, ++j;
    }
  }
  return n;
}

/// Visible area of every placed ellipse once all later ones are painted.
bool visibility_ok(const std::vector<Ellipse>& placed, int size) {
  std::vector<int> owner(static_cast<std::size_t>(size) * size, -1);
  for (std::size_t k = 0; k < placed.size(); ++k) {
    for (auto p : placed[k].pixels) owner[p] = static_cast<int>(k);
  }
  std::vector<std::size_t> visible(placed.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++visible[static_cast<std::size_t>(o)];
  }
  for (std::size_t k = 0; k < placed.size(); ++k) {
    if (2 * visible[k] < placed[k].pixels.size() || visible[k] == 0) return false;
  }
  return true;
}

bool try_place(std::vector<Ellipse>& placed, const SyntheticConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
    Ellipse e;
    e.a = rng.uniform(cfg.radius_range.first, cfg.radius_range.second);
    e.b = rng.uniform(cfg.radius_range.first, cfg.radius_range.second);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const double reach = std::max(e.a, e.b);
    e.row = rng.uniform(reach, cfg.size - 1 - reach);
    e.col = rng.uniform(reach, cfg.size - 1 - reach);
    for (auto& ch : e.color) ch = static_cast<float>(rng.uniform(0.35, 1.0));
    rasterize(e, cfg.size);
    if (e.pixels.empty()) continue;
    bool ok = true;
    for (const auto& other : placed) {
      const auto smaller = std::min(e.pixels.size(), other.pixels.size());
      if (static_cast<double>(overlap(e, other)) > cfg.overlap_fraction * static_cast<double>(smaller)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    placed.push_back(std::move(e));
    if (visibility_ok(placed, cfg.size)) return true;
    placed.pop_back();
  }
  return false;
}

void paint_background(FloatImage& img, Rng& rng) {
  FloatImage texture(1, img.height, img.width);
  for (auto& v : texture.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  gaussian_blur_fixed(texture, 2.0);
  float base[3];
  for (auto& b : base) b = static_cast<float>(rng.uniform(0.05, 0.3));
  const double amp = rng.uniform(0.1, 0.3);
  const std::size_t plane = img.plane_size();
  for (int c = 0; c < 3; ++c) {
    for (std::size_t u = 0; u < plane; ++u) {
      img.values[c * plane + u] = base[c] + static_cast<float>(amp) * texture.values[u];
    }
  }
}

}  // namespace

Sample generate_sample(const SyntheticConfig& cfg, Rng& rng) {
  cfg.validate();
  const int k = static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
  std::vector<Ellipse> placed;
  bool done = false;
  for (int attempt = 0; attempt < kSampleTries && !done; ++attempt) {
    placed.clear();
    done = true;
    for (int i = 0; i < k; ++i) {
      if (!try_place(placed, cfg, rng)) {
        done = false;
        break;
      }
    }
  }
  if (!done) {
    throw GenerationError("cannot pack " + std::to_string(k) + " ellipses into " + std::to_string(cfg.size) + "x" +
                          std::to_string(cfg.size) + " with overlap_fraction " + std::to_string(cfg.overlap_fraction));
  }

  Sample s{FloatImage(3, cfg.size, cfg.size), LabelMap(cfg.size, cfg.size)};
  paint_background(s.image, rng);
  const std::size_t plane = s.image.plane_size();
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto& e = placed[i];
    const double ca = std::cos(e.angle);
    const double sa = std::sin(e.angle);
    for (auto p : e.pixels) {
      const double dr = static_cast<double>(p / cfg.size) - e.row;
      const double dc = static_cast<double>(p % cfg.size) - e.col;
      const double u = (dr * ca + dc * sa) / e.a;
      const double v = (-dr * sa + dc * ca) / e.b;
      const auto shade = static_cast<float>(1.0 - 0.35 * (u * u + v * v));
      for (int c = 0; c < 3; ++c) s.image.values[c * plane + p] = e.color[c] * shade;
      s.labels.ids[p] = static_cast<std::uint16_t>(i + 1);
    }
  }
  for (auto& v : s.image.values) {
    if (cfg.noise_level > 0.0) v += static_cast<float>(rng.normal(0.0, cfg.noise_level));
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return s;
}

std::vector<Sample> generate_synthetic(int n, const SyntheticConfig& cfg, const Rng& rng) {
  cfg.validate();
  if (n < 0) throw ConfigError("data: sample count must be >= 0");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng local = rng.derive(static_cast<std::uint64_t>(i));
    out.push_back(generate_sample(cfg, local));
  }
  return out;
}

}  // namespace rdc
