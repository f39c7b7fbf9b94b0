#include "rdcnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rdcnet/errors.hpp"

namespace rdc {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* field) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + field + ": must lie in [0, 1]");
  };
  auto nonneg = [](double v, const char* field) {
    if (!(v >= 0.0)) throw ConfigError(std::string("augment.") + field + ": must be >= 0");
  };
  auto ordered = [](std::pair<double, double> r, const char* field) {
    if (!(r.first <= r.second)) throw ConfigError(std::string("augment.") + field + ": low must not exceed high");
  };
  prob(flip.p_flip, "flip.p_flip");
  nonneg(offset.sigma, "offset.sigma");
  nonneg(noise.sigma, "noise.sigma");
  nonneg(hsv.hue_delta, "hsv.hue_delta");
  ordered(hsv.sat_range, "hsv.sat_range");
  ordered(hsv.val_range, "hsv.val_range");
  prob(blur.p_active, "blur.p_active");
  ordered(blur.sigma_range, "blur.sigma_range");
  if (!(blur.sigma_range.first > 0.0)) throw ConfigError("augment.blur.sigma_range: must be positive");
  ordered(affine.zoom_range, "affine.zoom_range");
  if (!(affine.zoom_range.first > 0.0)) throw ConfigError("augment.affine.zoom_range: must be positive");
  nonneg(affine.shear_deg, "affine.shear_deg");
  nonneg(affine.rot_deg, "affine.rot_deg");
  nonneg(warp.amplitude, "warp.amplitude");
  nonneg(clip.sigma, "clip.sigma");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.flip.enabled = c.offset.enabled = c.noise.enabled = c.hsv.enabled = false;
  c.blur.enabled = c.affine.enabled = c.warp.enabled = c.clip.enabled = false;
  return c;
}

void flip_axis(Sample& sample, FlipAxis axis) {
  auto& img = sample.image;
  auto& lab = sample.labels;
  const int h = img.height;
  const int w = img.width;
  if (axis == FlipAxis::X) {
    for (int c = 0; c < img.channels; ++c) {
      for (int r = 0; r < h; ++r) {
        auto* row = &img.at(c, r, 0);
        std::reverse(row, row + w);
      }
    }
    for (int r = 0; r < h; ++r) std::reverse(&lab.at(r, 0), &lab.at(r, 0) + w);
  } else {
    for (int c = 0; c < img.channels; ++c) {
      for (int r = 0; r < h / 2; ++r) std::swap_ranges(&img.at(c, r, 0), &img.at(c, r, 0) + w, &img.at(c, h - 1 - r, 0));
    }
    for (int r = 0; r < h / 2; ++r) std::swap_ranges(&lab.at(r, 0), &lab.at(r, 0) + w, &lab.at(h - 1 - r, 0));
  }
}

void random_flip(Sample& sample, const std::vector<FlipAxis>& axes, double p, Rng& rng) {
  for (auto axis : axes) {
    if (rng.bernoulli(p)) flip_axis(sample, axis);
  }
}

void random_offset(FloatImage& image, double mu, double sigma, Rng& rng) {
  const auto shift = static_cast<float>(rng.normal(mu, sigma));
  if (shift == 0.0f) return;
  for (auto& v : image.values) v += shift;
}

void random_noise(FloatImage& image, double mu, double sigma, Rng& rng) {
  if (mu == 0.0 && sigma == 0.0) return;
  for (auto& v : image.values) v += static_cast<float>(rng.normal(mu, sigma));
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  float hh;
  if (mx == r) {
    hh = (g - b) / d;
  } else if (mx == g) {
    hh = 2.0f + (b - r) / d;
  } else {
    hh = 4.0f + (r - g) / d;
  }
  hh /= 6.0f;
  if (hh < 0.0f) hh += 1.0f;
  h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float sector = h * 6.0f;
  const int i = static_cast<int>(std::floor(sector)) % 6;
  const float f = sector - std::floor(sector);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

void hsv_shift_fixed(FloatImage& image, double hue_shift, double sat_factor, double val_factor) {
  if (image.channels != 3) throw UsageError("hsv_shift: expected a 3-channel RGB image");
  if (hue_shift == 0.0 && sat_factor == 1.0 && val_factor == 1.0) return;
  const std::size_t plane = image.plane_size();
  float* r = image.values.data();
  float* g = r + plane;
  float* b = g + plane;
  for (std::size_t u = 0; u < plane; ++u) {
    float h, s, v;
    rgb_to_hsv(r[u], g[u], b[u], h, s, v);
    h = static_cast<float>(h + hue_shift);
    h -= std::floor(h);
    s = std::clamp(static_cast<float>(s * sat_factor), 0.0f, 1.0f);
    v = std::clamp(static_cast<float>(v * val_factor), 0.0f, 1.0f);
    hsv_to_rgb(h, s, v, r[u], g[u], b[u]);
  }
}

void hsv_shift(FloatImage& image, double hue_delta, std::pair<double, double> sat_range,
               std::pair<double, double> val_range, Rng& rng) {
  if (image.channels != 3) throw UsageError("hsv_shift: expected a 3-channel RGB image");
  const double hue = rng.uniform(-hue_delta, hue_delta);
  const double sat = rng.uniform(sat_range.first, sat_range.second);
  const double val = rng.uniform(val_range.first, val_range.second);
  hsv_shift_fixed(image, hue, sat, val);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw UsageError("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace {

/// Convolves `n` samples spaced by `stride` with a centred kernel, renormalizing
/// over the taps that fall inside the signal.
template <class T>
void smooth_line(const T* src, T* dst, int n, std::ptrdiff_t stride, const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - radius);
    const int hi = std::min(n - 1, i + radius);
    double acc = 0.0, weight = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double k = kernel[static_cast<std::size_t>(j - i + radius)];
      acc += k * static_cast<double>(src[j * stride]);
      weight += k;
    }
    dst[i * stride] = static_cast<T>(acc / weight);
  }
}

template <class T>
void smooth_plane(T* plane, int h, int w, const std::vector<double>& kernel) {
  std::vector<T> tmp(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) smooth_line(plane + static_cast<std::ptrdiff_t>(r) * w, tmp.data() + static_cast<std::ptrdiff_t>(r) * w, w, 1, kernel);
  for (int c = 0; c < w; ++c) smooth_line(tmp.data() + c, plane + c, h, w, kernel);
}

float bilinear(const FloatImage& img, int channel, double r, double c) {
  const double r0f = std::floor(r);
  const double c0f = std::floor(c);
  const int r0 = static_cast<int>(r0f);
  const int c0 = static_cast<int>(c0f);
  const double fr = r - r0f;
  const double fc = c - c0f;
  auto px = [&](int rr, int cc) -> double {
    if (rr < 0 || rr >= img.height || cc < 0 || cc >= img.width) return 0.0;
    return img.at(channel, rr, cc);
  };
  double v = (1 - fr) * (1 - fc) * px(r0, c0);
  if (fc != 0.0) v += (1 - fr) * fc * px(r0, c0 + 1);
  if (fr != 0.0) v += fr * (1 - fc) * px(r0 + 1, c0);
  if (fr != 0.0 && fc != 0.0) v += fr * fc * px(r0 + 1, c0 + 1);
  return static_cast<float>(v);
}

std::uint16_t nearest_label(const LabelMap& lab, double r, double c) {
  const double rr = std::floor(r + 0.5);
  const double cc = std::floor(c + 0.5);
  if (rr < 0 || rr >= lab.height || cc < 0 || cc >= lab.width) return kUndefinedLabel;
  return lab.at(static_cast<int>(rr), static_cast<int>(cc));
}

/// Resamples image and labels at source positions given per output pixel.
template <class SourceFn>
void resample(Sample& sample, SourceFn source) {
  const FloatImage src_img = sample.image;
  const LabelMap src_lab = sample.labels;
  const int h = src_img.height;
  const int w = src_img.width;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto [sr, sc] = source(r, c);
      for (int ch = 0; ch < src_img.channels; ++ch) sample.image.at(ch, r, c) = bilinear(src_img, ch, sr, sc);
      sample.labels.at(r, c) = nearest_label(src_lab, sr, sc);
    }
  }
}

}  // namespace

void gaussian_blur_fixed(FloatImage& image, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  for (int c = 0; c < image.channels; ++c) {
    smooth_plane(image.values.data() + static_cast<std::size_t>(c) * image.plane_size(), image.height, image.width,
                 kernel);
  }
}

void gaussian_blur(FloatImage& image, double p_active, std::pair<double, double> sigma_range, Rng& rng) {
  if (!rng.bernoulli(p_active)) return;
  gaussian_blur_fixed(image, rng.uniform(sigma_range.first, sigma_range.second));
}

Affine2 make_affine(double zoom, double shear_deg, double rot_deg) {
  const double deg = std::numbers::pi / 180.0;
  const double cr = std::cos(rot_deg * deg);
  const double sr = std::sin(rot_deg * deg);
  const double sh = std::tan(shear_deg * deg);
  // rotation * shear * zoom, acting on (row, col) column vectors.
  const double s00 = zoom, s01 = sh * zoom, s10 = 0.0, s11 = zoom;
  return {cr * s00 - sr * s10, cr * s01 - sr * s11, sr * s00 + cr * s10, sr * s01 + cr * s11};
}

void apply_affine(Sample& sample, const Affine2& m) {
  const double det = m.a00 * m.a11 - m.a01 * m.a10;
  if (std::abs(det) < 1e-12) throw UsageError("apply_affine: singular transform");
  if (m.a00 == 1 && m.a01 == 0 && m.a10 == 0 && m.a11 == 1) return;
  const double i00 = m.a11 / det, i01 = -m.a01 / det, i10 = -m.a10 / det, i11 = m.a00 / det;
  const double cr = (sample.image.height - 1) / 2.0;
  const double cc = (sample.image.width - 1) / 2.0;
  resample(sample, [&](int r, int c) {
    const double dr = r - cr;
    const double dc = c - cc;
    return std::pair{cr + i00 * dr + i01 * dc, cc + i10 * dr + i11 * dc};
  });
}

void random_affine(Sample& sample, std::pair<double, double> zoom_range, double shear_deg, double rot_deg, Rng& rng) {
  const double zoom = rng.uniform(zoom_range.first, zoom_range.second);
  const double shear = rng.uniform(-shear_deg, shear_deg);
  const double rot = rng.uniform(-rot_deg, rot_deg);
  apply_affine(sample, make_affine(zoom, shear, rot));
}

DisplacementField random_warp_field(int height, int width, double amplitude, Rng& rng) {
  DisplacementField f{height, width, {}, {}};
  const std::size_t n = static_cast<std::size_t>(height) * width;
  f.d_row.assign(n, 0.0);
  f.d_col.assign(n, 0.0);
  if (amplitude <= 0.0) return f;
  for (auto& v : f.d_row) v = rng.uniform(-amplitude, amplitude);
  for (auto& v : f.d_col) v = rng.uniform(-amplitude, amplitude);
  const auto kernel = gaussian_kernel(2.0 * amplitude);
  smooth_plane(f.d_row.data(), height, width, kernel);
  smooth_plane(f.d_col.data(), height, width, kernel);
  return f;
}

void apply_warp(Sample& sample, const DisplacementField& field) {
  if (field.height != sample.image.height || field.width != sample.image.width) {
    throw UsageError("apply_warp: field extent mismatch");
  }
  resample(sample, [&](int r, int c) {
    const auto u = static_cast<std::size_t>(r) * field.width + c;
    return std::pair{r + field.d_row[u], c + field.d_col[u]};
  });
}

void random_warp(Sample& sample, double amplitude, Rng& rng) {
  if (amplitude <= 0.0) return;
  apply_warp(sample, random_warp_field(sample.image.height, sample.image.width, amplitude, rng));
}

void random_clip(FloatImage& image, double mu_min, double mu_max, double sigma, Rng& rng) {
  auto lo = static_cast<float>(rng.normal(mu_min, sigma));
  auto hi = static_cast<float>(rng.normal(mu_max, sigma));
  if (lo > hi) std::swap(lo, hi);
  for (auto& v : image.values) v = std::clamp(v, lo, hi);
}

void augment(Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.flip.enabled) random_flip(sample, cfg.flip.axes, cfg.flip.p_flip, rng);
  if (cfg.offset.enabled) random_offset(sample.image, cfg.offset.mu, cfg.offset.sigma, rng);
  if (cfg.noise.enabled) random_noise(sample.image, cfg.noise.mu, cfg.noise.sigma, rng);
  if (cfg.hsv.enabled) hsv_shift(sample.image, cfg.hsv.hue_delta, cfg.hsv.sat_range, cfg.hsv.val_range, rng);
  if (cfg.blur.enabled) gaussian_blur(sample.image, cfg.blur.p_active, cfg.blur.sigma_range, rng);
  if (cfg.affine.enabled) {
    random_affine(sample, cfg.affine.zoom_range, cfg.affine.shear_deg, cfg.affine.rot_deg, rng);
  }
  if (cfg.warp.enabled) random_warp(sample, cfg.warp.amplitude, rng);
  if (cfg.clip.enabled) random_clip(sample.image, cfg.clip.mu_min, cfg.clip.mu_max, cfg.clip.sigma, rng);
}

}  // namespace rdc
