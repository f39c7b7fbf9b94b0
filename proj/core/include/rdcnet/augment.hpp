#pragma once

#include <utility>
#include <vector>

#include "rdcnet/image.hpp"
#include "rdcnet/rng.hpp"

namespace rdc {

enum class FlipAxis { X, Y };

/// Training augmentations. Defaults follow the leaf-segmentation column of the
/// reference augmentation table; per-pixel noise is off by default.
struct AugmentConfig {
  struct Flip {
    bool enabled = true;
    double p_flip = 0.5;
    std::vector<FlipAxis> axes{FlipAxis::X, FlipAxis::Y};
    bool operator==(const Flip&) const = default;
  } flip;
  struct Offset {
    bool enabled = true;
    double mu = 0.0;
    double sigma = 0.2;
    bool operator==(const Offset&) const = default;
  } offset;
  struct Noise {
    bool enabled = false;
    double mu = 0.05;
    double sigma = 0.3;
    bool operator==(const Noise&) const = default;
  } noise;
  struct Hsv {
    bool enabled = true;
    double hue_delta = 0.3;
    std::pair<double, double> sat_range{0.8, 1.2};
    std::pair<double, double> val_range{0.8, 1.2};
    bool operator==(const Hsv&) const = default;
  } hsv;
  struct Blur {
    bool enabled = true;
    double p_active = 0.5;
    std::pair<double, double> sigma_range{0.5, 3.0};
    bool operator==(const Blur&) const = default;
  } blur;
  struct Affine {
    bool enabled = true;
    std::pair<double, double> zoom_range{0.9, 1.1};
    double shear_deg = 5.0;
    double rot_deg = 10.0;
    bool operator==(const Affine&) const = default;
  } affine;
  struct Warp {
    bool enabled = true;
    double amplitude = 20.0;
    bool operator==(const Warp&) const = default;
  } warp;
  struct Clip {
    bool enabled = true;
    double mu_min = -1.0;
    double mu_max = 1.0;
    double sigma = 0.3;
    bool operator==(const Clip&) const = default;
  } clip;

  void validate() const;
  /// Every augmentation disabled.
  static AugmentConfig none();

  bool operator==(const AugmentConfig&) const = default;
};

/// Flips image and labels together along one axis (X mirrors columns, Y rows).
void flip_axis(Sample& sample, FlipAxis axis);
void random_flip(Sample& sample, const std::vector<FlipAxis>& axes, double p, Rng& rng);
void random_offset(FloatImage& image, double mu, double sigma, Rng& rng);
void random_noise(FloatImage& image, double mu, double sigma, Rng& rng);

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);
/// Shifts hue (mod 1) by U(-hue_delta, hue_delta) and scales S and V by
/// uniform draws from their ranges. Requires a 3-channel image.
void hsv_shift(FloatImage& image, double hue_delta, std::pair<double, double> sat_range,
               std::pair<double, double> val_range, Rng& rng);
void hsv_shift_fixed(FloatImage& image, double hue_shift, double sat_factor, double val_factor);

/// Normalized Gaussian kernel truncated at +-3 sigma.
std::vector<double> gaussian_kernel(double sigma);
/// Separable blur of every channel; borders renormalize the kernel.
void gaussian_blur_fixed(FloatImage& image, double sigma);
void gaussian_blur(FloatImage& image, double p_active, std::pair<double, double> sigma_range, Rng& rng);

/// 2x2 linear part of an affine map about the image centre.
struct Affine2 {
  double a00 = 1, a01 = 0, a10 = 0, a11 = 1;
};

/// Affine (zoom * shear * rotation) about the image centre. Image is resampled
/// bilinearly with 0 fill; labels by nearest neighbour with kUndefinedLabel fill.
Affine2 make_affine(double zoom, double shear_deg, double rot_deg);
void apply_affine(Sample& sample, const Affine2& forward);
void random_affine(Sample& sample, std::pair<double, double> zoom_range, double shear_deg, double rot_deg, Rng& rng);

/// Dense displacement field, two planes [d_row, d_col] of height*width each.
struct DisplacementField {
  int height = 0;
  int width = 0;
  std::vector<double> d_row;
  std::vector<double> d_col;
};

/// Uniform [-A, A] offsets per pixel, each component smoothed by a Gaussian
/// with sigma = 2A.
DisplacementField random_warp_field(int height, int width, double amplitude, Rng& rng);
void apply_warp(Sample& sample, const DisplacementField& field);
void random_warp(Sample& sample, double amplitude, Rng& rng);

/// Clamps to [lo, hi] with lo ~ N(mu_min, sigma), hi ~ N(mu_max, sigma) (swapped if lo > hi).
void random_clip(FloatImage& image, double mu_min, double mu_max, double sigma, Rng& rng);

/// flip -> offset -> noise -> hsv -> blur -> affine -> warp -> clip, each if enabled.
void augment(Sample& sample, const AugmentConfig& cfg, Rng& rng);

}  // namespace rdc
