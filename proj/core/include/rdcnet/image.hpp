#pragma once

#include <cstdint>
#include <vector>

namespace rdc {

/// Label value for annotated-but-ambiguous pixels; excluded from loss and metrics.
inline constexpr std::uint16_t kUndefinedLabel = 65535;
inline constexpr std::uint16_t kBackgroundLabel = 0;

/// Per-pixel instance ids: 0 background, 1..65534 instances, 65535 undefined.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint16_t fill = kBackgroundLabel)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::uint16_t& at(int r, int c) { return ids[static_cast<std::size_t>(r) * width + c]; }
  std::uint16_t at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return ids.size(); }

  /// Sorted distinct instance ids (no background, no undefined).
  std::vector<std::uint16_t> instance_ids() const;

  bool operator==(const LabelMap&) const = default;
};

/// Planar float image [channels, height, width].
struct FloatImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FloatImage() = default;
  FloatImage(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        values(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  float& at(int c, int r, int col) { return values[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  float at(int c, int r, int col) const { return values[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  bool operator==(const FloatImage&) const = default;
};

struct Sample {
  FloatImage image;
  LabelMap labels;
};

}  // namespace rdc
