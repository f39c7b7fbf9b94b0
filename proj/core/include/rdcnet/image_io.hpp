#pragma once

#include <filesystem>

#include "rdcnet/image.hpp"

namespace rdc {

/// Writes an RGB or grayscale image as 8-bit PNG; values are clamped to [0,1]
/// and rounded to the nearest of 256 levels.
void save_image_png(const std::filesystem::path& path, const FloatImage& image);

/// Reads an 8- or 16-bit PNG into [0,1] floats. Gray, gray+alpha, RGB and RGBA
/// are accepted; alpha is dropped.
FloatImage load_image_png(const std::filesystem::path& path);

/// Writes labels as a 16-bit grayscale PNG.
void save_labels_png(const std::filesystem::path& path, const LabelMap& labels);

/// Reads a single-channel 8- or 16-bit PNG as instance ids.
LabelMap load_labels_png(const std::filesystem::path& path);

void save_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                 const Sample& sample);
/// Throws IoError if image and label extents differ.
Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

}  // namespace rdc
