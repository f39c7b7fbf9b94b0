#include "rdcnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "rdcnet/errors.hpp"

namespace rdc {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(path.string() + ": cannot open");
  return f;
}

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

/// Raw decoded PNG: interleaved samples, 8 or 16 bits per sample.
struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

void write_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
               const std::vector<std::uint16_t>& samples) {
  auto file = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  if (!png) throw IoError(path.string() + ": cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  const int bytes = bit_depth / 8;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * channels * bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r) {
    const std::uint16_t* src = samples.data() + static_cast<std::size_t>(r) * per_row;
    for (std::size_t k = 0; k < per_row; ++k) {
      if (bytes == 1) {
        row[k] = static_cast<std::uint8_t>(src[k]);
      } else {
        row[2 * k] = static_cast<std::uint8_t>(src[k] >> 8);
        row[2 * k + 1] = static_cast<std::uint8_t>(src[k] & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError(path.string() + ": write failed");
}

RawPng read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + ": not a PNG file");
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  if (!png) throw IoError(path.string() + ": cannot create PNG reader");
  png_infop info = png_create_info_struct(png);
  RawPng out;
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": corrupt PNG (" + message + ")");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int r = 0; r < out.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + rowbytes * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.samples[k] = out.bit_depth == 16
                         ? static_cast<std::uint16_t>((buffer[2 * k] << 8) | buffer[2 * k + 1])
                         : buffer[k];
  }
  return out;
}

}  // namespace

void save_image_png(const std::filesystem::path& path, const FloatImage& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw UsageError("save_image_png: expected 1 or 3 channels, got " + std::to_string(image.channels));
  }
  const std::size_t plane = image.plane_size();
  std::vector<std::uint16_t> samples(plane * image.channels);
  for (std::size_t u = 0; u < plane; ++u) {
    for (int c = 0; c < image.channels; ++c) {
      const float v = std::clamp(image.values[c * plane + u], 0.0f, 1.0f);
      samples[u * image.channels + c] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
    }
  }
  write_png(path, image.width, image.height, image.channels, 8, samples);
}

FloatImage load_image_png(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  const int keep = raw.channels >= 3 ? 3 : 1;
  const float scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  FloatImage img(keep, raw.height, raw.width);
  const std::size_t plane = img.plane_size();
  for (std::size_t u = 0; u < plane; ++u) {
    for (int c = 0; c < keep; ++c) {
      img.values[c * plane + u] = static_cast<float>(raw.samples[u * raw.channels + c]) / scale;
    }
  }
  return img;
}

void save_labels_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, labels.width, labels.height, 1, 16, labels.ids);
}

LabelMap load_labels_png(const std::filesystem::path& path) {
  RawPng raw = read_png(path);
  if (raw.channels != 1) throw IoError(path.string() + ": label PNG must be single-channel grayscale");
  LabelMap labels(raw.height, raw.width);
  labels.ids = std::move(raw.samples);
  return labels;
}

void save_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                 const Sample& sample) {
  save_image_png(image_path, sample.image);
  save_labels_png(label_path, sample.labels);
}

Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  Sample s{load_image_png(image_path), load_labels_png(label_path)};
  if (s.image.height != s.labels.height || s.image.width != s.labels.width) {
    throw IoError(label_path.string() + ": extent " + std::to_string(s.labels.height) + "x" +
                  std::to_string(s.labels.width) + " differs from image " + image_path.string());
  }
  return s;
}

}  // namespace rdc
