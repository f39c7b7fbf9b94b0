#pragma once

#include <cstdint>
#include <vector>

#include "rdcnet/image.hpp"

namespace rdc {

struct DecoderConfig {
  double fg_threshold = 0.5;
  /// Side of the square local-maximum window, odd, in pixels.
  int window = 21;
  int min_votes = 2;
  /// Radius of the label-wise morphological opening; 0 disables it.
  double opening_radius = 0.0;

  void validate() const;
  /// round_to_odd(2 * margin), at least 1.
  static int window_for_margin(double margin);

  bool operator==(const DecoderConfig&) const = default;
};

struct Centre {
  int row = 0;
  int col = 0;
  bool operator==(const Centre&) const = default;
};

/// Row-major vote counts [height, width].
struct VoteGrid {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> counts;

  std::int32_t at(int r, int c) const { return counts[static_cast<std::size_t>(r) * width + c]; }
  bool operator==(const VoteGrid&) const = default;
};

/// True where foreground probability (channel 1 of semantic_probs) exceeds the threshold.
std::vector<std::uint8_t> foreground_mask(const FloatImage& semantic_probs, double threshold);

/// Each foreground pixel votes once into the bin at its rounded (half-up)
/// embedding (row, col); out-of-image votes clamp to the nearest border bin.
VoteGrid vote_histogram(const FloatImage& embeddings, const std::vector<std::uint8_t>& fg_mask);

/// Bins with count >= min_votes that beat every other bin of the centred
/// window. Among equal counts the lexicographically smallest (row, col) wins.
/// Returned in raster order.
std::vector<Centre> local_maxima(const VoteGrid& hist, int window, int min_votes);

/// Foreground pixels get 1 + index of the nearest centre in embedding space
/// (ties to the lower index); everything else is 0.
LabelMap assign(const FloatImage& embeddings, const std::vector<std::uint8_t>& fg_mask,
                const std::vector<Centre>& centres);

/// Per-label opening (erode then dilate) with a disc; removed pixels become 0.
LabelMap label_opening(const LabelMap& labels, double radius);

/// foreground threshold -> vote_histogram -> local_maxima -> assign [-> opening].
LabelMap decode(const FloatImage& semantic_probs, const FloatImage& embeddings, const DecoderConfig& cfg);

}  // namespace rdc
