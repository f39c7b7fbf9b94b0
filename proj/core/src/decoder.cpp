#include "rdcnet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "rdcnet/errors.hpp"

namespace rdc {

void DecoderConfig::validate() const {
  if (!(fg_threshold > 0.0 && fg_threshold < 1.0)) throw ConfigError("decoder.fg_threshold: must lie in (0, 1)");
  if (window < 1 || window % 2 == 0) throw ConfigError("decoder.window: must be an odd integer >= 1");
  if (min_votes < 1) throw ConfigError("decoder.min_votes: must be >= 1");
  if (!(opening_radius >= 0.0)) throw ConfigError("decoder.opening_radius: must be >= 0");
}

int DecoderConfig::window_for_margin(double margin) {
  int w = static_cast<int>(std::lround(2.0 * margin));
  if (w % 2 == 0) w += 1;
  return std::max(w, 1);
}

std::vector<std::uint8_t> foreground_mask(const FloatImage& semantic_probs, double threshold) {
  if (semantic_probs.channels < 2) throw UsageError("foreground_mask: expected >= 2 class channels");
  const std::size_t plane = semantic_probs.plane_size();
  std::vector<std::uint8_t> mask(plane);
  for (std::size_t u = 0; u < plane; ++u) mask[u] = semantic_probs.values[plane + u] > threshold;
  return mask;
}

VoteGrid vote_histogram(const FloatImage& embeddings, const std::vector<std::uint8_t>& fg_mask) {
  if (embeddings.channels != 2) throw UsageError("vote_histogram: expected 2-channel embeddings");
  const std::size_t plane = embeddings.plane_size();
  if (fg_mask.size() != plane) throw UsageError("vote_histogram: mask size mismatch");
  VoteGrid grid{embeddings.height, embeddings.width, std::vector<std::int32_t>(plane, 0)};
  for (std::size_t u = 0; u < plane; ++u) {
    if (!fg_mask[u]) continue;
    const double r = std::floor(static_cast<double>(embeddings.values[u]) + 0.5);
    const double c = std::floor(static_cast<double>(embeddings.values[plane + u]) + 0.5);
    const int row = static_cast<int>(std::clamp(r, 0.0, static_cast<double>(grid.height - 1)));
    const int col = static_cast<int>(std::clamp(c, 0.0, static_cast<double>(grid.width - 1)));
    ++grid.counts[static_cast<std::size_t>(row) * grid.width + col];
  }
  return grid;
}

namespace {

/// Sliding maximum over a centred window of `radius` along one axis, with the
/// window truncated at the borders.
void running_max(const std::int32_t* src, std::int32_t* dst, int n, std::ptrdiff_t stride, int radius) {
  // Monotone deque of indices with decreasing values.
  std::vector<int> dq(static_cast<std::size_t>(n));
  int head = 0, tail = 0;
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int hi = std::min(n - 1, i + radius);
    while (next <= hi) {
      while (tail > head && src[dq[tail - 1] * stride] <= src[next * stride]) --tail;
      dq[tail++] = next++;
    }
    while (dq[head] < i - radius) ++head;
    dst[i * stride] = src[dq[head] * stride];
  }
}

}  // namespace

std::vector<Centre> local_maxima(const VoteGrid& hist, int window, int min_votes) {
  if (window < 1 || window % 2 == 0) throw UsageError("local_maxima: window must be odd");
  const int h = hist.height;
  const int w = hist.width;
  const int radius = window / 2;
  std::vector<std::int32_t> rowmax(hist.counts.size()), winmax(hist.counts.size());
  for (int r = 0; r < h; ++r) {
    running_max(hist.counts.data() + static_cast<std::ptrdiff_t>(r) * w, rowmax.data() + static_cast<std::ptrdiff_t>(r) * w,
                w, 1, radius);
  }
  for (int c = 0; c < w; ++c) running_max(rowmax.data() + c, winmax.data() + c, h, w, radius);

  std::vector<Centre> centres;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto idx = static_cast<std::size_t>(r) * w + c;
      const std::int32_t v = hist.counts[idx];
      if (v < min_votes || v != winmax[idx]) continue;
      // An equal bin earlier in raster order inside the window claims the plateau.
      bool claimed = false;
      for (int rr = std::max(0, r - radius); rr <= r && !claimed; ++rr) {
        const int c_end = rr < r ? std::min(w - 1, c + radius) : c - 1;
        for (int cc = std::max(0, c - radius); cc <= c_end; ++cc) {
          if (hist.at(rr, cc) == v) {
            claimed = true;
            break;
          }
        }
      }
      if (!claimed) centres.push_back({r, c});
    }
  }
  return centres;
}

LabelMap assign(const FloatImage& embeddings, const std::vector<std::uint8_t>& fg_mask,
                const std::vector<Centre>& centres) {
  if (embeddings.channels != 2) throw UsageError("assign: expected 2-channel embeddings");
  const std::size_t plane = embeddings.plane_size();
  if (fg_mask.size() != plane) throw UsageError("assign: mask size mismatch");
  if (centres.size() >= kUndefinedLabel) throw UsageError("assign: too many centres for 16-bit labels");
  LabelMap labels(embeddings.height, embeddings.width);
  if (centres.empty()) return labels;
  for (std::size_t u = 0; u < plane; ++u) {
    if (!fg_mask[u]) continue;
    const double er = embeddings.values[u];
    const double ec = embeddings.values[plane + u];
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < centres.size(); ++k) {
      const double dr = er - centres[k].row;
      const double dc = ec - centres[k].col;
      const double d2 = dr * dr + dc * dc;
      if (d2 < best) {
        best = d2;
        best_k = k;
      }
    }
    labels.ids[u] = static_cast<std::uint16_t>(best_k + 1);
  }
  return labels;
}

LabelMap label_opening(const LabelMap& labels, double radius) {
  if (radius <= 0.0) return labels;
  const int reach = static_cast<int>(std::floor(radius));
  std::vector<std::pair<int, int>> disc;
  for (int dr = -reach; dr <= reach; ++dr) {
    for (int dc = -reach; dc <= reach; ++dc) {
      if (dr * dr + dc * dc <= radius * radius) disc.emplace_back(dr, dc);
    }
  }
  const int h = labels.height;
  const int w = labels.width;
  auto inside = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w; };

  LabelMap out = labels;
  for (auto id : labels.instance_ids()) {
    std::vector<std::uint8_t> eroded(labels.ids.size(), 0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (labels.at(r, c) != id) continue;
        bool keep = true;
        for (auto [dr, dc] : disc) {
          if (!inside(r + dr, c + dc) || labels.at(r + dr, c + dc) != id) {
            keep = false;
            break;
          }
        }
        eroded[static_cast<std::size_t>(r) * w + c] = keep;
      }
    }
    std::vector<std::uint8_t> opened(labels.ids.size(), 0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (!eroded[static_cast<std::size_t>(r) * w + c]) continue;
        for (auto [dr, dc] : disc) {
          if (inside(r + dr, c + dc)) opened[static_cast<std::size_t>(r + dr) * w + (c + dc)] = 1;
        }
      }
    }
    for (std::size_t u = 0; u < labels.ids.size(); ++u) {
      if (labels.ids[u] == id && !opened[u]) out.ids[u] = kBackgroundLabel;
    }
  }
  return out;
}

LabelMap decode(const FloatImage& semantic_probs, const FloatImage& embeddings, const DecoderConfig& cfg) {
  cfg.validate();
  if (semantic_probs.height != embeddings.height || semantic_probs.width != embeddings.width) {
    throw UsageError("decode: semantic and embedding extents differ");
  }
  const auto fg = foreground_mask(semantic_probs, cfg.fg_threshold);
  const auto hist = vote_histogram(embeddings, fg);
  const auto centres = local_maxima(hist, cfg.window, cfg.min_votes);
  LabelMap labels = assign(embeddings, fg, centres);
  return label_opening(labels, cfg.opening_radius);
}

}  // namespace rdc
