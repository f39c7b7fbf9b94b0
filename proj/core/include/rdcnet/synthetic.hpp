#pragma once

#include <utility>
#include <vector>

#include "rdcnet/image.hpp"
#include "rdcnet/rng.hpp"

namespace rdc {

/// Parameters of the random-ellipse dataset.
struct SyntheticConfig {
  int size = 64;
  int min_instances = 3;
  int max_instances = 8;
  /// Semi-axis lengths in pixels, drawn uniformly.
  std::pair<double, double> radius_range{5.0, 10.0};
  /// Upper bound on |A n B| / min(|A|, |B|) for any two ellipses.
  double overlap_fraction = 0.1;
  /// Standard deviation of additive Gaussian pixel noise.
  double noise_level = 0.05;

  /// Throws ConfigError naming the offending field (prefix "data.").
  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

/// One RGB sample with k ~ U{min, max} coloured ellipses on a textured
/// background. Later ellipses occlude earlier ones; every instance keeps at
/// least half of its own area visible. Throws GenerationError if the packing
/// constraints cannot be met after bounded retries.
Sample generate_sample(const SyntheticConfig& cfg, Rng& rng);

/// `n` samples; sample i draws from rng.derive(i), so any prefix is stable.
std::vector<Sample> generate_synthetic(int n, const SyntheticConfig& cfg, const Rng& rng);

}  // namespace rdc
