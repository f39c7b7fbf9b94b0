#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace rdc {

/// Philox4x32-10 counter-based generator.
///
/// The state is a (key, counter) pair; every draw is a pure function of it, so
/// a generator can be forked into independent streams with derive() without
/// any hidden global state. Distribution helpers are implemented here rather
/// than via <random> so sequences are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  /// Independent child stream keyed by (this key, id). Does not advance *this.
  [[nodiscard]] Rng derive(std::uint64_t id) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u32(); }

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

}  // namespace rdc
