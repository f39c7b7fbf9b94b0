#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdcnet/model.hpp"
#include "rdcnet/optim.hpp"

namespace rdc {

/// Little-endian binary layout:
///
///   "RDCN"            4 bytes magic
///   u32 version       currently 1
///   config block      i32 in_channels, groups, group_channels, iterations, scale,
///                     stem_channels, embedding_dim, semantic_classes;
///                     u32 n_rates; i32 rates[16] (unused slots 0);
///                     f64 dropout_p, leaky_slope
///   u8  has_optimizer
///   i64 step
///   u32 n_params
///   n_params records  u32 name_len, name bytes, u32 ndim, i64 dims[ndim],
///                     f32 values[numel]; then, if has_optimizer,
///                     f32 first_moment[numel], f32 second_moment[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr int kMaxDilationRates = 16;

struct Checkpoint {
  RDCNetConfig config;
  ParamGroup params;
  bool has_optimizer = false;
};

/// Canonical serialization of a model; moments and step are included when
/// `include_optimizer` is set.
std::vector<std::uint8_t> serialize_checkpoint(const RDCNetConfig& config, const ParamGroup& params,
                                               bool include_optimizer = true);
void save_checkpoint(const std::filesystem::path& path, const RDCNetConfig& config, const ParamGroup& params,
                     bool include_optimizer = true);

/// Parses a whole checkpoint. Throws FormatError on bad magic, version or
/// truncation, and ConfigError if a record's shape or name disagrees with the
/// topology implied by the stored config.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint");
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies a checkpoint's tensors into an existing model. Throws ConfigError
/// naming the first parameter whose name or shape differs; `params` is left
/// untouched on failure.
void load_checkpoint_into(const std::filesystem::path& path, ParamGroup& params);

}  // namespace rdc
