#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rdc {

enum class Split { Train, Val, Test };

const char* split_name(Split split);
/// Throws FormatError for anything but "train", "val" or "test".
Split parse_split(const std::string& text);

struct ManifestEntry {
  Split split = Split::Train;
  /// Relative paths are resolved against the manifest's directory.
  std::filesystem::path image;
  std::filesystem::path labels;
  bool operator==(const ManifestEntry&) const = default;
};

/// Text file: an optional "# seed <n>" line, then one
/// "split<TAB>image_path<TAB>label_path" line per sample. Blank lines and other
/// '#' lines are ignored.
struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(Split which) const;
  bool operator==(const Manifest&) const = default;
};

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Parses and resolves paths. With `check_files`, every referenced file must
/// exist (IoError naming it).
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);

}  // namespace rdc
