#include "rdcnet/manifest.hpp"

#include <fstream>
#include <sstream>

#include "rdcnet/errors.hpp"

namespace rdc {

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw FormatError("unknown split tag '" + text + "'");
}

std::vector<ManifestEntry> Manifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == which) out.push_back(e);
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return (p.is_absolute() && !base.empty()) ? p.lexically_relative(std::filesystem::absolute(base)) : p;
  };
  out << "# seed " << manifest.seed << '\n';
  for (const auto& e : manifest.entries) {
    out << split_name(e.split) << '\t' << rel(e.image).generic_string() << '\t' << rel(e.labels).generic_string()
        << '\n';
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  Manifest m;
  const auto base = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string key;
      if (is >> key && key == "seed") {
        if (!(is >> m.seed)) throw FormatError(where + ": malformed seed line");
      }
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) throw FormatError(where + ": expected 3 tab-separated fields");
    ManifestEntry e;
    try {
      e.split = parse_split(fields[0]);
    } catch (const FormatError& err) {
      throw FormatError(where + ": " + err.what());
    }
    auto resolve = [&](const std::string& f) {
      const std::filesystem::path p(f);
      return p.is_absolute() ? p : base / p;
    };
    e.image = resolve(fields[1]);
    e.labels = resolve(fields[2]);
    if (check_files) {
      for (const auto* p : {&e.image, &e.labels}) {
        if (!std::filesystem::exists(*p)) throw IoError(p->string() + ": listed in " + where + " but missing");
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace rdc
