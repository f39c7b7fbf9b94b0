#include <algorithm>

#include "rdcnet/image.hpp"

namespace rdc {

std::vector<std::uint16_t> LabelMap::instance_ids() const {
  std::vector<bool> seen(65536, false);
  std::vector<std::uint16_t> out;
  for (auto id : ids) {
    if (id != kBackgroundLabel && id != kUndefinedLabel && !seen[id]) {
      seen[id] = true;
      out.push_back(id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace rdc
