#include "c2f/objective.hpp"

#include <algorithm>
#include <map>

namespace c2f::obj {

std::vector<std::uint16_t> canonicalize_instances(const std::vector<std::uint16_t>& instance_map,
                                                  std::size_t max_instances) {
  if (max_instances == 0)
    throw ContractError("canonicalize: max_instances must be positive");

  std::map<std::uint16_t, std::size_t> area;
  for (std::uint16_t id : instance_map)
    if (id > 0) ++area[id];

  // Area-descending order, ties to the smaller original id.
  std::vector<std::uint16_t> ids;
  ids.reserve(area.size());
  for (const auto& [id, _] : area) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(), [&](std::uint16_t a, std::uint16_t b) {
    return area.at(a) > area.at(b);
  });

  std::vector<std::uint16_t> relabel(ids.empty() ? 1 : 65536, 0);
  for (std::size_t rank = 0; rank < ids.size(); ++rank)
    relabel[ids[rank]] =
        static_cast<std::uint16_t>(std::min(rank + 1, max_instances));

  std::vector<std::uint16_t> out(instance_map.size());
  for (std::size_t i = 0; i < instance_map.size(); ++i)
    out[i] = instance_map[i] == 0 ? 0 : relabel[instance_map[i]];
  return out;
}

}  // namespace c2f::obj
