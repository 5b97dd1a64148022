#include "c2f/model.hpp"

#include "json.hpp"

namespace c2f::model {

std::string attention_map_to_json(const AttentionMapData& map) {
  if (map.values.size() != map.rows * map.cols)
    throw ContractError("attention export: " + std::to_string(map.values.size()) +
                        " values for " + std::to_string(map.rows) + "x" +
                        std::to_string(map.cols));
  nlohmann::json j;
  j["rows"] = map.rows;
  j["cols"] = map.cols;
  j["values"] = map.values;
  return j.dump();
}

AttentionMapData attention_map_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("attention import: ") + e.what());
  }
  AttentionMapData map;
  map.rows = j.at("rows").get<std::size_t>();
  map.cols = j.at("cols").get<std::size_t>();
  map.values = j.at("values").get<std::vector<double>>();
  if (map.values.size() != map.rows * map.cols)
    throw IoError("attention import: value count does not match dimensions");
  return map;
}

}  // namespace c2f::model
