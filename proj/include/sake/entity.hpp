#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"

namespace sake {

// Axis-aligned box in pixel coordinates, top-left (x1, y1) to bottom-right (x2, y2).
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 >= 0.0 && y1 >= 0.0 && x1 < x2 && y1 < y2;
  }
  double area() const noexcept { return (x2 - x1) * (y2 - y1); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// A predicted (span, type, region) triplet. `region` is empty when the model
// says the entity is not visible in the image.
struct Entity {
  std::string span;
  std::string type;
  std::optional<BBox> region;

  friend bool operator==(const Entity&, const Entity&) = default;
};

// A gold annotation. An empty `boxes` list marks an ungroundable entity.
struct GoldEntity {
  std::string span;
  std::string type;
  std::vector<BBox> boxes;

  bool groundable() const noexcept { return !boxes.empty(); }

  friend bool operator==(const GoldEntity&, const GoldEntity&) = default;
};

namespace detail {

inline BBox bbox_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4)
    throw validation_error("BadBox", "box must be an array of four numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw validation_error("BadBox", "box coordinates must be numbers");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw validation_error("BadBox", "box must satisfy 0 <= x1 < x2, 0 <= y1 < y2");
  return b;
}

template <class Json>
Json bbox_to_json(const BBox& b) {
  return Json::array({b.x1, b.y1, b.x2, b.y2});
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Entity& e) {
  nlohmann::ordered_json j;
  j["span"] = e.span;
  j["type"] = e.type;
  j["box"] = e.region ? detail::bbox_to_json<nlohmann::ordered_json>(*e.region) : nlohmann::ordered_json();
  return j;
}

inline nlohmann::ordered_json to_json(const GoldEntity& g) {
  nlohmann::ordered_json j;
  j["span"] = g.span;
  j["type"] = g.type;
  j["boxes"] = nlohmann::ordered_json::array();
  for (const auto& b : g.boxes) j["boxes"].push_back(detail::bbox_to_json<nlohmann::ordered_json>(b));
  return j;
}

// Strict decode of the answer-schema entity object {"span","type","box"}.
inline Entity entity_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw validation_error("BadEntity", "entity must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "span" && key != "type" && key != "box")
      throw validation_error("BadEntity", "unknown entity field '" + key + "'");
  if (!j.contains("span") || !j["span"].is_string())
    throw validation_error("BadEntity", "entity.span must be a string");
  if (!j.contains("type") || !j["type"].is_string())
    throw validation_error("BadEntity", "entity.type must be a string");
  if (!j.contains("box")) throw validation_error("BadEntity", "entity.box is required (null allowed)");
  Entity e;
  e.span = j["span"].get<std::string>();
  e.type = j["type"].get<std::string>();
  if (trim(e.span).empty()) throw validation_error("BadEntity", "entity.span is empty");
  if (trim(e.type).empty()) throw validation_error("BadEntity", "entity.type is empty");
  if (!j["box"].is_null()) e.region = detail::bbox_from_json(j["box"]);
  return e;
}

// Gold entities accept {"span","type","boxes":[[...],...]}; a legacy single
// "box" (or null) is also read so prediction files can double as gold.
inline GoldEntity gold_entity_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw validation_error("BadEntity", "gold entity must be an object");
  if (!j.contains("span") || !j["span"].is_string() || !j.contains("type") || !j["type"].is_string())
    throw validation_error("BadEntity", "gold entity needs string span and type");
  GoldEntity g;
  g.span = j["span"].get<std::string>();
  g.type = j["type"].get<std::string>();
  if (trim(g.span).empty()) throw validation_error("BadEntity", "gold span is empty");
  if (j.contains("boxes")) {
    if (!j["boxes"].is_array()) throw validation_error("BadEntity", "gold boxes must be an array");
    for (const auto& b : j["boxes"]) g.boxes.push_back(detail::bbox_from_json(b));
  } else if (j.contains("box") && !j["box"].is_null()) {
    g.boxes.push_back(detail::bbox_from_json(j["box"]));
  }
  return g;
}

}  // namespace sake
