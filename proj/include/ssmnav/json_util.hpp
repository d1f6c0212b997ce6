#pragma once

#include "ssmnav/types.hpp"

#include "json.hpp"

namespace ssmnav {

inline nlohmann::json vec_to_json(const Vec& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vec vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json orientation_to_json(const OrientationFeature& o) {
  return {o.raw[0], o.raw[1], o.raw[2], o.raw[3]};
}

inline OrientationFeature orientation_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("expected a 4-vector orientation");
  OrientationFeature o;
  for (int i = 0; i < 4; ++i) o.raw[i] = j[i].get<double>();
  return o;
}

}  // namespace ssmnav
