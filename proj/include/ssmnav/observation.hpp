#pragma once

#include "ssmnav/types.hpp"

#include <vector>

namespace ssmnav {

/// One reachable viewpoint seen in a panorama.
struct NavigableView {
  /// Environment id of the target. Oracle-side only: the agent never reads it
  /// and unifies places through `target` coordinates instead.
  NodeId neighbor = kNoNode;
  ViewIndex view;
  Vec3 target = Vec3::Zero();
  Vec visual;
  OrientationFeature orientation;
};

/// A panoramic observation taken at one location.
struct Observation {
  NodeId at = kNoNode;
  Vec3 position = Vec3::Zero();
  int headings = 12;
  int elevations = 3;
  std::vector<Vec> views;  // headings * elevations cells, index = elevation * headings + heading
  std::vector<NavigableView> navigable;

  Position where() const { return {at, position}; }

  /// Throws ValidationError on out-of-range view indices, non-unit
  /// orientations, non-finite values or inconsistent feature widths.
  void validate() const;
};

}  // namespace ssmnav
