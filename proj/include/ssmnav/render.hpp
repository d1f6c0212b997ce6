#pragma once

#include "ssmnav/environment.hpp"

#include <string>
#include <vector>

namespace ssmnav {

/// Maps environment x/y (meters, north = +y) to SVG pixels (y grows down).
struct SvgFrame {
  double min_x = 0, max_y = 0, scale = 20, margin = 20;
  double width = 0, height = 0;

  static SvgFrame fit(const EnvironmentGraph& env, double scale = 20, double margin = 20);
  double px(const Vec3& p) const { return margin + (p.x() - min_x) * scale; }
  double py(const Vec3& p) const { return margin + (max_y - p.y()) * scale; }
};

/// Static plot with three layers: env-graph, gt-path, agent-path.
std::string render_svg(const EnvironmentGraph& env, const std::vector<NodeId>& gt_path,
                       const std::vector<NodeId>& agent_path, NodeId goal);

}  // namespace ssmnav
