#include "ssmnav/render.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace ssmnav {

SvgFrame SvgFrame::fit(const EnvironmentGraph& env, double scale, double margin) {
  SvgFrame f;
  f.scale = scale;
  f.margin = margin;
  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (const auto& p : env.positions()) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  if (env.positions().empty()) min_x = max_x = min_y = max_y = 0.0;
  f.min_x = min_x;
  f.max_y = max_y;
  f.width = 2 * margin + (max_x - min_x) * scale;
  f.height = 2 * margin + (max_y - min_y) * scale;
  return f;
}

namespace {

void polyline(std::ostringstream& s, const EnvironmentGraph& env, const SvgFrame& f,
              const std::vector<NodeId>& path, const char* id, const char* color, double width) {
  s << "  <g id=\"" << id << "\">\n";
  if (!path.empty()) {
    s << "    <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
    for (std::size_t i = 0; i < path.size(); ++i) {
      const auto& p = env.position(path[i]);
      s << (i ? " " : "") << f.px(p) << ',' << f.py(p);
    }
    s << "\"/>\n";
  }
  s << "  </g>\n";
}

}  // namespace

std::string render_svg(const EnvironmentGraph& env, const std::vector<NodeId>& gt_path,
                       const std::vector<NodeId>& agent_path, NodeId goal) {
  const SvgFrame f = SvgFrame::fit(env);
  std::ostringstream s;
  s.precision(10);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  s << "  <g id=\"env-graph\">\n";
  for (NodeId a = 0; a < env.size(); ++a) {
    for (NodeId b : env.neighbors(a)) {
      if (b < a) continue;
      const auto& p = env.position(a);
      const auto& q = env.position(b);
      s << "    <line x1=\"" << f.px(p) << "\" y1=\"" << f.py(p) << "\" x2=\"" << f.px(q) << "\" y2=\"" << f.py(q)
        << "\" stroke=\"#bbb\"/>\n";
    }
  }
  for (NodeId a = 0; a < env.size(); ++a) {
    const auto& p = env.position(a);
    s << "    <circle id=\"node-" << a << "\" cx=\"" << f.px(p) << "\" cy=\"" << f.py(p) << "\" r=\""
      << (a == goal ? 6 : 4) << "\" fill=\"" << (a == goal ? "#d33" : "#666") << "\"/>\n";
  }
  s << "  </g>\n";
  polyline(s, env, f, gt_path, "gt-path", "#2a2", 4);
  polyline(s, env, f, agent_path, "agent-path", "#23d", 2);
  s << "</svg>\n";
  return s.str();
}

}  // namespace ssmnav
