#pragma once

// Hand-made observations and memories for small worked cases.

#include "ssmnav/environment.hpp"
#include "ssmnav/observation.hpp"
#include "ssmnav/scene_memory.hpp"

#include <cmath>
#include <vector>

namespace build {

using ssmnav::NodeId;
using ssmnav::Vec;
using ssmnav::Vec3;

struct Target {
  NodeId id;
  Vec3 pos;
};

/// Panorama at `at` seeing `targets`, each with visual feature `fill` (or a
/// per-target feature if `visuals` is given).
inline ssmnav::Observation obs(NodeId at, const Vec3& pos, const std::vector<Target>& targets, int d_f = 4,
                               const std::vector<Vec>& visuals = {}) {
  ssmnav::Observation o;
  o.at = at;
  o.position = pos;
  o.views.assign(36, Vec::Zero(d_f));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Vec3 d = targets[i].pos - pos;
    const double heading = std::atan2(d.x(), d.y());
    const double elevation = std::atan2(d.z(), std::hypot(d.x(), d.y()));
    ssmnav::NavigableView nv;
    nv.neighbor = targets[i].id;
    nv.target = targets[i].pos;
    nv.orientation = ssmnav::OrientationFeature::from_angles(heading, elevation);
    nv.view = ssmnav::view_cell(heading, elevation, 12, 3);
    nv.visual = visuals.empty() ? Vec::Constant(d_f, 0.1 * double(targets[i].id + 1)) : visuals[i];
    o.views[std::size_t(nv.view.flat(12))] = nv.visual;
    o.navigable.push_back(nv);
  }
  return o;
}

inline ssmnav::Position at(NodeId id, const Vec3& p) { return {id, p}; }

/// A world given only by positions and adjacency; observe() builds panoramas
/// with `build::obs`.
struct World {
  std::vector<Vec3> pos;
  std::vector<std::vector<NodeId>> adj;

  ssmnav::Observation observe(NodeId id, int d_f = 4) const {
    std::vector<Target> t;
    for (NodeId u : adj[id]) t.push_back({u, pos[u]});
    return obs(id, pos[id], t, d_f);
  }
  ssmnav::Position where(NodeId id) const { return {id, pos[id]}; }
};

/// Chain 0 - 1 - ... - (n-1) along +y, `spacing` meters apart.
inline World chain(int n, double spacing = 2.0) {
  World w;
  for (int i = 0; i < n; ++i) w.pos.emplace_back(0.0, spacing * i, 0.0);
  w.adj.resize(n);
  for (int i = 0; i + 1 < n; ++i) {
    w.adj[i].push_back(i + 1);
    w.adj[i + 1].push_back(i);
  }
  return w;
}

/// Memory that has visited `visits` of `w` in order (each must be reachable
/// from an earlier visit).
inline ssmnav::SceneMemory visit(const World& w, const std::vector<NodeId>& visits, int d_f = 4) {
  auto mem = ssmnav::SceneMemory::init(w.observe(visits.front(), d_f));
  for (std::size_t i = 1; i < visits.size(); ++i) mem.extend(w.where(visits[i]), w.observe(visits[i], d_f));
  return mem;
}

}  // namespace build
