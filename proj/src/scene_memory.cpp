#include "ssmnav/scene_memory.hpp"

#include "ssmnav/json_util.hpp"

#include <algorithm>
#include <limits>
#include <queue>
#include <set>

namespace ssmnav {
namespace {

SubNode make_subnode(NodeId parent, const NavigableView& nv) {
  SubNode s;
  s.parent = parent;
  s.view = nv.view;
  s.target = nv.target;
  s.visual = nv.visual;
  s.orientation = nv.orientation;
  return s;
}

bool subnode_order(const SubNode& a, const SubNode& b) {
  if (a.view != b.view) return a.view < b.view;
  return std::lexicographical_compare(a.target.data(), a.target.data() + 3, b.target.data(),
                                      b.target.data() + 3);
}

const std::vector<MemoryEdge> kNoEdges;

}  // namespace

SceneMemory SceneMemory::init(const Observation& start) {
  start.validate();
  SceneMemory mem;
  MemoryNode node;
  node.id = start.at;
  node.position = start.where();
  node.visited_step = 0;
  for (const auto& nv : start.navigable) {
    node.panorama_views.push_back({nv.view, nv.visual});
    node.live_subnodes.push_back(make_subnode(start.at, nv));
  }
  std::stable_sort(node.live_subnodes.begin(), node.live_subnodes.end(), subnode_order);
  mem.nodes_.emplace(node.id, std::move(node));
  mem.current_ = start.at;
  return mem;
}

const MemoryNode& SceneMemory::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw InvariantError("unknown memory node " + std::to_string(id));
  return it->second;
}

const std::vector<MemoryEdge>& SceneMemory::out_edges(NodeId id) const {
  auto it = edges_.find(id);
  return it == edges_.end() ? kNoEdges : it->second;
}

std::size_t SceneMemory::edge_count() const {
  std::size_t n = 0;
  for (const auto& [id, out] : edges_) n += out.size();
  return n;
}

NodeId SceneMemory::node_near(const Vec3& p, double eps) const {
  for (const auto& [id, n] : nodes_) {
    if ((n.position.coords - p).norm() <= eps) return id;
  }
  return kNoNode;
}

void SceneMemory::add_edge(NodeId from, NodeId to, const OrientationFeature& o) {
  if (from == to) throw InvariantError("self edge in scene memory");
  auto& out = edges_[from];
  auto it = std::lower_bound(out.begin(), out.end(), to,
                             [](const MemoryEdge& e, NodeId id) { return e.to < id; });
  if (it != out.end() && it->to == to) return;
  out.insert(it, MemoryEdge{from, to, o});
}

void SceneMemory::extend(const Position& visited, const Observation& obs, double eps) {
  obs.validate();
  if (obs.at != visited.id) throw InconsistentTransition("observation was not taken at the visited place");

  NodeId existing = contains(visited.id) ? visited.id : node_near(visited.coords, eps);
  if (existing != kNoNode) {
    current_ = existing;
    ++step_;
    return;
  }

  bool matched = false;
  for (const auto& [id, n] : nodes_) {
    for (const auto& s : n.live_subnodes) {
      if ((s.target - visited.coords).norm() <= eps) matched = true;
    }
  }
  if (!matched) {
    throw InconsistentTransition("no sub-node leads to place " + std::to_string(visited.id));
  }

  ++step_;
  MemoryNode fresh;
  fresh.id = visited.id;
  fresh.position = visited;
  fresh.visited_step = step_;

  // Consume every sub-node that turned out to be this place.
  for (auto& [id, n] : nodes_) {
    auto& live = n.live_subnodes;
    for (auto it = live.begin(); it != live.end();) {
      if ((it->target - visited.coords).norm() <= eps) {
        add_edge(id, fresh.id, it->orientation);
        it = live.erase(it);
      } else {
        ++it;
      }
    }
  }

  for (const auto& nv : obs.navigable) {
    fresh.panorama_views.push_back({nv.view, nv.visual});
    const NodeId known = node_near(nv.target, eps);
    if (known != kNoNode) {
      add_edge(fresh.id, known, nv.orientation);
    } else {
      fresh.live_subnodes.push_back(make_subnode(fresh.id, nv));
    }
  }
  std::stable_sort(fresh.live_subnodes.begin(), fresh.live_subnodes.end(), subnode_order);
  nodes_.emplace(fresh.id, std::move(fresh));
  current_ = visited.id;
}

std::vector<NodeId> SceneMemory::frontiers() const {
  std::vector<NodeId> out;
  for (const auto& [id, n] : nodes_) {
    if (!n.live_subnodes.empty()) out.push_back(id);
  }
  return out;
}

std::vector<SubNode> SceneMemory::global_action_space() const {
  std::vector<SubNode> out;
  for (const auto& [id, n] : nodes_) {
    out.insert(out.end(), n.live_subnodes.begin(), n.live_subnodes.end());
  }
  return out;
}

MemoryPath SceneMemory::shortest_path(NodeId from, NodeId to) const {
  if (!contains(from) || !contains(to)) throw InvariantError("shortest_path on unknown node");
  if (from == to) return {{from}, 0.0};

  auto weight = [this](const MemoryEdge& e) {
    return (node(e.from).position.coords - node(e.to).position.coords).norm();
  };

  // Distances *to* the target over reversed edges, then a greedy walk from the
  // source picking the smallest id among tight edges gives the lexicographically
  // smallest shortest path.
  std::map<NodeId, std::vector<const MemoryEdge*>> incoming;
  for (const auto& [id, out] : edges_) {
    for (const auto& e : out) incoming[e.to].push_back(&e);
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::map<NodeId, double> dist;
  for (const auto& [id, n] : nodes_) dist[id] = inf;
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[to] = 0.0;
  queue.push({0.0, to});
  while (!queue.empty()) {
    auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const MemoryEdge* e : incoming[v]) {
      const double nd = d + weight(*e);
      if (nd < dist[e->from]) {
        dist[e->from] = nd;
        queue.push({nd, e->from});
      }
    }
  }
  if (!std::isfinite(dist[from])) {
    throw InvariantError("memory node " + std::to_string(to) + " unreachable from " +
                         std::to_string(from));
  }

  MemoryPath path;
  path.nodes.push_back(from);
  NodeId at = from;
  std::set<NodeId> seen{from};
  while (at != to) {
    const double tol = 1e-9 * std::max(1.0, dist[at]);
    NodeId next = kNoNode;
    double step_len = 0.0;
    for (const auto& e : out_edges(at)) {
      const double w = weight(e);
      if (std::abs(w + dist[e.to] - dist[at]) <= tol && !seen.count(e.to)) {
        next = e.to;  // out edges are sorted by target id
        step_len = w;
        break;
      }
    }
    if (next == kNoNode) throw InvariantError("shortest path reconstruction failed");
    path.length += step_len;
    path.nodes.push_back(next);
    seen.insert(next);
    at = next;
  }
  return path;
}

bool SceneMemory::is_strongly_connected() const {
  if (nodes_.empty()) return false;
  auto reach = [this](bool reverse) {
    std::map<NodeId, std::vector<NodeId>> adj;
    for (const auto& [id, out] : edges_) {
      for (const auto& e : out) {
        if (reverse) {
          adj[e.to].push_back(e.from);
        } else {
          adj[e.from].push_back(e.to);
        }
      }
    }
    std::set<NodeId> seen{nodes_.begin()->first};
    std::vector<NodeId> stack{nodes_.begin()->first};
    while (!stack.empty()) {
      NodeId v = stack.back();
      stack.pop_back();
      for (NodeId u : adj[v]) {
        if (seen.insert(u).second) stack.push_back(u);
      }
    }
    return seen.size();
  };
  return reach(false) == nodes_.size() && reach(true) == nodes_.size();
}

nlohmann::json SceneMemory::to_json() const {
  using nlohmann::json;
  json j;
  j["current"] = current_;
  j["step"] = step_;
  json nodes = json::array();
  for (const auto& [id, n] : nodes_) {
    json jn;
    jn["id"] = id;
    jn["position"] = vec3_to_json(n.position.coords);
    jn["visited_step"] = n.visited_step;
    json views = json::array();
    for (const auto& v : n.panorama_views) {
      views.push_back({{"heading", v.view.heading},
                       {"elevation", v.view.elevation},
                       {"visual", vec_to_json(v.visual)}});
    }
    jn["panorama_views"] = std::move(views);
    json subs = json::array();
    for (const auto& s : n.live_subnodes) {
      subs.push_back({{"heading", s.view.heading},
                      {"elevation", s.view.elevation},
                      {"target", vec3_to_json(s.target)},
                      {"visual", vec_to_json(s.visual)},
                      {"orientation", orientation_to_json(s.orientation)}});
    }
    jn["subnodes"] = std::move(subs);
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& [id, out] : edges_) {
    for (const auto& e : out) {
      edges.push_back({{"from", e.from}, {"to", e.to}, {"orientation", orientation_to_json(e.orientation)}});
    }
  }
  j["edges"] = std::move(edges);
  return j;
}

SceneMemory SceneMemory::from_json(const nlohmann::json& j) {
  SceneMemory mem;
  mem.current_ = j.at("current").get<NodeId>();
  mem.step_ = j.at("step").get<int>();
  for (const auto& jn : j.at("nodes")) {
    MemoryNode n;
    n.id = jn.at("id").get<NodeId>();
    n.position = {n.id, vec3_from_json(jn.at("position"))};
    n.visited_step = jn.at("visited_step").get<int>();
    for (const auto& v : jn.at("panorama_views")) {
      n.panorama_views.push_back(
          {{v.at("heading").get<int>(), v.at("elevation").get<int>()}, vec_from_json(v.at("visual"))});
    }
    for (const auto& v : jn.at("subnodes")) {
      SubNode s;
      s.parent = n.id;
      s.view = {v.at("heading").get<int>(), v.at("elevation").get<int>()};
      s.target = vec3_from_json(v.at("target"));
      s.visual = vec_from_json(v.at("visual"));
      s.orientation = orientation_from_json(v.at("orientation"));
      n.live_subnodes.push_back(std::move(s));
    }
    mem.nodes_.emplace(n.id, std::move(n));
  }
  for (const auto& e : j.at("edges")) {
    mem.add_edge(e.at("from").get<NodeId>(), e.at("to").get<NodeId>(),
                 orientation_from_json(e.at("orientation")));
  }
  if (!mem.contains(mem.current_)) throw ValidationError("serialized memory has unknown current node");
  return mem;
}

}  // namespace ssmnav
