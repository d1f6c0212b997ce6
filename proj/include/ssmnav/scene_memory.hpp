#pragma once

#include "ssmnav/observation.hpp"
#include "ssmnav/types.hpp"

#include "json.hpp"

#include <map>
#include <vector>

namespace ssmnav {

inline constexpr double kDefaultMatchRadius = 0.5;

/// An observed but unvisited place, attached to the visited node it was seen from.
struct SubNode {
  NodeId parent = kNoNode;
  ViewIndex view;
  Vec3 target = Vec3::Zero();
  Vec visual;
  OrientationFeature orientation;
  bool is_stop = false;
};

struct PanoramaView {
  ViewIndex view;
  Vec visual;
};

struct MemoryNode {
  NodeId id = kNoNode;
  Position position;
  /// Every viewpoint that was navigable when the node was created. Never shrinks.
  std::vector<PanoramaView> panorama_views;
  /// Unvisited viewpoints only, ordered by view index.
  std::vector<SubNode> live_subnodes;
  int visited_step = 0;
};

struct MemoryEdge {
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  OrientationFeature orientation;
};

struct MemoryPath {
  std::vector<NodeId> nodes;
  double length = 0.0;
};

/// Directed topological map of the places visited in one episode.
///
/// Nodes are visited places, edges carry the orientation under which the
/// target was seen from the source, and each node keeps the sub-nodes it
/// observed but nobody has visited yet. All iteration orders are by node id
/// and then view index.
class SceneMemory {
 public:
  static SceneMemory init(const Observation& start);

  /// Records arrival at `visited` with the panorama `obs` taken there.
  ///
  /// Every live sub-node (on any node) whose target lies within `eps` of
  /// `visited` is consumed and turned into an edge towards the new node.
  /// Re-visiting a known place only moves `current`.
  void extend(const Position& visited, const Observation& obs, double eps = kDefaultMatchRadius);

  /// Nodes owning at least one live sub-node.
  std::vector<NodeId> frontiers() const;

  /// Euclidean-weighted shortest path; ties go to the lexicographically
  /// smallest node sequence.
  MemoryPath shortest_path(NodeId from, NodeId to) const;

  /// All live sub-nodes ordered by (node id, view index).
  std::vector<SubNode> global_action_space() const;

  const std::map<NodeId, MemoryNode>& nodes() const { return nodes_; }
  const MemoryNode& node(NodeId id) const;
  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const std::vector<MemoryEdge>& out_edges(NodeId id) const;
  std::size_t edge_count() const;
  NodeId current() const { return current_; }
  int step() const { return step_; }

  /// Node whose position lies within `eps` of `p`, or kNoNode.
  NodeId node_near(const Vec3& p, double eps) const;
  /// Every node reaches every other node along directed edges.
  bool is_strongly_connected() const;

  nlohmann::json to_json() const;
  static SceneMemory from_json(const nlohmann::json& j);

 private:
  void add_edge(NodeId from, NodeId to, const OrientationFeature& o);

  std::map<NodeId, MemoryNode> nodes_;
  std::map<NodeId, std::vector<MemoryEdge>> edges_;
  NodeId current_ = kNoNode;
  int step_ = 0;
};

}  // namespace ssmnav
