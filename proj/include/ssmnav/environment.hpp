#pragma once

#include "ssmnav/instructions.hpp"
#include "ssmnav/observation.hpp"
#include "ssmnav/scene_memory.hpp"
#include "ssmnav/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <vector>

namespace ssmnav {

struct EnvParams {
  int n_nodes = 24;
  double radius = 5.5;          // connection radius, meters
  double min_separation = 3.2;  // no two places closer than this
  double area_side = 0.0;       // 0 picks 4 * sqrt(n_nodes)
  double z_jitter = 0.8;
  int vocab = 10;  // landmark count
  int d_f = 32;
  double sigma = 0.1;
  int headings = 12;
  int elevations = 3;
  int max_retries = 200;
  /// Seeds the landmark embeddings; environments sharing it share appearances.
  std::uint64_t appearance_seed = 0;

  friend bool operator==(const EnvParams&, const EnvParams&) = default;
};

/// Ground-truth world the agent navigates but never sees directly.
/// Immutable after construction; safe to share across threads.
class EnvironmentGraph {
 public:
  static EnvironmentGraph generate(std::uint64_t seed, const EnvParams& params);

  /// Assembles a graph from stored parts and recomputes geodesics.
  EnvironmentGraph(std::uint64_t seed, EnvParams params, std::vector<Vec3> positions,
                   std::vector<std::vector<NodeId>> nav, std::vector<int> landmark, Mat landmark_embeddings);

  std::uint64_t seed() const { return seed_; }
  const EnvParams& params() const { return params_; }
  int size() const { return static_cast<int>(positions_.size()); }
  const Vec3& position(NodeId id) const;
  const std::vector<NodeId>& neighbors(NodeId id) const;
  int landmark(NodeId id) const;
  const Mat& landmark_embeddings() const { return landmark_embeddings_; }
  const std::vector<Vec3>& positions() const { return positions_; }
  const std::vector<int>& landmarks() const { return landmark_; }

  /// Shortest-path distance over the navigability graph, meters.
  double geodesic(NodeId a, NodeId b) const;
  /// Geodesic node sequence; ties go to the lexicographically smallest.
  std::vector<NodeId> geodesic_path(NodeId a, NodeId b) const;
  int hops(NodeId a, NodeId b) const { return static_cast<int>(geodesic_path(a, b).size()) - 1; }

  /// Place at `coords` (within 1e-6 m), or kNoNode.
  NodeId locate(const Vec3& coords) const;

  Observation observe(NodeId at) const;

  /// Destination of a non-stop sub-node chosen while standing at `at`.
  NodeId step(NodeId at, const SubNode& chosen) const;

  bool is_connected() const;
  Position where(NodeId id) const { return {id, position(id)}; }

  nlohmann::json to_json() const;
  static EnvironmentGraph from_json(const nlohmann::json& j);

  friend bool operator==(const EnvironmentGraph& a, const EnvironmentGraph& b);

 private:
  void check(NodeId id) const;
  void compute_geodesics();

  std::uint64_t seed_;
  EnvParams params_;
  std::vector<Vec3> positions_;
  std::vector<std::vector<NodeId>> nav_;
  std::vector<int> landmark_;
  Mat landmark_embeddings_;
  Mat geodesic_;  // all pairs
};

/// View cell nearest to a direction; ties resolve to the lower index.
ViewIndex view_cell(double heading, double elevation, int headings, int elevations);

struct EpisodeParams {
  int min_len = 3;  // geodesic hops
  int max_len = 6;
  int trap_branches = 1;
  /// Traps must also match the action word, so the instruction cannot tell
  /// the branches apart and only backtracking recovers.
  bool ambiguous_traps = false;
  double success_radius = 3.0;
  int max_retries = 2000;
};

struct Episode {
  std::int64_t id = 0;
  std::uint64_t env_seed = 0;
  NodeId start = kNoNode;
  NodeId goal = kNoNode;
  std::vector<NodeId> gt_path;
  std::vector<int> instruction;
  double success_radius = 3.0;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Junctions on `path` with an off-path neighbor showing the same landmark as
/// the next on-path node; with `same_action` the hop there must also get the
/// same action word.
int count_trap_branches(const EnvironmentGraph& env, const std::vector<NodeId>& path, bool same_action = false);

Episode make_episode(const EnvironmentGraph& env, std::uint64_t seed, const EpisodeParams& params,
                     std::int64_t id = 0);

/// The template instruction for `path` in `env`.
std::vector<int> instruction_for(const EnvironmentGraph& env, const std::vector<NodeId>& path);

nlohmann::json env_params_to_json(const EnvParams& p);
EnvParams env_params_from_json(const nlohmann::json& j);

}  // namespace ssmnav
