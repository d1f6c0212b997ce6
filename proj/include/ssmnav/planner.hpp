#pragma once

#include "ssmnav/environment.hpp"
#include "ssmnav/policy.hpp"
#include "ssmnav/scene_memory.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ssmnav {

enum class DecisionMode { kFrontier, kGlobal, kLocal };
enum class Sampling { kGreedy, kSample };

std::string to_string(DecisionMode m);
DecisionMode decision_mode_from_string(const std::string& s);

/// One recorded choice among scored candidates.
struct Choice {
  Distribution dist;
  int index = -1;  // chosen entry
  int label = -1;  // teacher entry, -1 when unsupervised

  double prob() const { return dist.probs[index]; }
};

struct Decision {
  DecisionMode mode = DecisionMode::kFrontier;
  NodeId frontier = kNoNode;
  SubNode chosen;
  bool forced_stop = false;

  // Frontier mode only: the stage-one choice over candidate frontiers.
  std::vector<NodeId> frontier_candidates;
  std::optional<Choice> frontier_choice;

  // The sub-node (or single-stage) choice.
  std::vector<SubNode> candidates;
  Choice choice;

  bool stops() const { return chosen.is_stop; }
};

/// Picks an entry of a distribution.
class Chooser {
 public:
  Chooser(Sampling sampling, std::uint64_t seed) : sampling_(sampling), rng_(seed) {}
  int operator()(const Vec& probs);
  Sampling sampling() const { return sampling_; }

 private:
  Sampling sampling_;
  std::mt19937_64 rng_;
};

/// First index of the largest entry.
int argmax(const Vec& v);

/// Stage-one candidates: frontiers plus the current node (where only STOP may
/// be available), sorted by id.
std::vector<NodeId> frontier_candidates(const SceneMemory& mem);
/// Live sub-nodes of `node` followed by its synthetic STOP.
std::vector<SubNode> subnode_candidates(const SceneMemory& mem, NodeId node);
/// All live sub-nodes followed by a STOP at the current node.
std::vector<SubNode> global_candidates(const SceneMemory& mem);

/// Both decision stages scored from the same state.
Decision decide(PolicyGraph& graph, const SceneMemory& mem, const EnrichedMemory& enriched,
                const NavState& state, DecisionMode mode, Chooser& chooser);

struct ExecuteResult {
  std::vector<NodeId> traversed;  // nodes entered while moving to the frontier
  NodeId arrived = kNoNode;       // newly reached place, kNoNode on STOP
  int state_updates = 0;
};

/// Moves along the memory's shortest path to `target`, updating the state at
/// every node entered. Returns the nodes entered.
std::vector<NodeId> traverse(const EnvironmentGraph& env, SceneMemory& mem, PolicyGraph& graph, ad::Var& h,
                             ad::Var x, NodeId target, double match_radius = kDefaultMatchRadius);

/// Carries out a decision: traverse to its frontier if needed, then (unless it
/// stops) step into the chosen sub-node, extend the memory and update the state.
ExecuteResult execute(const EnvironmentGraph& env, SceneMemory& mem, PolicyGraph& graph, ad::Var& h, ad::Var x,
                      const Decision& decision, double match_radius = kDefaultMatchRadius);

/// Teacher labels for supervision: picks the frontier among candidates, and
/// the sub-node among a node's candidates (index into the candidate lists).
struct Teacher {
  std::function<int(const SceneMemory&, const std::vector<NodeId>& frontiers)> frontier;
  std::function<int(const SceneMemory&, const std::vector<SubNode>& candidates)> subnode;
};

enum class Supervision { kNone, kTeacherForcing, kStudentForcing };

struct RolloutOptions {
  DecisionMode mode = DecisionMode::kFrontier;
  Sampling sampling = Sampling::kGreedy;
  int max_rounds = 20;
  double match_radius = kDefaultMatchRadius;
  std::uint64_t seed = 0;
  Supervision supervision = Supervision::kNone;
  const Teacher* teacher = nullptr;
  bool keep_memory_snapshots = false;
};

enum class StopReason { kStopped, kMaxRounds, kForcedStop };
std::string to_string(StopReason r);

struct RoundRecord {
  int memory_step = 0;
  NodeId from = kNoNode;
  Decision decision;
  std::vector<NodeId> traversed;  // nodes entered on the way to the frontier
  NodeId arrived = kNoNode;       // new node reached, kNoNode on STOP
  double dist_before = 0.0;       // geodesic to goal at round start
  double dist_at_frontier = 0.0;  // after traversal
  double dist_after = 0.0;        // end of round
  Vec state_summary;              // h at round start
  std::optional<nlohmann::json> memory_snapshot;
};

struct Trajectory {
  std::int64_t episode_id = 0;
  DecisionMode mode = DecisionMode::kFrontier;
  std::vector<NodeId> path;  // every node occupied, in order, starting at the start
  std::vector<RoundRecord> rounds;
  NodeId final_node = kNoNode;
  StopReason stop_reason = StopReason::kMaxRounds;
  int state_updates = 0;
  SceneMemory memory;
};

/// Runs the agent loop on `tape`: assemble, reason, decide, execute; until STOP
/// or the round budget is spent.
Trajectory run_episode(const EnvironmentGraph& env, const Episode& episode, const PolicyParams& params,
                       ad::Tape& tape, const RolloutOptions& options);

/// Convenience: greedy or sampled rollout on a throwaway, non-recording tape.
Trajectory rollout(const EnvironmentGraph& env, const Episode& episode, const PolicyParams& params,
                   const RolloutOptions& options);

/// Trajectory length along `path`, meters.
double path_length(const EnvironmentGraph& env, const std::vector<NodeId>& path);

/// One JSON record per decision round.
std::vector<nlohmann::json> trajectory_log(const Trajectory& t);

}  // namespace ssmnav
