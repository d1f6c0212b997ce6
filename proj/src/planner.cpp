#include "ssmnav/planner.hpp"

#include "ssmnav/json_util.hpp"

#include <algorithm>

namespace ssmnav {

std::string to_string(DecisionMode m) {
  switch (m) {
    case DecisionMode::kFrontier: return "frontier";
    case DecisionMode::kGlobal: return "global-onestep";
    case DecisionMode::kLocal: return "local";
  }
  return "?";
}

DecisionMode decision_mode_from_string(const std::string& s) {
  if (s == "frontier") return DecisionMode::kFrontier;
  if (s == "global-onestep" || s == "global") return DecisionMode::kGlobal;
  if (s == "local") return DecisionMode::kLocal;
  throw ConfigError("unknown decision mode '" + s + "' (frontier | global-onestep | local)");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::kStopped: return "stopped";
    case StopReason::kMaxRounds: return "max_steps";
    case StopReason::kForcedStop: return "forced_stop";
  }
  return "?";
}

int argmax(const Vec& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

int Chooser::operator()(const Vec& probs) {
  if (probs.size() == 0) throw InvariantError("choosing from an empty distribution");
  if (sampling_ == Sampling::kGreedy) return argmax(probs);
  std::discrete_distribution<int> pick(probs.data(), probs.data() + probs.size());
  return pick(rng_);
}

std::vector<NodeId> frontier_candidates(const SceneMemory& mem) {
  auto out = mem.frontiers();
  if (!std::binary_search(out.begin(), out.end(), mem.current())) {
    out.insert(std::lower_bound(out.begin(), out.end(), mem.current()), mem.current());
  }
  return out;
}

std::vector<SubNode> subnode_candidates(const SceneMemory& mem, NodeId node) {
  const auto& n = mem.node(node);
  std::vector<SubNode> out = n.live_subnodes;
  out.push_back(make_stop(n));
  return out;
}

std::vector<SubNode> global_candidates(const SceneMemory& mem) {
  auto out = mem.global_action_space();
  out.push_back(make_stop(mem.node(mem.current())));
  return out;
}

namespace {

Decision forced_stop(const SceneMemory& mem, DecisionMode mode) {
  Decision d;
  d.mode = mode;
  d.frontier = mem.current();
  d.chosen = make_stop(mem.node(mem.current()));
  d.forced_stop = true;
  return d;
}

Choice make_choice(Distribution dist, int label, Supervision supervision, Chooser& chooser) {
  Choice c;
  c.label = label;
  c.index = supervision == Supervision::kTeacherForcing ? label : chooser(dist.probs);
  if (c.index < 0 || c.index >= dist.probs.size()) throw InvariantError("choice outside the candidate list");
  c.dist = std::move(dist);
  return c;
}

}  // namespace

Decision decide(PolicyGraph& graph, const SceneMemory& mem, const EnrichedMemory& enriched,
                const NavState& state, DecisionMode mode, Chooser& chooser) {
  if (mem.global_action_space().empty()) return forced_stop(mem, mode);
  Decision d;
  d.mode = mode;
  switch (mode) {
    case DecisionMode::kFrontier: {
      d.frontier_candidates = frontier_candidates(mem);
      d.frontier_choice =
          make_choice(graph.score_frontiers(enriched, state, d.frontier_candidates), -1, Supervision::kNone, chooser);
      d.frontier = d.frontier_candidates[d.frontier_choice->index];
      d.candidates = subnode_candidates(mem, d.frontier);
      d.choice = make_choice(graph.score_subnodes(state, d.candidates), -1, Supervision::kNone, chooser);
      break;
    }
    case DecisionMode::kGlobal: {
      d.candidates = global_candidates(mem);
      d.choice = make_choice(graph.score_global(enriched, state, d.candidates), -1, Supervision::kNone, chooser);
      d.frontier = d.candidates[d.choice.index].parent;
      break;
    }
    case DecisionMode::kLocal: {
      d.frontier = mem.current();
      d.candidates = subnode_candidates(mem, d.frontier);
      d.choice = make_choice(graph.score_subnodes(state, d.candidates), -1, Supervision::kNone, chooser);
      break;
    }
  }
  d.chosen = d.candidates[d.choice.index];
  return d;
}

std::vector<NodeId> traverse(const EnvironmentGraph& env, SceneMemory& mem, PolicyGraph& graph, ad::Var& h,
                             ad::Var x, NodeId target, double match_radius) {
  std::vector<NodeId> entered;
  if (target == mem.current()) return entered;
  const MemoryPath path = mem.shortest_path(mem.current(), target);
  for (std::size_t i = 1; i < path.nodes.size(); ++i) {
    const NodeId v = path.nodes[i];
    const Observation obs = env.observe(v);
    mem.extend(env.where(v), obs, match_radius);
    h = graph.update_state(h, x, obs);
    entered.push_back(v);
  }
  return entered;
}

ExecuteResult execute(const EnvironmentGraph& env, SceneMemory& mem, PolicyGraph& graph, ad::Var& h, ad::Var x,
                      const Decision& decision, double match_radius) {
  ExecuteResult result;
  result.traversed = traverse(env, mem, graph, h, x, decision.frontier, match_radius);
  result.state_updates = int(result.traversed.size());
  if (decision.stops()) return result;
  const NodeId u = env.step(mem.current(), decision.chosen);
  const Observation obs = env.observe(u);
  mem.extend(env.where(u), obs, match_radius);
  h = graph.update_state(h, x, obs);
  ++result.state_updates;
  result.arrived = u;
  return result;
}

Trajectory run_episode(const EnvironmentGraph& env, const Episode& episode, const PolicyParams& params,
                       ad::Tape& tape, const RolloutOptions& options) {
  if (options.supervision != Supervision::kNone && options.teacher == nullptr) {
    throw InvariantError("supervised rollout without a teacher");
  }
  PolicyGraph graph(params, tape);
  Chooser chooser(options.sampling, options.seed);
  const auto supervised = options.supervision;
  const NodeId goal = episode.goal;

  Trajectory traj;
  traj.episode_id = episode.id;
  traj.mode = options.mode;
  ad::Var x = graph.encode(episode.instruction);
  const Observation first = env.observe(episode.start);
  SceneMemory mem = SceneMemory::init(first);
  ad::Var h = graph.update_state(graph.zero_state(), x, first);
  traj.state_updates = 1;
  traj.path.push_back(episode.start);
  traj.stop_reason = StopReason::kMaxRounds;

  auto label_frontier = [&](const std::vector<NodeId>& cands) {
    return supervised == Supervision::kNone ? -1 : options.teacher->frontier(mem, cands);
  };
  auto label_subnode = [&](const std::vector<SubNode>& cands) {
    return supervised == Supervision::kNone ? -1 : options.teacher->subnode(mem, cands);
  };

  for (int round = 0; round < options.max_rounds; ++round) {
    RoundRecord rec;
    rec.memory_step = mem.step();
    rec.from = mem.current();
    rec.dist_before = env.geodesic(mem.current(), goal);
    rec.state_summary = h.value().col(0);
    if (options.keep_memory_snapshots) rec.memory_snapshot = mem.to_json();

    if (mem.global_action_space().empty()) {
      rec.decision = forced_stop(mem, options.mode);
      rec.dist_at_frontier = rec.dist_after = rec.dist_before;
      traj.rounds.push_back(std::move(rec));
      traj.stop_reason = StopReason::kForcedStop;
      break;
    }

    NavState state = graph.ground(h, x);
    EnrichedMemory enriched = graph.assemble(mem, state);
    graph.propagate(enriched, mem, params.config().reasoning_steps);

    Decision& d = rec.decision;
    d.mode = options.mode;
    switch (options.mode) {
      case DecisionMode::kFrontier: {
        d.frontier_candidates = frontier_candidates(mem);
        d.frontier_choice = make_choice(graph.score_frontiers(enriched, state, d.frontier_candidates),
                                        label_frontier(d.frontier_candidates), supervised, chooser);
        d.frontier = d.frontier_candidates[d.frontier_choice->index];
        // States follow the observations met on the way to the frontier.
        rec.traversed = traverse(env, mem, graph, h, x, d.frontier, options.match_radius);
        traj.state_updates += int(rec.traversed.size());
        if (!rec.traversed.empty()) state = graph.ground(h, x);
        d.candidates = subnode_candidates(mem, d.frontier);
        d.choice = make_choice(graph.score_subnodes(state, d.candidates), label_subnode(d.candidates), supervised,
                               chooser);
        break;
      }
      case DecisionMode::kGlobal: {
        d.candidates = global_candidates(mem);
        d.choice = make_choice(graph.score_global(enriched, state, d.candidates), label_subnode(d.candidates),
                               supervised, chooser);
        d.frontier = d.candidates[d.choice.index].parent;
        break;
      }
      case DecisionMode::kLocal: {
        d.frontier = mem.current();
        d.candidates = subnode_candidates(mem, d.frontier);
        d.choice = make_choice(graph.score_subnodes(state, d.candidates), label_subnode(d.candidates), supervised,
                               chooser);
        break;
      }
    }
    d.chosen = d.candidates[d.choice.index];

    if (d.frontier != mem.current()) {
      rec.traversed = traverse(env, mem, graph, h, x, d.frontier, options.match_radius);
      traj.state_updates += int(rec.traversed.size());
    }
    traj.path.insert(traj.path.end(), rec.traversed.begin(), rec.traversed.end());
    rec.dist_at_frontier = env.geodesic(mem.current(), goal);

    if (d.stops()) {
      rec.dist_after = rec.dist_at_frontier;
      traj.rounds.push_back(std::move(rec));
      traj.stop_reason = StopReason::kStopped;
      break;
    }
    ExecuteResult moved = execute(env, mem, graph, h, x, d, options.match_radius);
    traj.state_updates += moved.state_updates;
    rec.arrived = moved.arrived;
    traj.path.push_back(moved.arrived);
    rec.dist_after = env.geodesic(mem.current(), goal);
    traj.rounds.push_back(std::move(rec));
  }
  traj.final_node = mem.current();
  traj.memory = std::move(mem);
  return traj;
}

Trajectory rollout(const EnvironmentGraph& env, const Episode& episode, const PolicyParams& params,
                   const RolloutOptions& options) {
  ad::Tape tape(&params.tensors(), false);
  return run_episode(env, episode, params, tape, options);
}

double path_length(const EnvironmentGraph& env, const std::vector<NodeId>& path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += (env.position(path[i]) - env.position(path[i - 1])).norm();
  return len;
}

namespace {

nlohmann::json subnode_json(const SubNode& s) {
  return {{"parent", s.parent},
          {"heading", s.view.heading},
          {"elevation", s.view.elevation},
          {"target", vec3_to_json(s.target)},
          {"stop", s.is_stop}};
}

}  // namespace

std::vector<nlohmann::json> trajectory_log(const Trajectory& t) {
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < t.rounds.size(); ++i) {
    const auto& r = t.rounds[i];
    const auto& d = r.decision;
    nlohmann::json j{{"episode", t.episode_id},
                     {"round", i},
                     {"mode", to_string(t.mode)},
                     {"memory_step", r.memory_step},
                     {"from", r.from},
                     {"frontier", d.frontier},
                     {"chosen", subnode_json(d.chosen)},
                     {"forced_stop", d.forced_stop},
                     {"traversed", r.traversed},
                     {"arrived", r.arrived},
                     {"dist_before", r.dist_before},
                     {"dist_at_frontier", r.dist_at_frontier},
                     {"dist_after", r.dist_after},
                     {"h_norm", r.state_summary.norm()}};
    if (d.frontier_choice) {
      j["frontier_candidates"] = d.frontier_candidates;
      j["frontier_probs"] = vec_to_json(d.frontier_choice->dist.probs);
    }
    if (d.choice.index >= 0) j["probs"] = vec_to_json(d.choice.dist.probs);
    if (r.memory_snapshot) j["memory"] = *r.memory_snapshot;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace ssmnav
