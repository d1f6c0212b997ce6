#include "ssmnav/environment.hpp"

#include "ssmnav/json_util.hpp"
#include "ssmnav/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <set>

namespace ssmnav {
namespace {

constexpr std::uint64_t kTagLayout = 1;
constexpr std::uint64_t kTagLandmarks = 2;
constexpr std::uint64_t kTagViewNoise = 3;
constexpr std::uint64_t kTagBackground = 4;
constexpr std::uint64_t kTagEpisode = 5;
constexpr std::uint64_t kTagAppearance = 6;
constexpr double kLocateTolerance = 1e-6;

double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0) d += 360.0;
  return d;
}

bool connected(const std::vector<std::vector<NodeId>>& nav) {
  if (nav.empty()) return false;
  std::vector<char> seen(nav.size(), 0);
  std::vector<NodeId> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    for (NodeId u : nav[v]) {
      if (!seen[u]) {
        seen[u] = 1;
        ++count;
        stack.push_back(u);
      }
    }
  }
  return count == nav.size();
}

}  // namespace

ViewIndex view_cell(double heading, double elevation, int headings, int elevations) {
  const double hdeg = wrap_degrees(heading * 180.0 / std::numbers::pi);
  const double step = 360.0 / headings;
  ViewIndex cell;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < headings; ++i) {
    double d = std::abs(hdeg - i * step);
    d = std::min(d, 360.0 - d);
    if (d < best) {
      best = d;
      cell.heading = i;
    }
  }
  // Elevation bands are 30 degrees apart, centred on the horizon.
  const double edeg = elevation * 180.0 / std::numbers::pi;
  best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < elevations; ++i) {
    const double centre = (i - (elevations - 1) / 2.0) * 30.0;
    const double d = std::abs(edeg - centre);
    if (d < best) {
      best = d;
      cell.elevation = i;
    }
  }
  return cell;
}

EnvironmentGraph::EnvironmentGraph(std::uint64_t seed, EnvParams params, std::vector<Vec3> positions,
                                   std::vector<std::vector<NodeId>> nav, std::vector<int> landmark,
                                   Mat landmark_embeddings)
    : seed_(seed),
      params_(params),
      positions_(std::move(positions)),
      nav_(std::move(nav)),
      landmark_(std::move(landmark)),
      landmark_embeddings_(std::move(landmark_embeddings)) {
  if (positions_.size() != nav_.size() || positions_.size() != landmark_.size()) {
    throw ValidationError("environment parts disagree in size");
  }
  if (landmark_embeddings_.rows() != params_.vocab || landmark_embeddings_.cols() != params_.d_f) {
    throw ValidationError("landmark embedding shape does not match params");
  }
  for (std::size_t v = 0; v < nav_.size(); ++v) {
    if (!positions_[v].allFinite()) throw ValidationError("non-finite position");
    if (landmark_[v] < 0 || landmark_[v] >= params_.vocab) throw ValidationError("landmark out of range");
    std::sort(nav_[v].begin(), nav_[v].end());
    for (NodeId u : nav_[v]) {
      if (u < 0 || u >= static_cast<NodeId>(nav_.size()) || u == static_cast<NodeId>(v)) {
        throw ValidationError("bad navigability entry");
      }
    }
  }
  compute_geodesics();
}

EnvironmentGraph EnvironmentGraph::generate(std::uint64_t seed, const EnvParams& params) {
  if (params.n_nodes < 2) throw ValidationError("environment needs at least 2 nodes");
  if (params.radius <= 0 || params.min_separation < 0 || params.radius < params.min_separation) {
    throw ValidationError("connection radius must be positive and at least the minimum separation");
  }
  if (params.vocab < 1 || params.d_f < 4 || params.headings < 1 || params.elevations < 1 || params.sigma < 0) {
    throw ValidationError("invalid environment parameters");
  }
  const double side = params.area_side > 0 ? params.area_side : 4.0 * std::sqrt(double(params.n_nodes));

  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    auto rng = make_rng({seed, kTagLayout, std::uint64_t(attempt)});
    std::uniform_real_distribution<double> planar(0.0, side);
    std::uniform_real_distribution<double> height(-params.z_jitter, params.z_jitter);
    std::vector<Vec3> pts;
    for (int tries = 0; tries < 200 * params.n_nodes && int(pts.size()) < params.n_nodes; ++tries) {
      const double x = planar(rng);
      const double y = planar(rng);
      const double z = params.z_jitter > 0 ? height(rng) : 0.0;
      Vec3 p(x, y, z);
      bool ok = true;
      for (const auto& q : pts) {
        if ((p - q).norm() < params.min_separation) {
          ok = false;
          break;
        }
      }
      if (ok) pts.push_back(p);
    }
    if (int(pts.size()) < params.n_nodes) continue;

    std::vector<std::vector<NodeId>> nav(pts.size());
    for (std::size_t a = 0; a < pts.size(); ++a) {
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        if ((pts[a] - pts[b]).norm() <= params.radius) {
          nav[a].push_back(NodeId(b));
          nav[b].push_back(NodeId(a));
        }
      }
    }
    if (!connected(nav)) continue;

    auto lrng = make_rng({seed, kTagLandmarks});
    std::uniform_int_distribution<int> pick(0, params.vocab - 1);
    std::vector<int> landmark(pts.size());
    for (auto& l : landmark) l = pick(lrng);
    // Appearance belongs to the landmark class, shared by every environment
    // generated with the same appearance seed.
    auto arng = make_rng({params.appearance_seed, kTagAppearance});
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat emb(params.vocab, params.d_f);
    for (int r = 0; r < params.vocab; ++r) {
      for (int c = 0; c < params.d_f; ++c) emb(r, c) = gauss(arng);
      emb.row(r).normalize();
    }
    return EnvironmentGraph(seed, params, std::move(pts), std::move(nav), std::move(landmark), std::move(emb));
  }
  throw ValidationError("could not generate a connected environment: radius too small for the node count");
}

void EnvironmentGraph::check(NodeId id) const {
  if (id < 0 || id >= size()) throw ValidationError("unknown environment node " + std::to_string(id));
}

const Vec3& EnvironmentGraph::position(NodeId id) const {
  check(id);
  return positions_[id];
}

const std::vector<NodeId>& EnvironmentGraph::neighbors(NodeId id) const {
  check(id);
  return nav_[id];
}

int EnvironmentGraph::landmark(NodeId id) const {
  check(id);
  return landmark_[id];
}

void EnvironmentGraph::compute_geodesics() {
  const int n = size();
  const double inf = std::numeric_limits<double>::infinity();
  geodesic_ = Mat::Constant(n, n, inf);
  using Item = std::pair<double, NodeId>;
  for (int s = 0; s < n; ++s) {
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    geodesic_(s, s) = 0.0;
    queue.push({0.0, s});
    while (!queue.empty()) {
      auto [d, v] = queue.top();
      queue.pop();
      if (d > geodesic_(s, v)) continue;
      for (NodeId u : nav_[v]) {
        const double nd = d + (positions_[v] - positions_[u]).norm();
        if (nd < geodesic_(s, u)) {
          geodesic_(s, u) = nd;
          queue.push({nd, u});
        }
      }
    }
  }
}

double EnvironmentGraph::geodesic(NodeId a, NodeId b) const {
  check(a);
  check(b);
  return geodesic_(a, b);
}

std::vector<NodeId> EnvironmentGraph::geodesic_path(NodeId a, NodeId b) const {
  check(a);
  check(b);
  if (!std::isfinite(geodesic_(a, b))) throw InvariantError("environment is not connected");
  std::vector<NodeId> path{a};
  NodeId at = a;
  while (at != b) {
    const double tol = 1e-9 * std::max(1.0, geodesic_(at, b));
    NodeId next = kNoNode;
    for (NodeId u : nav_[at]) {
      if (std::abs((positions_[at] - positions_[u]).norm() + geodesic_(u, b) - geodesic_(at, b)) <= tol) {
        next = u;
        break;
      }
    }
    if (next == kNoNode) throw InvariantError("geodesic reconstruction failed");
    path.push_back(next);
    at = next;
  }
  return path;
}

NodeId EnvironmentGraph::locate(const Vec3& coords) const {
  for (int v = 0; v < size(); ++v) {
    if ((positions_[v] - coords).norm() <= kLocateTolerance) return v;
  }
  return kNoNode;
}

Observation EnvironmentGraph::observe(NodeId at) const {
  check(at);
  Observation obs;
  obs.at = at;
  obs.position = positions_[at];
  obs.headings = params_.headings;
  obs.elevations = params_.elevations;
  const int d_f = params_.d_f;
  std::normal_distribution<double> gauss(0.0, 1.0);

  obs.views.resize(std::size_t(params_.headings * params_.elevations));
  for (std::size_t cell = 0; cell < obs.views.size(); ++cell) {
    auto rng = make_rng({seed_, kTagBackground, std::uint64_t(at), cell});
    Vec bg(d_f);
    for (int i = 0; i < d_f; ++i) bg[i] = params_.sigma * gauss(rng);
    obs.views[cell] = std::move(bg);
  }
  std::vector<char> filled(obs.views.size(), 0);

  for (NodeId u : nav_[at]) {
    const Vec3 d = positions_[u] - positions_[at];
    const double planar = std::hypot(d.x(), d.y());
    const double heading = std::atan2(d.x(), d.y());
    const double elevation = std::atan2(d.z(), planar);
    NavigableView nv;
    nv.neighbor = u;
    nv.target = positions_[u];
    nv.orientation = OrientationFeature::from_angles(heading, elevation);
    nv.view = view_cell(heading, elevation, params_.headings, params_.elevations);
    auto rng = make_rng({seed_, kTagViewNoise, std::uint64_t(at), std::uint64_t(u)});
    Vec f = landmark_embeddings_.row(landmark_[u]).transpose();
    f.head<4>() += nv.orientation.raw;
    for (int i = 0; i < d_f; ++i) f[i] += params_.sigma * gauss(rng);
    nv.visual = f;
    const int cell = nv.view.flat(params_.headings);
    if (!filled[cell]) {
      obs.views[cell] = f;
      filled[cell] = 1;
    }
    obs.navigable.push_back(std::move(nv));
  }
  return obs;
}

NodeId EnvironmentGraph::step(NodeId at, const SubNode& chosen) const {
  check(at);
  if (chosen.is_stop) throw InconsistentTransition("stop is not a movement");
  if (chosen.parent != at) throw InconsistentTransition("sub-node does not belong to the current place");
  for (NodeId u : nav_[at]) {
    if ((positions_[u] - chosen.target).norm() <= kLocateTolerance) return u;
  }
  throw InconsistentTransition("sub-node target is not navigable from " + std::to_string(at));
}

bool EnvironmentGraph::is_connected() const { return connected(nav_); }

bool operator==(const EnvironmentGraph& a, const EnvironmentGraph& b) {
  return a.seed_ == b.seed_ && a.params_ == b.params_ && a.positions_ == b.positions_ && a.nav_ == b.nav_ &&
         a.landmark_ == b.landmark_ && a.landmark_embeddings_ == b.landmark_embeddings_;
}

nlohmann::json env_params_to_json(const EnvParams& p) {
  return {{"n_nodes", p.n_nodes},         {"radius", p.radius},         {"min_separation", p.min_separation},
          {"area_side", p.area_side},     {"z_jitter", p.z_jitter},     {"vocab", p.vocab},
          {"d_f", p.d_f},                 {"sigma", p.sigma},           {"headings", p.headings},
          {"elevations", p.elevations},   {"max_retries", p.max_retries}, {"appearance_seed", p.appearance_seed}};
}

EnvParams env_params_from_json(const nlohmann::json& j) {
  EnvParams p;
  p.n_nodes = j.at("n_nodes").get<int>();
  p.radius = j.at("radius").get<double>();
  p.min_separation = j.at("min_separation").get<double>();
  p.area_side = j.at("area_side").get<double>();
  p.z_jitter = j.at("z_jitter").get<double>();
  p.vocab = j.at("vocab").get<int>();
  p.d_f = j.at("d_f").get<int>();
  p.sigma = j.at("sigma").get<double>();
  p.headings = j.at("headings").get<int>();
  p.elevations = j.at("elevations").get<int>();
  p.max_retries = j.at("max_retries").get<int>();
  p.appearance_seed = j.at("appearance_seed").get<std::uint64_t>();
  return p;
}

nlohmann::json EnvironmentGraph::to_json() const {
  using nlohmann::json;
  json pos = json::array();
  for (const auto& p : positions_) pos.push_back(vec3_to_json(p));
  json emb = json::array();
  for (int r = 0; r < landmark_embeddings_.rows(); ++r) {
    emb.push_back(vec_to_json(landmark_embeddings_.row(r).transpose()));
  }
  return {{"seed", seed_},           {"params", env_params_to_json(params_)}, {"positions", std::move(pos)},
          {"nav", nav_},             {"landmarks", landmark_},               {"landmark_embeddings", std::move(emb)}};
}

EnvironmentGraph EnvironmentGraph::from_json(const nlohmann::json& j) {
  const EnvParams params = env_params_from_json(j.at("params"));
  std::vector<Vec3> pos;
  for (const auto& p : j.at("positions")) pos.push_back(vec3_from_json(p));
  const auto& jemb = j.at("landmark_embeddings");
  Mat emb(jemb.size(), params.d_f);
  for (std::size_t r = 0; r < jemb.size(); ++r) {
    const Vec row = vec_from_json(jemb[r]);
    if (row.size() != params.d_f) throw ValidationError("landmark embedding width mismatch");
    emb.row(Eigen::Index(r)) = row.transpose();
  }
  return EnvironmentGraph(j.at("seed").get<std::uint64_t>(), params, std::move(pos),
                          j.at("nav").get<std::vector<std::vector<NodeId>>>(),
                          j.at("landmarks").get<std::vector<int>>(), std::move(emb));
}

int count_trap_branches(const EnvironmentGraph& env, const std::vector<NodeId>& path, bool same_action) {
  const std::set<NodeId> on_path(path.begin(), path.end());
  int traps = 0;
  double heading = 0.0;  // the first hop is judged against north
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const Vec3& here = env.position(path[i]);
    const int wanted = env.landmark(path[i + 1]);
    const ActionWord act = hop_action(heading, here, env.position(path[i + 1]));
    for (NodeId u : env.neighbors(path[i])) {
      if (on_path.count(u) || env.landmark(u) != wanted) continue;
      if (same_action && hop_action(heading, here, env.position(u)) != act) continue;
      ++traps;
      break;
    }
    const Vec3 d = env.position(path[i + 1]) - here;
    heading = std::atan2(d.x(), d.y());
  }
  return traps;
}

std::vector<int> instruction_for(const EnvironmentGraph& env, const std::vector<NodeId>& path) {
  std::vector<Vec3> coords;
  std::vector<int> marks;
  for (NodeId v : path) {
    coords.push_back(env.position(v));
    marks.push_back(env.landmark(v));
  }
  return generate_instruction(coords, marks, Vocab(env.params().vocab));
}

Episode make_episode(const EnvironmentGraph& env, std::uint64_t seed, const EpisodeParams& params,
                     std::int64_t id) {
  if (params.min_len < 1 || params.max_len < params.min_len) throw ValidationError("invalid episode length range");
  auto rng = make_rng({seed, kTagEpisode, env.seed()});
  std::uniform_int_distribution<NodeId> pick(0, env.size() - 1);
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    const NodeId start = pick(rng);
    const NodeId goal = pick(rng);
    if (start == goal) continue;
    auto path = env.geodesic_path(start, goal);
    const int hops = int(path.size()) - 1;
    if (hops < params.min_len || hops > params.max_len) continue;
    if (count_trap_branches(env, path, params.ambiguous_traps) < params.trap_branches) continue;
    Episode ep;
    ep.id = id;
    ep.env_seed = env.seed();
    ep.start = start;
    ep.goal = goal;
    ep.instruction = instruction_for(env, path);
    ep.gt_path = std::move(path);
    ep.success_radius = params.success_radius;
    return ep;
  }
  throw ValidationError("episode constraints unsatisfiable in environment " + std::to_string(env.seed()));
}

}  // namespace ssmnav
