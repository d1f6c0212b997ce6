#include "ssmnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ssmnav {

NodeDistance node_distance(const EnvironmentGraph& env, DistanceKind kind) {
  if (kind == DistanceKind::kGeodesic) return [&env](NodeId a, NodeId b) { return env.geodesic(a, b); };
  return [&env](NodeId a, NodeId b) { return (env.position(a) - env.position(b)).norm(); };
}

double polyline_length(const EnvironmentGraph& env, const std::vector<NodeId>& path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += (env.position(path[i]) - env.position(path[i - 1])).norm();
  return len;
}

double dtw(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d) {
  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = p.size(), m = r.size();
  if (n == 0 || m == 0) throw ValidationError("dtw of an empty sequence");
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = d(p[i - 1], r[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double ndtw(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d, double radius) {
  return std::exp(-dtw(p, r, d) / (double(r.size()) * radius));
}

double cls(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d, double radius,
           double p_length, double r_length) {
  if (p.empty() || r.empty()) throw ValidationError("cls of an empty sequence");
  double pc = 0.0;
  for (NodeId rn : r) {
    double best = std::numeric_limits<double>::infinity();
    for (NodeId pn : p) best = std::min(best, d(rn, pn));
    pc += std::exp(-best / radius);
  }
  pc /= double(r.size());
  const double epl = pc * r_length;
  const double denom = epl + std::abs(epl - p_length);
  const double ls = denom > 0.0 ? epl / denom : 1.0;
  return pc * ls;
}

double spl(bool success, double shortest, double taken) {
  if (!success) return 0.0;
  const double denom = std::max(shortest, taken);
  return denom > 0.0 ? shortest / denom : 1.0;
}

EpisodeMetrics score_episode(const EnvironmentGraph& env, const Episode& episode, const std::vector<NodeId>& path,
                             DistanceKind kind) {
  if (path.empty()) throw ValidationError("empty agent path");
  const NodeDistance d = node_distance(env, kind);
  const double radius = episode.success_radius;
  EpisodeMetrics m;
  m.episode_id = episode.id;
  m.ne = d(path.back(), episode.goal);
  m.sr = m.ne < radius ? 1.0 : 0.0;
  m.tl = polyline_length(env, path);
  double closest = std::numeric_limits<double>::infinity();
  for (NodeId n : path) closest = std::min(closest, d(n, episode.goal));
  m.or_ = closest < radius ? 1.0 : 0.0;
  m.spl = spl(m.sr > 0.0, d(episode.start, episode.goal), m.tl);
  m.ndtw = ndtw(path, episode.gt_path, d, radius);
  m.sdtw = m.sr * m.ndtw;
  m.cls = cls(path, episode.gt_path, d, radius, m.tl, polyline_length(env, episode.gt_path));
  return m;
}

void MetricReport::finalize() {
  mean = EpisodeMetrics{};
  if (episodes.empty()) return;
  for (const auto& e : episodes) {
    mean.sr += e.sr;
    mean.ne += e.ne;
    mean.tl += e.tl;
    mean.or_ += e.or_;
    mean.spl += e.spl;
    mean.cls += e.cls;
    mean.ndtw += e.ndtw;
    mean.sdtw += e.sdtw;
  }
  const double n = double(episodes.size());
  mean.sr /= n;
  mean.ne /= n;
  mean.tl /= n;
  mean.or_ /= n;
  mean.spl /= n;
  mean.cls /= n;
  mean.ndtw /= n;
  mean.sdtw /= n;
}

namespace {

nlohmann::json metrics_json(const EpisodeMetrics& m) {
  return {{"SR", m.sr},   {"NE", m.ne},   {"TL", m.tl},     {"OR", m.or_},
          {"SPL", m.spl}, {"CLS", m.cls}, {"nDTW", m.ndtw}, {"SDTW", m.sdtw}};
}

EpisodeMetrics metrics_from_json(const nlohmann::json& j) {
  EpisodeMetrics m;
  m.sr = j.at("SR");
  m.ne = j.at("NE");
  m.tl = j.at("TL");
  m.or_ = j.at("OR");
  m.spl = j.at("SPL");
  m.cls = j.at("CLS");
  m.ndtw = j.at("nDTW");
  m.sdtw = j.at("SDTW");
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : episodes) {
    auto j = metrics_json(e);
    j["episode"] = e.episode_id;
    per.push_back(std::move(j));
  }
  return {{"label", label},
          {"success_radius", success_radius},
          {"count", episodes.size()},
          {"mean", metrics_json(mean)},
          {"episodes", std::move(per)}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.label = j.at("label");
  r.success_radius = j.at("success_radius");
  for (const auto& e : j.at("episodes")) {
    auto m = metrics_from_json(e);
    m.episode_id = e.at("episode");
    r.episodes.push_back(m);
  }
  if (r.episodes.size() != j.at("count").get<std::size_t>()) throw ParseError("report count mismatch", 0);
  r.mean = metrics_from_json(j.at("mean"));
  return r;
}

std::string metrics_csv_header() { return "label,SR,NE,TL,OR,SPL,CLS,nDTW,SDTW,count"; }

std::string metrics_csv_row(const MetricReport& r) {
  const auto& m = r.mean;
  std::ostringstream s;
  s << r.label << ',' << fmt(m.sr) << ',' << fmt(m.ne) << ',' << fmt(m.tl) << ',' << fmt(m.or_) << ','
    << fmt(m.spl) << ',' << fmt(m.cls) << ',' << fmt(m.ndtw) << ',' << fmt(m.sdtw) << ',' << r.count();
  return s.str();
}

std::string metrics_episode_csv(const MetricReport& r) {
  std::ostringstream s;
  s << "episode,SR,NE,TL,OR,SPL,CLS,nDTW,SDTW\n";
  for (const auto& m : r.episodes) {
    s << m.episode_id << ',' << fmt(m.sr) << ',' << fmt(m.ne) << ',' << fmt(m.tl) << ',' << fmt(m.or_) << ','
      << fmt(m.spl) << ',' << fmt(m.cls) << ',' << fmt(m.ndtw) << ',' << fmt(m.sdtw) << '\n';
  }
  return s.str();
}

}  // namespace ssmnav
