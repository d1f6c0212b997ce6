#pragma once

#include "ssmnav/environment.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ssmnav {

using NodeDistance = std::function<double(NodeId, NodeId)>;

enum class DistanceKind { kGeodesic, kEuclidean };

NodeDistance node_distance(const EnvironmentGraph& env, DistanceKind kind = DistanceKind::kGeodesic);

/// Sum of straight-line hop lengths along `path`.
double polyline_length(const EnvironmentGraph& env, const std::vector<NodeId>& path);

/// Dynamic time warping cost between node sequences.
double dtw(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d);
double ndtw(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d, double radius);

/// Coverage weighted by length score. `p_length` and `r_length` are path
/// lengths in meters.
double cls(const std::vector<NodeId>& p, const std::vector<NodeId>& r, const NodeDistance& d, double radius,
           double p_length, double r_length);

/// success * shortest / max(shortest, taken)
double spl(bool success, double shortest, double taken);

struct EpisodeMetrics {
  std::int64_t episode_id = 0;
  double sr = 0, ne = 0, tl = 0, or_ = 0, spl = 0, cls = 0, ndtw = 0, sdtw = 0;
};

/// All eight metrics for the agent path `path` (every node occupied, in order).
EpisodeMetrics score_episode(const EnvironmentGraph& env, const Episode& episode, const std::vector<NodeId>& path,
                             DistanceKind kind = DistanceKind::kGeodesic);

struct MetricReport {
  std::string label;
  double success_radius = 3.0;
  std::vector<EpisodeMetrics> episodes;
  EpisodeMetrics mean;  // episode_id unused

  void add(const EpisodeMetrics& m) { episodes.push_back(m); }
  /// Recomputes `mean` from `episodes`.
  void finalize();
  std::size_t count() const { return episodes.size(); }

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Header and one row per report: label,SR,NE,TL,OR,SPL,CLS,nDTW,SDTW,count.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricReport& r);
/// Per-episode rows of a single report.
std::string metrics_episode_csv(const MetricReport& r);

}  // namespace ssmnav
