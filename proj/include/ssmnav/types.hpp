#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssmnav {

using NodeId = std::int64_t;
using Vec3 = Eigen::Vector3d;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr NodeId kNoNode = -1;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InconsistentTransition : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when an internal invariant is violated (a bug, not bad input).
struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A place in the world: opaque id plus metric coordinates.
struct Position {
  NodeId id = kNoNode;
  Vec3 coords = Vec3::Zero();
};

/// Index of one single view in the discretized panorama.
struct ViewIndex {
  int heading = 0;
  int elevation = 0;

  int flat(int headings) const { return elevation * headings + heading; }
  friend bool operator==(const ViewIndex&, const ViewIndex&) = default;
  friend auto operator<=>(const ViewIndex& a, const ViewIndex& b) {
    return a.elevation != b.elevation ? a.elevation <=> b.elevation : a.heading <=> b.heading;
  }
};

/// (cos heading, sin heading, cos elevation, sin elevation), environment frame.
struct OrientationFeature {
  Eigen::Vector4d raw = Eigen::Vector4d::Zero();

  static OrientationFeature from_angles(double heading, double elevation) {
    OrientationFeature o;
    o.raw << std::cos(heading), std::sin(heading), std::cos(elevation), std::sin(elevation);
    return o;
  }

  bool is_unit(double tol = 1e-9) const {
    return std::abs(raw[0] * raw[0] + raw[1] * raw[1] - 1.0) <= tol &&
           std::abs(raw[2] * raw[2] + raw[3] * raw[3] - 1.0) <= tol;
  }

  /// raw repeated `tiles` times.
  Vec tiled(int tiles) const {
    Vec out(4 * tiles);
    for (int t = 0; t < tiles; ++t) out.segment<4>(4 * t) = raw;
    return out;
  }
};

}  // namespace ssmnav
