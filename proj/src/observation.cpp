#include "ssmnav/observation.hpp"

#include <string>

namespace ssmnav {

void Observation::validate() const {
  if (headings <= 0 || elevations <= 0) throw ValidationError("observation grid must be non-empty");
  if (!position.allFinite()) throw ValidationError("observation position is not finite");
  if (!views.empty() && static_cast<int>(views.size()) != headings * elevations) {
    throw ValidationError("observation has " + std::to_string(views.size()) + " views, expected " +
                          std::to_string(headings * elevations));
  }
  Eigen::Index width = -1;
  for (const auto& v : views) {
    if (width < 0) width = v.size();
    if (v.size() != width || !v.allFinite()) throw ValidationError("malformed panorama view");
  }
  for (const auto& n : navigable) {
    if (n.view.heading < 0 || n.view.heading >= headings || n.view.elevation < 0 ||
        n.view.elevation >= elevations) {
      throw ValidationError("navigable view index out of range");
    }
    if (!n.orientation.is_unit()) throw ValidationError("navigable orientation is not unit length");
    if (!n.target.allFinite()) throw ValidationError("navigable target is not finite");
    if (width < 0) width = n.visual.size();
    if (n.visual.size() != width || n.visual.size() == 0 || !n.visual.allFinite()) {
      throw ValidationError("malformed navigable visual feature");
    }
  }
}

}  // namespace ssmnav
