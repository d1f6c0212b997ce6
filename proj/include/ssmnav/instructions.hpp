#pragma once

#include "ssmnav/types.hpp"

#include <string>
#include <vector>

namespace ssmnav {

enum class ActionWord : int { kForward = 0, kLeft, kRight, kUp, kDown, kStop };
inline constexpr int kActionWords = 6;

/// Token vocabulary: the six action words followed by one word per landmark.
class Vocab {
 public:
  explicit Vocab(int landmarks);

  int size() const { return kActionWords + landmarks_; }
  int landmarks() const { return landmarks_; }
  int action_id(ActionWord w) const { return static_cast<int>(w); }
  int landmark_id(int landmark) const;
  bool is_action(int token) const { return token >= 0 && token < kActionWords; }
  bool is_landmark(int token) const { return token >= kActionWords && token < size(); }
  int landmark_of(int token) const { return token - kActionWords; }

  std::string word(int token) const;
  /// Throws ValidationError for out-of-vocabulary words.
  int id(const std::string& word) const;

  std::string join(const std::vector<int>& tokens) const;
  std::vector<int> split(const std::string& text) const;

 private:
  int landmarks_;
};

/// Action word for a hop, given the heading of the previous hop.
/// Headings are radians, clockwise from north.
ActionWord hop_action(double previous_heading, const Vec3& from, const Vec3& to);

/// Template instruction for a path: per hop an action word and the landmark
/// word of the hop's destination, then `stop`. The first hop is judged
/// against north.
std::vector<int> generate_instruction(const std::vector<Vec3>& path, const std::vector<int>& landmarks,
                                      const Vocab& vocab);

}  // namespace ssmnav
