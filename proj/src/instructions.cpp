#include "ssmnav/instructions.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ssmnav {
namespace {

constexpr const char* kActionNames[kActionWords] = {"forward", "left", "right", "up", "down", "stop"};

double heading_of(const Vec3& from, const Vec3& to) {
  const Vec3 d = to - from;
  return std::atan2(d.x(), d.y());
}

}  // namespace

Vocab::Vocab(int landmarks) : landmarks_(landmarks) {
  if (landmarks <= 0) throw ValidationError("vocabulary needs at least one landmark");
}

int Vocab::landmark_id(int landmark) const {
  if (landmark < 0 || landmark >= landmarks_) throw ValidationError("landmark out of range");
  return kActionWords + landmark;
}

std::string Vocab::word(int token) const {
  if (is_action(token)) return kActionNames[token];
  if (is_landmark(token)) return "L" + std::to_string(landmark_of(token));
  throw ValidationError("token " + std::to_string(token) + " out of vocabulary");
}

int Vocab::id(const std::string& word) const {
  for (int i = 0; i < kActionWords; ++i) {
    if (word == kActionNames[i]) return i;
  }
  if (word.size() > 1 && word[0] == 'L') {
    try {
      std::size_t used = 0;
      const int l = std::stoi(word.substr(1), &used);
      if (used == word.size() - 1 && l >= 0 && l < landmarks_) return landmark_id(l);
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("out-of-vocabulary word '" + word + "'");
}

std::string Vocab::join(const std::vector<int>& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += word(tokens[i]);
  }
  return out;
}

std::vector<int> Vocab::split(const std::string& text) const {
  std::istringstream in(text);
  std::vector<int> tokens;
  for (std::string w; in >> w;) tokens.push_back(id(w));
  return tokens;
}

ActionWord hop_action(double previous_heading, const Vec3& from, const Vec3& to) {
  const Vec3 d = to - from;
  const double planar = std::hypot(d.x(), d.y());
  if (std::abs(d.z()) > planar) return d.z() > 0 ? ActionWord::kUp : ActionWord::kDown;
  double delta = heading_of(from, to) - previous_heading;
  while (delta > std::numbers::pi) delta -= 2 * std::numbers::pi;
  while (delta <= -std::numbers::pi) delta += 2 * std::numbers::pi;
  const double deg = delta * 180.0 / std::numbers::pi;
  if (std::abs(deg) < 45.0) return ActionWord::kForward;
  return deg > 0 ? ActionWord::kRight : ActionWord::kLeft;
}

std::vector<int> generate_instruction(const std::vector<Vec3>& path, const std::vector<int>& landmarks,
                                      const Vocab& vocab) {
  if (path.size() != landmarks.size()) throw ValidationError("path and landmark lists differ in length");
  std::vector<int> tokens;
  double heading = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    tokens.push_back(vocab.action_id(hop_action(heading, path[i - 1], path[i])));
    tokens.push_back(vocab.landmark_id(landmarks[i]));
    heading = heading_of(path[i - 1], path[i]);
  }
  tokens.push_back(vocab.action_id(ActionWord::kStop));
  return tokens;
}

}  // namespace ssmnav
