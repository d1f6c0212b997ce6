#pragma once

#include "ssmnav/environment.hpp"

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace ssmnav {

inline constexpr const char* kFormatTag = "ssmnav/v1";

/// `*.envs.jsonl`: a header record followed by one environment per line.
void write_envs(const std::string& path, const std::vector<EnvironmentGraph>& envs);
std::vector<EnvironmentGraph> read_envs(const std::string& path);

/// `*.episodes.jsonl`: a header record (carrying the landmark vocabulary
/// size) followed by one episode per line, instructions as words.
void write_episodes(const std::string& path, const std::vector<Episode>& episodes, int vocab);

nlohmann::json episode_to_json(const Episode& ep, const Vocab& vocab);
Episode episode_from_json(const nlohmann::json& j, const Vocab& vocab);

/// Reads episodes one line at a time.
class EpisodeReader {
 public:
  explicit EpisodeReader(const std::string& path);

  std::optional<Episode> next();
  int vocab() const { return vocab_.landmarks(); }
  /// Largest line held in memory so far, bytes.
  std::size_t peak_buffer() const { return peak_buffer_; }

 private:
  std::ifstream in_;
  std::size_t line_no_ = 0;
  Vocab vocab_{1};
  std::size_t peak_buffer_ = 0;
};

std::vector<Episode> read_episodes(const std::string& path);

}  // namespace ssmnav
