#include "ssmnav/dataset.hpp"

namespace ssmnav {
namespace {

nlohmann::json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON record: ") + e.what(), line_no);
  }
}

void check_header(const nlohmann::json& h, const std::string& kind) {
  if (!h.is_object() || !h.contains("format")) throw ParseError("missing format header", 1);
  if (h["format"] != kFormatTag) {
    throw ParseError("unsupported format version " + h["format"].dump() + ", expected " + kFormatTag, 1);
  }
  if (h.value("kind", std::string()) != kind) throw ParseError("file does not hold " + kind, 1);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_envs(const std::string& path, const std::vector<EnvironmentGraph>& envs) {
  auto out = open_out(path);
  out << nlohmann::json{{"format", kFormatTag}, {"kind", "envs"}, {"count", envs.size()}}.dump() << '\n';
  for (const auto& env : envs) out << env.to_json().dump() << '\n';
}

std::vector<EnvironmentGraph> read_envs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty environment file", 1);
  check_header(parse_line(line, 1), "envs");
  std::vector<EnvironmentGraph> envs;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    try {
      envs.push_back(EnvironmentGraph::from_json(parse_line(line, no)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad environment record: ") + e.what(), no);
    } catch (const ValidationError& e) {
      throw ParseError(std::string("bad environment record: ") + e.what(), no);
    }
  }
  return envs;
}

nlohmann::json episode_to_json(const Episode& ep, const Vocab& vocab) {
  return {{"id", ep.id},
          {"env", ep.env_seed},
          {"start", ep.start},
          {"goal", ep.goal},
          {"gt_path", ep.gt_path},
          {"instruction", vocab.join(ep.instruction)},
          {"success_radius", ep.success_radius}};
}

Episode episode_from_json(const nlohmann::json& j, const Vocab& vocab) {
  Episode ep;
  ep.id = j.at("id").get<std::int64_t>();
  ep.env_seed = j.at("env").get<std::uint64_t>();
  ep.start = j.at("start").get<NodeId>();
  ep.goal = j.at("goal").get<NodeId>();
  ep.gt_path = j.at("gt_path").get<std::vector<NodeId>>();
  ep.instruction = vocab.split(j.at("instruction").get<std::string>());
  ep.success_radius = j.at("success_radius").get<double>();
  return ep;
}

void write_episodes(const std::string& path, const std::vector<Episode>& episodes, int vocab) {
  auto out = open_out(path);
  const Vocab v(vocab);
  out << nlohmann::json{{"format", kFormatTag}, {"kind", "episodes"}, {"vocab", vocab}, {"count", episodes.size()}}
             .dump()
      << '\n';
  for (const auto& ep : episodes) out << episode_to_json(ep, v).dump() << '\n';
}

EpisodeReader::EpisodeReader(const std::string& path) : in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in_, line)) throw ParseError("empty episode file", 1);
  line_no_ = 1;
  const auto header = parse_line(line, 1);
  check_header(header, "episodes");
  vocab_ = Vocab(header.value("vocab", 1));
  peak_buffer_ = line.capacity();
}

std::optional<Episode> EpisodeReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    peak_buffer_ = std::max(peak_buffer_, line.capacity());
    if (line.empty()) continue;
    try {
      return episode_from_json(parse_line(line, line_no_), vocab_);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad episode record: ") + e.what(), line_no_);
    } catch (const ValidationError& e) {
      throw ParseError(std::string("bad episode record: ") + e.what(), line_no_);
    }
  }
  return std::nullopt;
}

std::vector<Episode> read_episodes(const std::string& path) {
  EpisodeReader reader(path);
  std::vector<Episode> out;
  while (auto ep = reader.next()) out.push_back(std::move(*ep));
  return out;
}

}  // namespace ssmnav
