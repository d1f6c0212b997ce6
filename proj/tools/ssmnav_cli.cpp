// ssmnav: dataset generation, training, evaluation, rollout plots, gradient
// checks and the ablation runner. Every artifact lands in <out>/<run-name>/.

#include "ssmnav/dataset.hpp"
#include "ssmnav/experiment.hpp"
#include "ssmnav/render.hpp"
#include "ssmnav/rng.hpp"
#include "ssmnav/trainer.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ssmnav;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_config(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) {
    try {
      j = read_json_file(c.config_path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  return run_config_from_json(j);
}

fs::path run_dir(const RunConfig& c) { return fs::path(c.out) / c.run_name; }

std::uint64_t fnv1a(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// Echoes the effective config and lists every file of `dir` with its hash.
void finish_dir(const fs::path& dir, const std::string& command, const RunConfig& config) {
  write_json_file(dir / "config.json", run_config_to_json(config));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : files) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(f)));
    list.push_back({{"path", fs::relative(f, dir).generic_string()}, {"bytes", fs::file_size(f)}, {"fnv1a64", hex}});
  }
  write_json_file(dir / "manifest.json", {{"command", command}, {"run_name", config.run_name}, {"files", list}});
}

/// Data files under <run>/data when present, else regenerated in memory.
EpisodeSet load_split(const RunConfig& c, Split split) {
  const fs::path dir = run_dir(c) / "data";
  const auto stem = dir / to_string(split);
  if (fs::exists(stem.string() + ".envs.jsonl") && fs::exists(stem.string() + ".episodes.jsonl")) {
    return read_split(dir.string(), split);
  }
  return generate_split(c, split);
}

int cmd_gen_env(const RunConfig& c, Split split) {
  const fs::path dir = run_dir(c) / "data";
  fs::create_directories(dir);
  const EpisodeSet set = generate_split(c, split);
  std::vector<EnvironmentGraph> envs;
  for (const auto& [seed, env] : set.envs) envs.push_back(env);
  write_envs((dir / (to_string(split) + ".envs.jsonl")).string(), envs);
  std::cout << "wrote " << envs.size() << " environments to " << dir.string() << '\n';
  finish_dir(dir, "gen-env", c);
  return kExitOk;
}

int cmd_gen_episodes(const RunConfig& c, Split split) {
  const fs::path dir = run_dir(c) / "data";
  const auto env_path = dir / (to_string(split) + ".envs.jsonl");
  if (!fs::exists(env_path)) throw std::runtime_error(env_path.string() + " missing; run gen-env first");
  const auto envs = read_envs(env_path.string());
  // Episodes are regenerated from the same seeds, then checked against the stored environments.
  const EpisodeSet set = generate_split(c, split);
  if (envs.size() != set.envs.size()) throw std::runtime_error("stored environments do not match the config");
  for (const auto& env : envs) {
    const auto it = set.envs.find(env.seed());
    if (it == set.envs.end() || !(it->second == env)) {
      throw std::runtime_error("stored environment " + std::to_string(env.seed()) + " does not match the config");
    }
  }
  write_episodes((dir / (to_string(split) + ".episodes.jsonl")).string(), set.episodes, c.env.vocab);
  std::cout << "wrote " << set.episodes.size() << " episodes to " << dir.string() << '\n';
  finish_dir(dir, "gen-episodes", c);
  return kExitOk;
}

int cmd_train(const RunConfig& c, bool resume) {
  const fs::path dir = run_dir(c) / "train";
  const EpisodeSet train_set = load_split(c, Split::kTrain);
  const EpisodeSet test_set = load_split(c, Split::kTest);
  TrainState state;
  const auto last = dir / "last.ckpt.json";
  if (resume && fs::exists(last)) {
    state = train_state_from_json(read_json_file(last));
    if (!(state.params.config() == c.model)) throw ConfigError("checkpoint model does not match the config");
    std::cout << "resuming after epoch " << state.epoch << '\n';
  } else {
    if (fs::exists(dir)) fs::remove_all(dir);
    state.params = PolicyParams::random(c.model, c.init_seed);
    state.adam = Adam(state.params.tensors());
  }
  TrainOptions opts;
  opts.out_dir = dir;
  opts.held_out = &test_set;
  opts.on_epoch = [](const EpochStats& s) {
    std::cout << "epoch " << s.epoch << " il " << s.il_loss << " rl " << s.rl_loss;
    if (s.eval) std::cout << " SR " << s.eval->mean.sr;
    std::cout << std::endl;
  };
  train(train_set, state, c.train, opts);
  finish_dir(dir, "train", c);
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, DecisionMode mode, Split split, bool teacher) {
  const EpisodeSet set = load_split(c, split);
  const fs::path dir = run_dir(c) / ("eval-" + to_string(mode) + "-" + to_string(split) + (teacher ? "-teacher" : ""));
  if (fs::exists(dir)) fs::remove_all(dir);
  MetricReport report;
  report.label = to_string(mode);
  if (!set.episodes.empty()) report.success_radius = set.episodes.front().success_radius;
  if (teacher) {
    // Teacher replay: an oracle upper bound that checks the data is solvable.
    const PolicyParams params = PolicyParams::zeros(c.model);
    for (const Episode& ep : set.episodes) {
      const auto& env = set.env_for(ep);
      const Teacher t = make_teacher(env, ep);
      RolloutOptions o;
      o.mode = mode;
      o.max_rounds = c.train.max_rounds;
      o.supervision = Supervision::kTeacherForcing;
      o.teacher = &t;
      report.add(score_episode(env, ep, rollout(env, ep, params, o).path));
    }
    report.label += "-teacher";
    report.finalize();
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --teacher)");
    report = evaluate(set, load_policy(checkpoint), mode, c.train.max_rounds, to_string(mode), c.eval_threads);
  }
  write_json_file(dir / "report.json", report.to_json());
  write_text(dir / "report.csv", metrics_csv_header() + "\n" + metrics_csv_row(report) + "\n");
  write_text(dir / "episodes.csv", metrics_episode_csv(report));
  std::cout << metrics_csv_header() << '\n' << metrics_csv_row(report) << '\n';
  finish_dir(dir, "eval", c);
  return kExitOk;
}

int cmd_rollout(const RunConfig& c, const std::string& checkpoint, std::int64_t episode_id, DecisionMode mode,
                Split split, bool snapshots) {
  if (checkpoint.empty()) throw ConfigError("rollout needs --checkpoint");
  const EpisodeSet set = load_split(c, split);
  const Episode* ep = nullptr;
  for (const auto& e : set.episodes) {
    if (e.id == episode_id) ep = &e;
  }
  if (!ep) throw ConfigError("no episode " + std::to_string(episode_id) + " in the " + to_string(split) + " split");
  const auto& env = set.env_for(*ep);
  RolloutOptions o;
  o.mode = mode;
  o.max_rounds = c.train.max_rounds;
  o.keep_memory_snapshots = snapshots;
  const Trajectory t = rollout(env, *ep, load_policy(checkpoint), o);
  const fs::path dir =
      run_dir(c) / ("rollout-" + to_string(split) + "-" + std::to_string(episode_id) + "-" + to_string(mode));
  if (fs::exists(dir)) fs::remove_all(dir);
  std::ostringstream log;
  for (const auto& rec : trajectory_log(t)) log << rec.dump() << '\n';
  write_text(dir / "trajectory.jsonl", log.str());
  write_text(dir / "plot.svg", render_svg(env, ep->gt_path, t.path, ep->goal));
  const auto m = score_episode(env, *ep, t.path);
  MetricReport r;
  r.label = to_string(mode);
  r.success_radius = ep->success_radius;
  r.add(m);
  r.finalize();
  write_json_file(dir / "metrics.json", r.to_json());
  std::cout << "stop: " << to_string(t.stop_reason) << ", rounds " << t.rounds.size() << ", SR " << m.sr << ", NE "
            << m.ne << '\n';
  finish_dir(dir, "rollout", c);
  return kExitOk;
}

int cmd_grad_check(const RunConfig& c, double corrupt) {
  const fs::path dir = run_dir(c) / "grad-check";
  if (fs::exists(dir)) fs::remove_all(dir);
  RunConfig small = c;
  small.data.train_envs = 1;
  small.data.train_episodes_per_env = c.grad_check.episodes;
  const EpisodeSet data = generate_split(small, Split::kTrain);
  nlohmann::json runs = nlohmann::json::array();
  double worst = 0.0;
  for (int s = 0; s < c.grad_check.seeds; ++s) {
    PolicyParams params = PolicyParams::random(c.model, derive_seed({c.init_seed, 0x6c, std::uint64_t(s)}));
    GradCheckOptions o;
    o.eps = c.grad_check.eps;
    o.samples_per_tensor = c.grad_check.samples_per_tensor;
    o.seed = std::uint64_t(s);
    o.corrupt = corrupt;
    const GradReport r = pipeline_grad_check(params, data, o);
    worst = std::max(worst, r.max_rel_error);
    runs.push_back(r.to_json());
    std::cout << "seed " << s << ": max rel error " << r.max_rel_error << " (" << r.worst_tensor << ")\n";
  }
  const bool pass = worst < c.grad_check.threshold;
  write_json_file(dir / "report.json",
                  {{"threshold", c.grad_check.threshold}, {"max_rel_error", worst}, {"pass", pass}, {"runs", runs}});
  finish_dir(dir, "grad-check", c);
  std::cout << (pass ? "PASS" : "FAIL") << " max rel error " << worst << " vs threshold " << c.grad_check.threshold
            << '\n';
  return pass ? kExitOk : kExitThreshold;
}

int cmd_ablate(const RunConfig& c) {
  const fs::path dir = run_dir(c) / "ablate";
  if (fs::exists(dir)) fs::remove_all(dir);
  const EpisodeSet train_set = load_split(c, Split::kTrain);
  const EpisodeSet test_set = load_split(c, Split::kTest);
  const auto rows = run_ablation(train_set, test_set, c, [](const std::string& s) { std::cout << s << std::endl; });
  std::ostringstream csv;
  csv << metrics_csv_header() << '\n';
  for (const auto& r : rows) {
    csv << metrics_csv_row(r.report) << '\n';
    write_json_file(dir / "reports" / (r.variant.name + ".json"), r.report.to_json());
    write_json_file(dir / "checkpoints" / (r.variant.name + ".ckpt.json"), train_state_to_json(r.state, c.train));
  }
  write_text(dir / "ablation.csv", csv.str());
  const TrendCheck trend = check_trend(rows, c.ablate);
  std::ostringstream t;
  for (const auto& l : trend.lines) t << l << '\n';
  write_text(dir / "trend.txt", t.str());
  finish_dir(dir, "ablate", c);
  std::cout << csv.str() << t.str();
  return trend.ok ? kExitOk : kExitThreshold;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured scene memory navigation agent"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::string run_name, out;
  app.add_option("-c,--config", common.config_path, "JSON config file (see configs/sample.json)");
  app.add_option("-s,--set", common.overrides, "override a config key, e.g. --set train.lr=1e-3")
      ->allow_extra_args(false);
  app.add_option("--run-name", run_name, "output subdirectory under <out>");
  app.add_option("--out", out, "output root");

  std::string split = "train";
  auto* gen_env = app.add_subcommand("gen-env", "generate environments for a split");
  gen_env->add_option("--split", split, "train | test");
  auto* gen_eps = app.add_subcommand("gen-episodes", "generate episodes over stored environments");
  gen_eps->add_option("--split", split, "train | test");

  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "train a policy");
  train_cmd->add_flag("--resume", resume, "continue from <run>/train/last.ckpt.json");

  std::string checkpoint, mode;
  std::string eval_split = "test";
  bool teacher = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "policy or training checkpoint");
  eval_cmd->add_option("--mode", mode, "frontier | global-onestep | local (default: eval.mode)");
  eval_cmd->add_option("--split", eval_split, "train | test");
  eval_cmd->add_flag("--teacher", teacher, "replay the teacher instead of a policy");

  std::int64_t episode = 0;
  bool snapshots = false;
  auto* rollout_cmd = app.add_subcommand("rollout", "trajectory log and SVG plot for one episode");
  rollout_cmd->add_option("--checkpoint", checkpoint, "policy or training checkpoint")->required();
  rollout_cmd->add_option("--episode", episode, "episode id")->required();
  rollout_cmd->add_option("--mode", mode, "frontier | global-onestep | local (default: eval.mode)");
  rollout_cmd->add_option("--split", eval_split, "train | test");
  rollout_cmd->add_flag("--memory", snapshots, "include memory snapshots in the log");

  double corrupt = 0.0;
  auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient check");
  grad_cmd->add_option("--corrupt", corrupt, "add this to one analytic gradient coordinate");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the ablation variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig config;
  try {
    if (!run_name.empty()) common.overrides.push_back("run_name=\"" + run_name + "\"");
    if (!out.empty()) common.overrides.push_back("out=\"" + out + "\"");
    config = load_config(common);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const DecisionMode m = mode.empty() ? config.eval_mode : decision_mode_from_string(mode);
    if (*gen_env) return cmd_gen_env(config, split_from_string(split));
    if (*gen_eps) return cmd_gen_episodes(config, split_from_string(split));
    if (*train_cmd) return cmd_train(config, resume);
    if (*eval_cmd) return cmd_eval(config, checkpoint, m, split_from_string(eval_split), teacher);
    if (*rollout_cmd) return cmd_rollout(config, checkpoint, episode, m, split_from_string(eval_split), snapshots);
    if (*grad_cmd) return cmd_grad_check(config, corrupt);
    if (*ablate_cmd) return cmd_ablate(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid parameters: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
