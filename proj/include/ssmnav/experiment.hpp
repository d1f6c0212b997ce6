#pragma once

#include "ssmnav/environment.hpp"
#include "ssmnav/policy.hpp"
#include "ssmnav/trainer.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ssmnav {

struct DataConfig {
  std::uint64_t seed = 7;
  int train_envs = 300;
  int train_episodes_per_env = 10;
  int test_envs = 10;
  int test_episodes_per_env = 50;
};

enum class Split { kTrain, kTest };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct GradCheckConfig {
  double eps = 1e-5;
  int samples_per_tensor = 6;
  double threshold = 1e-4;
  int seeds = 2;
  int episodes = 2;  // per seed, rolled out under both supervisions
};

struct AblateConfig {
  std::vector<std::string> variants = {"full", "local", "global", "no-reasoning", "no-grounding"};
  double local_margin = 0.05;  // full must beat local by this much
  double tie = 0.02;           // slack for the toggle variants
};

/// Everything a command needs, parsed from a JSON file plus `--set` overrides.
struct RunConfig {
  /// Experiment defaults differ from the library ones: ambiguous traps, and an
  /// imitation-only schedule at a higher learning rate.
  RunConfig() {
    episodes.ambiguous_traps = true;
    train.lr = 1e-3;
    train.rl_weight = 0.0;
    train.batch_episodes = 4;
    train.max_epochs = 8;
  }

  std::string run_name = "default";
  std::string out = "runs";
  EnvParams env;
  EpisodeParams episodes;
  DataConfig data;
  PolicyConfig model;
  std::uint64_t init_seed = 1;
  TrainConfig train;
  DecisionMode eval_mode = DecisionMode::kFrontier;
  int eval_threads = 1;
  GradCheckConfig grad_check;
  AblateConfig ablate;

  /// Ties model sizes to the environment (vocabulary, feature width).
  void finalize();
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// `j` is merged over the defaults; keys the defaults lack are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Applies `dotted.key=value` to `j`; the value is parsed as JSON when it
/// parses, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Deterministic environments and episodes for a split. Environments that
/// cannot host the requested episodes are replaced by the next seed.
EpisodeSet generate_split(const RunConfig& config, Split split);

/// Finite-difference check of the whole differentiable pipeline: encoder,
/// state update, grounding, reasoning, and all three scoring heads, through
/// the imitation loss and policy-gradient terms of teacher-forced rollouts.
GradReport pipeline_grad_check(PolicyParams& params, const EpisodeSet& data, const GradCheckOptions& options);

/// Loads `<dir>/<split>.envs.jsonl` and `<dir>/<split>.episodes.jsonl`.
EpisodeSet read_split(const std::string& dir, Split split);
void write_split(const std::string& dir, Split split, const EpisodeSet& set, int vocab);

struct AblationVariant {
  std::string name;
  DecisionMode mode = DecisionMode::kFrontier;
  int reasoning_steps = -1;  // -1 keeps the model's value
  bool grounding = true;
};

AblationVariant ablation_variant(const std::string& name);

struct AblationRow {
  AblationVariant variant;
  MetricReport report;
  std::vector<EpochStats> history;
  TrainState state;
};

/// Trains each variant from the same initial weights and seeds, then
/// evaluates it on `test` in its own decision mode.
std::vector<AblationRow> run_ablation(const EpisodeSet& train_set, const EpisodeSet& test_set, const RunConfig& config,
                                      const std::function<void(const std::string&)>& log = {});

struct TrendCheck {
  bool ok = true;
  std::vector<std::string> lines;  // one verdict per comparison
};

/// Frontier beats local by the margin and matches global; toggles do not
/// beat the full model beyond the tie slack.
TrendCheck check_trend(const std::vector<AblationRow>& rows, const AblateConfig& config);

}  // namespace ssmnav
