#pragma once

#include "ssmnav/environment.hpp"
#include "ssmnav/metrics.hpp"
#include "ssmnav/planner.hpp"
#include "ssmnav/policy.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ssmnav {

struct TrainConfig {
  double il_weight = 1.0;
  double rl_weight = 1.0;
  double gamma = 0.9;
  double lr = 1e-4;
  int batch_episodes = 8;
  int max_epochs = 10;
  std::uint64_t seed = 0;
  double success_bonus = 2.0;
  DecisionMode mode = DecisionMode::kFrontier;
  /// Epochs before this one are pure imitation.
  int rl_start_epoch = 1;
  /// Teacher-forced replay alongside the student-forced rollout.
  bool teacher_forcing = true;
  int max_rounds = 20;
  double clip_norm = 0.0;  // global gradient norm clip, 0 = off
  int eval_every = 1;      // epochs
  int threads = 1;
  /// Stop once the wall clock passes this many seconds (0 = no limit).
  double time_budget_s = 0.0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TeacherAction {
  NodeId frontier = kNoNode;
  SubNode action;  // may be a STOP at `frontier`
};

/// Unrestricted teacher over the whole memory: STOP at a node within the
/// success radius of the goal if there is one, else the live sub-node whose
/// target is geodesically closest to the goal, else STOP at the current node.
TeacherAction teacher_action(const SceneMemory& mem, const EnvironmentGraph& env, NodeId goal,
                             double success_radius);

/// Teacher labels restricted to what each decision can express.
Teacher make_teacher(const EnvironmentGraph& env, const Episode& episode);

/// Sum of -log p(label) over every supervised choice of `t`.
ad::Var il_loss(ad::Tape& tape, const Trajectory& t);

struct StageReward {
  int round = 0;
  bool frontier_stage = false;
  double reward = 0.0;
};

/// Distance change per decision stage, with the success bonus folded into
/// the last stage when the trajectory ends within the success radius.
std::vector<StageReward> rl_rewards(const Trajectory& t, const Episode& episode, double success_bonus);

/// Discounted returns, one per stage.
std::vector<double> discounted_returns(const std::vector<StageReward>& rewards, double gamma);

/// -sum_t advantage_t * log p(choice_t); its gradient is the REINFORCE
/// estimate (negated, for descent).
ad::Var policy_gradient_loss(ad::Tape& tape, const Trajectory& t, const std::vector<double>& advantages);

/// Adaptive-moment optimizer.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ad::ParamSet& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ad::ParamSet& params, const ad::ParamSet& grads, double lr);
  long steps() const { return t_; }
  bool matches(const ad::ParamSet& params) const { return m_.same_layout(params); }

  nlohmann::json to_json() const;
  static Adam from_json(const nlohmann::json& j, const ad::ParamSet& like);

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  ad::ParamSet m_, v_;
};

/// Scales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
double clip_gradients(ad::ParamSet& grads, double max_norm);

struct GradReport {
  double eps = 1e-5;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::map<std::string, double> per_tensor;
  std::map<std::string, std::pair<long, long>> argmax;  // (row, col)
  std::size_t coordinates = 0;

  nlohmann::json to_json() const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  int samples_per_tensor = 8;  // <= 0 checks every coordinate
  std::uint64_t seed = 0;
  /// Adds this to one analytic coordinate, to prove the check can fail.
  double corrupt = 0.0;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric);

using LossFn = std::function<ad::Var(ad::Tape&)>;

/// Central differences on `params` (perturbed in place and restored) against
/// the tape gradient of `loss`.
GradReport grad_check(ad::ParamSet& params, const LossFn& loss, const GradCheckOptions& options = {});

/// A training episode bound to its environment.
struct EpisodeSet {
  std::map<std::uint64_t, EnvironmentGraph> envs;
  std::vector<Episode> episodes;

  const EnvironmentGraph& env_for(const Episode& e) const;
};

/// Greedy evaluation of every episode in `mode`.
MetricReport evaluate(const EpisodeSet& data, const PolicyParams& params, DecisionMode mode, int max_rounds,
                      const std::string& label = "", int threads = 1);

/// Per-episode greedy rollouts in `mode`, in episode order.
std::vector<Trajectory> rollout_all(const EpisodeSet& data, const PolicyParams& params, DecisionMode mode,
                                    int max_rounds, int threads = 1);

struct TrainState {
  PolicyParams params;
  Adam adam;
  int epoch = 0;  // completed epochs
  double best_sr = -1.0;
  int best_epoch = -1;
};

nlohmann::json train_state_to_json(const TrainState& s, const TrainConfig& config);
TrainState train_state_from_json(const nlohmann::json& j);
/// Policy weights from either a bare policy file or a training checkpoint.
PolicyParams load_policy(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

struct EpochStats {
  int epoch = 0;
  double il_loss = 0.0;
  double rl_loss = 0.0;
  double mean_return = 0.0;
  double grad_norm = 0.0;
  std::optional<MetricReport> eval;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + curve.csv
  const EpisodeSet* held_out = nullptr;
  std::function<void(const EpochStats&)> on_epoch;
};

/// Runs epochs `state.epoch + 1 ..= config.max_epochs`. Writes last.ckpt.json
/// every epoch and best.ckpt.json on a new best held-out SR.
std::vector<EpochStats> train(const EpisodeSet& data, TrainState& state, const TrainConfig& config,
                              const TrainOptions& options = {});

std::string curve_csv_header();
std::string curve_csv_row(const EpochStats& s);

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace ssmnav
