#include "ssmnav/trainer.hpp"

#include "ssmnav/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace ssmnav {

namespace {

constexpr std::uint64_t kTagShuffle = 11;
constexpr std::uint64_t kTagStudent = 12;
constexpr std::uint64_t kTagGradCheck = 13;
constexpr const char* kCheckpointFormat = "ssmnav/checkpoint-v1";

nlohmann::json param_set_to_json(const ad::ParamSet& p) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Mat& m = p[i];
    std::vector<double> data(m.data(), m.data() + m.size());
    out.push_back({{"name", p.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
  }
  return out;
}

ad::ParamSet param_set_from_json(const nlohmann::json& j, const ad::ParamSet& like) {
  ad::ParamSet p = like.zeros_like();
  if (j.size() != p.size()) throw ValidationError("optimizer state tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& jt = j[i];
    Mat& m = p[i];
    const auto data = jt.at("data").get<std::vector<double>>();
    if (jt.at("name").get<std::string>() != p.name(i) || data.size() != std::size_t(m.size())) {
      throw ValidationError("optimizer state tensor " + p.name(i) + " does not match the model");
    }
    std::copy(data.begin(), data.end(), m.data());
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (il_weight < 0.0 || rl_weight < 0.0) throw ConfigError("loss weights must be non-negative");
  if (batch_episodes < 1) throw ConfigError("batch_episodes must be at least 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (time_budget_s < 0.0) throw ConfigError("time_budget_s must be non-negative");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"il_weight", c.il_weight},
          {"rl_weight", c.rl_weight},
          {"gamma", c.gamma},
          {"lr", c.lr},
          {"batch_episodes", c.batch_episodes},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"success_bonus", c.success_bonus},
          {"mode", to_string(c.mode)},
          {"rl_start_epoch", c.rl_start_epoch},
          {"teacher_forcing", c.teacher_forcing},
          {"max_rounds", c.max_rounds},
          {"clip_norm", c.clip_norm},
          {"eval_every", c.eval_every},
          {"threads", c.threads},
          {"time_budget_s", c.time_budget_s}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "il_weight") c.il_weight = v.get<double>();
      else if (key == "rl_weight") c.rl_weight = v.get<double>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "batch_episodes") c.batch_episodes = v.get<int>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "success_bonus") c.success_bonus = v.get<double>();
      else if (key == "mode") c.mode = decision_mode_from_string(v.get<std::string>());
      else if (key == "rl_start_epoch") c.rl_start_epoch = v.get<int>();
      else if (key == "teacher_forcing") c.teacher_forcing = v.get<bool>();
      else if (key == "max_rounds") c.max_rounds = v.get<int>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "time_budget_s") c.time_budget_s = v.get<double>();
      else throw ConfigError("unknown train key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- teacher

namespace {

/// Sort key of a sub-node for the teacher: distance, then (node id, view).
using TeacherKey = std::tuple<double, NodeId, ViewIndex>;

TeacherKey key_of(const EnvironmentGraph& env, NodeId goal, const SubNode& s) {
  const NodeId target = env.locate(s.target);
  if (target == kNoNode) throw InvariantError("sub-node target is not an environment place");
  return {env.geodesic(target, goal), s.parent, s.view};
}

bool less_key(const TeacherKey& a, const TeacherKey& b) {
  if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
  if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
  return std::get<2>(a) < std::get<2>(b);
}

}  // namespace

TeacherAction teacher_action(const SceneMemory& mem, const EnvironmentGraph& env, NodeId goal,
                             double success_radius) {
  // A node close enough to stop at wins outright; the closest, then smallest id.
  NodeId stop_at = kNoNode;
  double stop_d = 0.0;
  for (const auto& [id, node] : mem.nodes()) {
    const double d = env.geodesic(id, goal);
    if (d < success_radius && (stop_at == kNoNode || d < stop_d)) {
      stop_at = id;
      stop_d = d;
    }
  }
  if (stop_at != kNoNode) return {stop_at, make_stop(mem.node(stop_at))};

  const auto space = mem.global_action_space();
  if (space.empty()) return {mem.current(), make_stop(mem.node(mem.current()))};
  std::size_t best = 0;
  TeacherKey best_key = key_of(env, goal, space[0]);
  for (std::size_t i = 1; i < space.size(); ++i) {
    const auto k = key_of(env, goal, space[i]);
    if (less_key(k, best_key)) {
      best = i;
      best_key = k;
    }
  }
  return {space[best].parent, space[best]};
}

Teacher make_teacher(const EnvironmentGraph& env, const Episode& episode) {
  const NodeId goal = episode.goal;
  const double radius = episode.success_radius;
  const EnvironmentGraph* e = &env;
  Teacher t;
  t.frontier = [e, goal, radius](const SceneMemory& mem, const std::vector<NodeId>& cands) -> int {
    int stop = -1;
    for (int i = 0; i < int(cands.size()); ++i) {
      const double d = e->geodesic(cands[i], goal);
      if (d < radius && (stop < 0 || d < e->geodesic(cands[stop], goal))) stop = i;
    }
    if (stop >= 0) return stop;
    int best = -1;
    TeacherKey best_key;
    for (int i = 0; i < int(cands.size()); ++i) {
      for (const auto& s : mem.node(cands[i]).live_subnodes) {
        const auto k = key_of(*e, goal, s);
        if (best < 0 || less_key(k, best_key)) {
          best = i;
          best_key = k;
        }
      }
    }
    if (best >= 0) return best;
    const auto it = std::find(cands.begin(), cands.end(), mem.current());
    if (it == cands.end()) throw InvariantError("teacher found no usable frontier");
    return int(it - cands.begin());
  };
  t.subnode = [e, goal, radius](const SceneMemory&, const std::vector<SubNode>& cands) -> int {
    int stop = -1;
    for (int i = 0; i < int(cands.size()); ++i) {
      if (cands[i].is_stop) stop = i;
    }
    if (stop >= 0 && e->geodesic(cands[stop].parent, goal) < radius) return stop;
    int best = -1;
    TeacherKey best_key;
    for (int i = 0; i < int(cands.size()); ++i) {
      if (cands[i].is_stop) continue;
      const auto k = key_of(*e, goal, cands[i]);
      if (best < 0 || less_key(k, best_key)) {
        best = i;
        best_key = k;
      }
    }
    if (best >= 0) return best;
    if (stop < 0) throw InvariantError("teacher found no usable candidate");
    return stop;
  };
  return t;
}

// ---------------------------------------------------------------- losses

ad::Var il_loss(ad::Tape& tape, const Trajectory& t) {
  std::vector<ad::Var> terms;
  for (const auto& r : t.rounds) {
    const auto& d = r.decision;
    if (d.forced_stop) continue;
    if (d.frontier_choice && d.frontier_choice->label >= 0) {
      terms.push_back(ad::scale(ad::pick(d.frontier_choice->dist.log_probs, d.frontier_choice->label), -1.0));
    }
    if (d.choice.label >= 0) terms.push_back(ad::scale(ad::pick(d.choice.dist.log_probs, d.choice.label), -1.0));
  }
  if (terms.empty()) return tape.constant(Mat::Zero(1, 1));
  return ad::add_n(terms);
}

std::vector<StageReward> rl_rewards(const Trajectory& t, const Episode& episode, double success_bonus) {
  std::vector<StageReward> out;
  for (int i = 0; i < int(t.rounds.size()); ++i) {
    const auto& r = t.rounds[i];
    if (r.decision.forced_stop) continue;
    if (r.decision.frontier_choice) {
      out.push_back({i, true, r.dist_before - r.dist_at_frontier});
      out.push_back({i, false, r.dist_at_frontier - r.dist_after});
    } else {
      out.push_back({i, false, r.dist_before - r.dist_after});
    }
  }
  if (!out.empty() && !t.rounds.empty() && t.rounds.back().dist_after < episode.success_radius) {
    out.back().reward += success_bonus;
  }
  return out;
}

std::vector<double> discounted_returns(const std::vector<StageReward>& rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i].reward + gamma * acc;
    g[i] = acc;
  }
  return g;
}

ad::Var policy_gradient_loss(ad::Tape& tape, const Trajectory& t, const std::vector<double>& advantages) {
  std::vector<ad::Var> terms;
  std::size_t k = 0;
  auto term = [&](const Choice& c) {
    if (k >= advantages.size()) throw InvariantError("fewer advantages than decision stages");
    const double a = advantages[k++];
    if (a != 0.0) terms.push_back(ad::scale(ad::pick(c.dist.log_probs, c.index), -a));
  };
  for (const auto& r : t.rounds) {
    if (r.decision.forced_stop) continue;
    if (r.decision.frontier_choice) term(*r.decision.frontier_choice);
    term(r.decision.choice);
  }
  if (k != advantages.size()) throw InvariantError("more advantages than decision stages");
  if (terms.empty()) return tape.constant(Mat::Zero(1, 1));
  return ad::add_n(terms);
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(const ad::ParamSet& like, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ad::ParamSet& params, const ad::ParamSet& grads, double lr) {
  if (!params.same_layout(grads) || !params.same_layout(m_)) throw InvariantError("optimizer layout mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

nlohmann::json Adam::to_json() const {
  return {{"beta1", beta1_}, {"beta2", beta2_}, {"eps", eps_}, {"t", t_},
          {"m", param_set_to_json(m_)}, {"v", param_set_to_json(v_)}};
}

Adam Adam::from_json(const nlohmann::json& j, const ad::ParamSet& like) {
  Adam a(like, j.at("beta1"), j.at("beta2"), j.at("eps"));
  a.t_ = j.at("t");
  a.m_ = param_set_from_json(j.at("m"), like);
  a.v_ = param_set_from_json(j.at("v"), like);
  return a;
}

double clip_gradients(ad::ParamSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) {
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= max_norm / norm;
  }
  return norm;
}

// ---------------------------------------------------------------- grad check

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom;
}

nlohmann::json GradReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, err] : per_tensor) {
    const auto& [r, c] = argmax.at(name);
    per[name] = {{"max_rel_error", err}, {"row", r}, {"col", c}};
  }
  return {{"eps", eps},
          {"max_rel_error", max_rel_error},
          {"worst_tensor", worst_tensor},
          {"coordinates", coordinates},
          {"tensors", std::move(per)}};
}

GradReport grad_check(ad::ParamSet& params, const LossFn& loss, const GradCheckOptions& options) {
  ad::ParamSet grads = params.zeros_like();
  {
    ad::Tape tape(&params, true);
    ad::Var l = loss(tape);
    tape.backward(l);
    tape.accumulate(grads);
  }
  auto evaluate = [&]() {
    ad::Tape tape(&params, false);
    return loss(tape).scalar();
  };

  GradReport report;
  report.eps = options.eps;
  auto rng = make_rng({options.seed, kTagGradCheck});
  bool corrupted = options.corrupt == 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& value = params[t];
    const Eigen::Index n = value.size();
    std::vector<Eigen::Index> coords(n);
    std::iota(coords.begin(), coords.end(), Eigen::Index(0));
    if (options.samples_per_tensor > 0 && n > options.samples_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    double worst = 0.0;
    Eigen::Index worst_at = coords.empty() ? 0 : coords[0];
    for (Eigen::Index c : coords) {
      const double saved = value.data()[c];
      value.data()[c] = saved + options.eps;
      const double up = evaluate();
      value.data()[c] = saved - options.eps;
      const double down = evaluate();
      value.data()[c] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      double analytic = grads[t].data()[c];
      if (!corrupted) {
        analytic += options.corrupt;
        corrupted = true;
      }
      const double err = relative_error(analytic, numeric);
      if (err > worst || !std::isfinite(err)) {
        worst = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        worst_at = c;
      }
      ++report.coordinates;
    }
    const std::string& name = params.name(t);
    report.per_tensor[name] = worst;
    // Eigen storage is column-major.
    report.argmax[name] = {long(worst_at % value.rows()), long(worst_at / value.rows())};
    if (report.worst_tensor.empty() || worst > report.max_rel_error) {
      report.worst_tensor = name;
      report.max_rel_error = worst;
    }
  }
  return report;
}

// ---------------------------------------------------------------- data

const EnvironmentGraph& EpisodeSet::env_for(const Episode& e) const {
  const auto it = envs.find(e.env_seed);
  if (it == envs.end()) throw ValidationError("episode " + std::to_string(e.id) + " refers to a missing environment");
  return it->second;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<Trajectory> rollout_all(const EpisodeSet& data, const PolicyParams& params, DecisionMode mode,
                                    int max_rounds, int threads) {
  std::vector<Trajectory> out(data.episodes.size());
  parallel_for(int(out.size()), threads, [&](int i) {
    const Episode& e = data.episodes[i];
    RolloutOptions o;
    o.mode = mode;
    o.max_rounds = max_rounds;
    out[i] = rollout(data.env_for(e), e, params, o);
  });
  return out;
}

MetricReport evaluate(const EpisodeSet& data, const PolicyParams& params, DecisionMode mode, int max_rounds,
                      const std::string& label, int threads) {
  const auto trajs = rollout_all(data, params, mode, max_rounds, threads);
  MetricReport report;
  report.label = label.empty() ? to_string(mode) : label;
  if (!data.episodes.empty()) report.success_radius = data.episodes.front().success_radius;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Episode& e = data.episodes[i];
    report.add(score_episode(data.env_for(e), e, trajs[i].path));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------- checkpoints

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

nlohmann::json train_state_to_json(const TrainState& s, const TrainConfig& config) {
  return {{"format", kCheckpointFormat},
          {"epoch", s.epoch},
          {"best_sr", s.best_sr},
          {"best_epoch", s.best_epoch},
          {"train", train_config_to_json(config)},
          {"policy", s.params.to_json()},
          {"adam", s.adam.to_json()}};
}

TrainState train_state_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw ParseError("not a training checkpoint", 0);
  TrainState s;
  s.params = PolicyParams::from_json(j.at("policy"));
  s.adam = Adam::from_json(j.at("adam"), s.params.tensors());
  s.epoch = j.at("epoch");
  s.best_sr = j.at("best_sr");
  s.best_epoch = j.at("best_epoch");
  return s;
}

PolicyParams load_policy(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  if (j.contains("format")) return train_state_from_json(j).params;
  return PolicyParams::from_json(j);
}

// ---------------------------------------------------------------- training

std::string curve_csv_header() { return "epoch,il_loss,rl_loss,mean_return,grad_norm,SR,NE,TL,OR,SPL,CLS,nDTW,SDTW"; }

std::string curve_csv_row(const EpochStats& s) {
  std::ostringstream o;
  o.precision(8);
  o << s.epoch << ',' << s.il_loss << ',' << s.rl_loss << ',' << s.mean_return << ',' << s.grad_norm;
  if (s.eval) {
    const auto& m = s.eval->mean;
    o << ',' << m.sr << ',' << m.ne << ',' << m.tl << ',' << m.or_ << ',' << m.spl << ',' << m.cls << ','
      << m.ndtw << ',' << m.sdtw;
  } else {
    o << ",,,,,,,,";
  }
  return o.str();
}

namespace {

struct EpisodeWork {
  std::unique_ptr<ad::Tape> tape;
  Trajectory student;
  std::vector<StageReward> rewards;
  std::vector<double> returns;
  ad::ParamSet grads;
  double il = 0.0;
  double rl = 0.0;
};

}  // namespace

std::vector<EpochStats> train(const EpisodeSet& data, TrainState& state, const TrainConfig& config,
                              const TrainOptions& options) {
  config.validate();
  if (data.episodes.empty()) throw ConfigError("no training episodes");
  ad::ParamSet& params = state.params.tensors();
  if (!state.adam.matches(params)) state.adam = Adam(params);
  const auto clock_start = std::chrono::steady_clock::now();
  auto out_of_time = [&] {
    if (config.time_budget_s <= 0.0) return false;
    const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - clock_start;
    return spent.count() >= config.time_budget_s;
  };

  std::optional<std::ofstream> curve;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto curve_path = *options.out_dir / "curve.csv";
    const bool fresh = state.epoch == 0 || !std::filesystem::exists(curve_path);
    curve.emplace(curve_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) *curve << curve_csv_header() << '\n';
  }

  const bool learn = config.il_weight > 0.0 || config.rl_weight > 0.0;
  std::vector<EpochStats> history;
  bool stop = false;
  while (state.epoch < config.max_epochs && !stop) {
    const int epoch = state.epoch + 1;
    const bool use_rl = config.rl_weight > 0.0 && epoch >= config.rl_start_epoch;
    std::vector<std::size_t> order(data.episodes.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    auto shuffle_rng = make_rng({config.seed, kTagShuffle, std::uint64_t(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    stats.epoch = epoch;
    int batches = 0;
    double return_sum = 0.0;
    std::size_t return_count = 0;
    for (std::size_t b0 = 0; b0 < order.size() && learn; b0 += config.batch_episodes) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_episodes);
      const int n = int(b1 - b0);
      std::vector<EpisodeWork> work(n);

      // Rollouts: teacher-forced imitation finishes here; the student-forced
      // tape stays open until the baseline is known.
      parallel_for(n, config.threads, [&](int k) {
        const Episode& ep = data.episodes[order[b0 + k]];
        const EnvironmentGraph& env = data.env_for(ep);
        const Teacher teacher = make_teacher(env, ep);
        EpisodeWork& w = work[k];
        w.grads = params.zeros_like();
        if (config.il_weight > 0.0 && config.teacher_forcing) {
          ad::Tape tape(&params, true);
          RolloutOptions o;
          o.mode = config.mode;
          o.max_rounds = config.max_rounds;
          o.supervision = Supervision::kTeacherForcing;
          o.teacher = &teacher;
          const Trajectory t = run_episode(env, ep, state.params, tape, o);
          ad::Var loss = il_loss(tape, t);
          w.il += loss.scalar();
          tape.backward(loss);
          tape.accumulate(w.grads, config.il_weight / n);
        }
        w.tape = std::make_unique<ad::Tape>(&params, true);
        RolloutOptions o;
        o.mode = config.mode;
        o.max_rounds = config.max_rounds;
        o.sampling = Sampling::kSample;
        o.seed = derive_seed({config.seed, kTagStudent, std::uint64_t(epoch), std::uint64_t(ep.id), ep.env_seed});
        o.supervision = Supervision::kStudentForcing;
        o.teacher = &teacher;
        w.student = run_episode(env, ep, state.params, *w.tape, o);
        w.rewards = rl_rewards(w.student, ep, config.success_bonus);
        w.returns = discounted_returns(w.rewards, config.gamma);
      });

      double baseline = 0.0;
      std::size_t stages = 0;
      for (const auto& w : work) {
        for (double g : w.returns) baseline += g;
        stages += w.returns.size();
      }
      return_sum += baseline;
      return_count += stages;
      if (stages > 0) baseline /= double(stages);

      parallel_for(n, config.threads, [&](int k) {
        EpisodeWork& w = work[k];
        ad::Tape& tape = *w.tape;
        std::vector<ad::Var> parts;
        ad::Var il = il_loss(tape, w.student);
        w.il += il.scalar();
        if (config.il_weight > 0.0) parts.push_back(ad::scale(il, config.il_weight));
        if (use_rl) {
          std::vector<double> adv(w.returns.size());
          for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = w.returns[i] - baseline;
          ad::Var pg = policy_gradient_loss(tape, w.student, adv);
          w.rl = pg.scalar();
          parts.push_back(ad::scale(pg, config.rl_weight));
        }
        if (!parts.empty()) {
          tape.backward(ad::add_n(parts));
          tape.accumulate(w.grads, 1.0 / n);
        }
        w.tape.reset();
      });

      ad::ParamSet total = params.zeros_like();
      for (auto& w : work) {
        total.add_scaled(w.grads, 1.0);
        stats.il_loss += w.il / n;
        stats.rl_loss += w.rl / n;
      }
      stats.grad_norm = clip_gradients(total, config.clip_norm);
      if (!total.all_finite()) throw std::runtime_error("non-finite gradient at epoch " + std::to_string(epoch));
      state.adam.step(params, total, config.lr);
      ++batches;
      if (out_of_time()) {
        stop = true;
        break;
      }
    }
    if (batches > 0) {
      stats.il_loss /= batches;
      stats.rl_loss /= batches;
    }
    stats.mean_return = return_count ? return_sum / double(return_count) : 0.0;
    state.epoch = epoch;

    const bool last = state.epoch >= config.max_epochs || stop;
    if (options.held_out && (epoch % config.eval_every == 0 || last)) {
      stats.eval = evaluate(*options.held_out, state.params, config.mode, config.max_rounds, "", config.threads);
      if (stats.eval->mean.sr > state.best_sr) {
        state.best_sr = stats.eval->mean.sr;
        state.best_epoch = epoch;
        if (options.out_dir) write_json_file(*options.out_dir / "best.ckpt.json", train_state_to_json(state, config));
      }
    }
    if (options.out_dir) {
      write_json_file(*options.out_dir / "last.ckpt.json", train_state_to_json(state, config));
      *curve << curve_csv_row(stats) << '\n';
      curve->flush();
    }
    if (options.on_epoch) options.on_epoch(stats);
    history.push_back(std::move(stats));
  }
  return history;
}

}  // namespace ssmnav
