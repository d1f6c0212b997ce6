#include "ssmnav/experiment.hpp"

#include "ssmnav/dataset.hpp"
#include "ssmnav/instructions.hpp"
#include "ssmnav/rng.hpp"

#include <algorithm>

namespace ssmnav {

namespace {

constexpr std::uint64_t kTagTrainEnv = 21;
constexpr std::uint64_t kTagTestEnv = 22;
constexpr std::uint64_t kTagTrainEpisode = 23;
constexpr std::uint64_t kTagTestEpisode = 24;

nlohmann::json episode_params_to_json(const EpisodeParams& p) {
  return {{"min_len", p.min_len},
          {"max_len", p.max_len},
          {"trap_branches", p.trap_branches},
          {"ambiguous_traps", p.ambiguous_traps},
          {"success_radius", p.success_radius},
          {"max_retries", p.max_retries}};
}

EpisodeParams episode_params_from_json(const nlohmann::json& j) {
  EpisodeParams p;
  p.min_len = j.at("min_len");
  p.max_len = j.at("max_len");
  p.trap_branches = j.at("trap_branches");
  p.ambiguous_traps = j.at("ambiguous_traps");
  p.success_radius = j.at("success_radius");
  p.max_retries = j.at("max_retries");
  if (!(p.success_radius > 0.0)) throw ConfigError("episodes.success_radius must be positive");
  return p;
}

void strict_merge(nlohmann::json& base, const nlohmann::json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError("'" + (path.empty() ? std::string("config") : path) + "' must be an object");
  for (const auto& [key, v] : over.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    if (base[key].is_object()) {
      strict_merge(base[key], v, here);
    } else {
      base[key] = v;
    }
  }
}

}  // namespace

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (train | test)");
}

void RunConfig::finalize() {
  model.vocab_tokens = Vocab(env.vocab).size();
  model.d_f = env.d_f;
  model.validate();
  train.validate();
  if (data.train_envs < 0 || data.test_envs < 0 || data.train_episodes_per_env < 0 ||
      data.test_episodes_per_env < 0) {
    throw ConfigError("data counts must be non-negative");
  }
  if (eval_threads < 1) throw ConfigError("eval.threads must be at least 1");
  for (const auto& v : ablate.variants) ablation_variant(v);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json model = policy_config_to_json(c.model);
  model.erase("vocab_tokens");
  model.erase("d_f");
  model["init_seed"] = c.init_seed;
  return {{"run_name", c.run_name},
          {"out", c.out},
          {"env", env_params_to_json(c.env)},
          {"episodes", episode_params_to_json(c.episodes)},
          {"data",
           {{"seed", c.data.seed},
            {"train_envs", c.data.train_envs},
            {"train_episodes_per_env", c.data.train_episodes_per_env},
            {"test_envs", c.data.test_envs},
            {"test_episodes_per_env", c.data.test_episodes_per_env}}},
          {"model", std::move(model)},
          {"train", train_config_to_json(c.train)},
          {"eval", {{"mode", to_string(c.eval_mode)}, {"threads", c.eval_threads}}},
          {"grad_check",
           {{"eps", c.grad_check.eps},
            {"samples_per_tensor", c.grad_check.samples_per_tensor},
            {"threshold", c.grad_check.threshold},
            {"seeds", c.grad_check.seeds},
            {"episodes", c.grad_check.episodes}}},
          {"ablate",
           {{"variants", c.ablate.variants}, {"local_margin", c.ablate.local_margin}, {"tie", c.ablate.tie}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  nlohmann::json m = run_config_to_json(RunConfig{});
  strict_merge(m, j, "");
  RunConfig c;
  try {
    c.run_name = m.at("run_name");
    c.out = m.at("out");
    c.env = env_params_from_json(m.at("env"));
    c.episodes = episode_params_from_json(m.at("episodes"));
    const auto& d = m.at("data");
    c.data.seed = d.at("seed");
    c.data.train_envs = d.at("train_envs");
    c.data.train_episodes_per_env = d.at("train_episodes_per_env");
    c.data.test_envs = d.at("test_envs");
    c.data.test_episodes_per_env = d.at("test_episodes_per_env");
    nlohmann::json model = m.at("model");
    c.init_seed = model.at("init_seed");
    model.erase("init_seed");
    model["vocab_tokens"] = Vocab(c.env.vocab).size();
    model["d_f"] = c.env.d_f;
    c.model = policy_config_from_json(model);
    c.train = train_config_from_json(m.at("train"));
    c.eval_mode = decision_mode_from_string(m.at("eval").at("mode"));
    c.eval_threads = m.at("eval").at("threads");
    const auto& g = m.at("grad_check");
    c.grad_check.eps = g.at("eps");
    c.grad_check.samples_per_tensor = g.at("samples_per_tensor");
    c.grad_check.threshold = g.at("threshold");
    c.grad_check.seeds = g.at("seeds");
    c.grad_check.episodes = g.at("episodes");
    const auto& a = m.at("ablate");
    c.ablate.variants = a.at("variants").get<std::vector<std::string>>();
    c.ablate.local_margin = a.at("local_margin");
    c.ablate.tie = a.at("tie");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  c.finalize();
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    start = dot + 1;
  }
}

EpisodeSet generate_split(const RunConfig& config, Split split) {
  const bool train = split == Split::kTrain;
  const int n_envs = train ? config.data.train_envs : config.data.test_envs;
  const int per_env = train ? config.data.train_episodes_per_env : config.data.test_episodes_per_env;
  const std::uint64_t env_tag = train ? kTagTrainEnv : kTagTestEnv;
  const std::uint64_t ep_tag = train ? kTagTrainEpisode : kTagTestEpisode;
  EpisodeSet set;
  std::uint64_t slot = 0;
  for (int i = 0; i < n_envs; ++i) {
    for (int attempt = 0;; ++attempt, ++slot) {
      if (attempt >= 50) throw ValidationError("no environment can host the requested episodes");
      const auto env_seed = derive_seed({config.data.seed, env_tag, slot});
      const EnvironmentGraph env = EnvironmentGraph::generate(env_seed, config.env);
      std::vector<Episode> eps;
      try {
        for (int k = 0; k < per_env; ++k) {
          const auto ep_seed = derive_seed({config.data.seed, ep_tag, slot, std::uint64_t(k)});
          eps.push_back(make_episode(env, ep_seed, config.episodes, std::int64_t(i) * per_env + k));
        }
      } catch (const ValidationError&) {
        continue;
      }
      set.envs.emplace(env_seed, env);
      set.episodes.insert(set.episodes.end(), eps.begin(), eps.end());
      ++slot;
      break;
    }
  }
  return set;
}

GradReport pipeline_grad_check(PolicyParams& params, const EpisodeSet& data, const GradCheckOptions& options) {
  const LossFn loss = [&](ad::Tape& tape) {
    std::vector<ad::Var> terms;
    std::uint64_t k = 0;
    for (const Episode& ep : data.episodes) {
      const EnvironmentGraph& env = data.env_for(ep);
      const Teacher teacher = make_teacher(env, ep);
      for (DecisionMode mode : {DecisionMode::kFrontier, DecisionMode::kGlobal, DecisionMode::kLocal}) {
        RolloutOptions o;
        o.mode = mode;
        o.supervision = Supervision::kTeacherForcing;
        o.teacher = &teacher;
        const Trajectory t = run_episode(env, ep, params, tape, o);
        terms.push_back(il_loss(tape, t));
        // Fixed pseudo-random advantages exercise the log-prob terms.
        std::vector<double> adv(rl_rewards(t, ep, 0.0).size());
        auto rng = make_rng({options.seed, 0x6a, k++});
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (double& a : adv) a = u(rng);
        terms.push_back(policy_gradient_loss(tape, t, adv));
      }
    }
    return ad::add_n(terms);
  };
  return grad_check(params.tensors(), loss, options);
}

EpisodeSet read_split(const std::string& dir, Split split) {
  const std::string stem = dir + "/" + to_string(split);
  EpisodeSet set;
  for (auto& env : read_envs(stem + ".envs.jsonl")) {
    const auto seed = env.seed();
    set.envs.emplace(seed, std::move(env));
  }
  set.episodes = read_episodes(stem + ".episodes.jsonl");
  for (const auto& e : set.episodes) set.env_for(e);
  return set;
}

void write_split(const std::string& dir, Split split, const EpisodeSet& set, int vocab) {
  const std::string stem = dir + "/" + to_string(split);
  std::vector<EnvironmentGraph> envs;
  for (const auto& [seed, env] : set.envs) envs.push_back(env);
  write_envs(stem + ".envs.jsonl", envs);
  write_episodes(stem + ".episodes.jsonl", set.episodes, vocab);
}

AblationVariant ablation_variant(const std::string& name) {
  AblationVariant v;
  v.name = name;
  if (name == "full") return v;
  if (name == "local") {
    v.mode = DecisionMode::kLocal;
  } else if (name == "global") {
    v.mode = DecisionMode::kGlobal;
  } else if (name == "no-reasoning") {
    v.reasoning_steps = 0;
  } else if (name == "no-grounding") {
    v.grounding = false;
  } else {
    throw ConfigError("unknown ablation variant '" + name + "'");
  }
  return v;
}

std::vector<AblationRow> run_ablation(const EpisodeSet& train_set, const EpisodeSet& test_set, const RunConfig& config,
                                      const std::function<void(const std::string&)>& log) {
  std::vector<AblationRow> rows;
  for (const auto& name : config.ablate.variants) {
    AblationRow row;
    row.variant = ablation_variant(name);
    PolicyConfig model = config.model;
    if (row.variant.reasoning_steps >= 0) model.reasoning_steps = row.variant.reasoning_steps;
    model.fine_grained_grounding = row.variant.grounding;
    TrainConfig tc = config.train;
    tc.mode = row.variant.mode;
    row.state.params = PolicyParams::random(model, config.init_seed);
    row.state.adam = Adam(row.state.params.tensors());
    TrainOptions opts;
    opts.held_out = nullptr;
    if (log) {
      opts.on_epoch = [&](const EpochStats& s) {
        log(name + " epoch " + std::to_string(s.epoch) + " il " + std::to_string(s.il_loss) + " rl " +
            std::to_string(s.rl_loss) + " return " + std::to_string(s.mean_return));
      };
    }
    row.history = train(train_set, row.state, tc, opts);
    row.report = evaluate(test_set, row.state.params, row.variant.mode, tc.max_rounds, name, config.eval_threads);
    if (log) log(name + " SR " + std::to_string(row.report.mean.sr));
    rows.push_back(std::move(row));
  }
  return rows;
}

TrendCheck check_trend(const std::vector<AblationRow>& rows, const AblateConfig& config) {
  TrendCheck out;
  auto find = [&](const std::string& n) -> const AblationRow* {
    for (const auto& r : rows) {
      if (r.variant.name == n) return &r;
    }
    return nullptr;
  };
  const AblationRow* full = find("full");
  if (!full) {
    out.ok = false;
    out.lines.push_back("FAIL no full-model row");
    return out;
  }
  const double f = full->report.mean.sr;
  auto verdict = [&](bool pass, const std::string& text) {
    out.ok = out.ok && pass;
    out.lines.push_back(std::string(pass ? "PASS " : "FAIL ") + text);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  if (const auto* r = find("local")) {
    verdict(f >= r->report.mean.sr + config.local_margin,
            "SR(full) " + num(f) + " >= SR(local) " + num(r->report.mean.sr) + " + " + num(config.local_margin));
  }
  if (const auto* r = find("global")) {
    verdict(f >= r->report.mean.sr, "SR(full) " + num(f) + " >= SR(global) " + num(r->report.mean.sr));
  }
  for (const char* toggle : {"no-reasoning", "no-grounding"}) {
    if (const auto* r = find(toggle)) {
      verdict(r->report.mean.sr <= f + config.tie, "SR(" + std::string(toggle) + ") " + num(r->report.mean.sr) +
                                                       " <= SR(full) " + num(f) + " + " + num(config.tie));
    }
  }
  return out;
}

}  // namespace ssmnav
