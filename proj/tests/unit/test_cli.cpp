#include "ssmnav/experiment.hpp"
#include "ssmnav/render.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace ssmnav;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr
};

const fs::path& root() {
  static const fs::path r = [] {
    auto p = fs::temp_directory_path() / ("ssmnav_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return r;
}

const char* kTiny =
    " --set env.n_nodes=16 --set env.d_f=4 --set model.d_x=4 --set model.d_h=4 --set model.tiles=1"
    " --set data.train_envs=2 --set data.train_episodes_per_env=3 --set data.test_envs=2"
    " --set data.test_episodes_per_env=3 --set train.max_epochs=1";

Result run(const std::string& args, const std::string& run_name = "r") {
  const std::string cmd = std::string(SSMNAV_CLI_PATH) + " --out " + root().string() + " --run-name " + run_name +
                          " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json json_at(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

RunConfig tiny_config(const std::string& run_name) {
  nlohmann::json j;
  std::istringstream in(kTiny);
  for (std::string flag, kv; in >> flag >> kv;) apply_override(j, kv);
  apply_override(j, "run_name=" + run_name);
  apply_override(j, "out=" + root().string());
  return run_config_from_json(j);
}

}  // namespace

TEST(Cli, GenEnvIsByteIdentical) {
  ASSERT_EQ(run(std::string("gen-env") + kTiny, "a").code, 0);
  ASSERT_EQ(run(std::string("gen-env") + kTiny, "b").code, 0);
  const auto a = slurp(root() / "a/data/train.envs.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(root() / "b/data/train.envs.jsonl"));
  EXPECT_TRUE(fs::exists(root() / "a/data/manifest.json"));
  EXPECT_EQ(json_at(root() / "a/data/config.json")["env"]["n_nodes"], 16);
}

TEST(Cli, ExitCodes) {
  const auto bad_radius = run("gen-env --set env.radius=-1", "bad");
  EXPECT_EQ(bad_radius.code, 1);
  EXPECT_NE(bad_radius.out.find("radius"), std::string::npos);
  EXPECT_EQ(run("gen-env --set train.learning_rate=1", "bad").code, 1);
  EXPECT_EQ(run("gen-env --set eval.mode=sideways", "bad").code, 1);
  EXPECT_EQ(run("no-such-command", "bad").code, 1);
  EXPECT_EQ(run("gen-episodes --split test", "empty").code, 2);  // no environments yet
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, CommentedConfigFile) {
  const auto cfg = root() / "commented.json";
  std::ofstream(cfg) << "{\n  // smaller world\n  \"env\": {\"n_nodes\": 12, \"d_f\": 4}\n}\n";
  ASSERT_EQ(run("-c " + cfg.string() + " gen-env", "commented").code, 0);
  EXPECT_EQ(json_at(root() / "commented/data/config.json")["env"]["n_nodes"], 12);
}

TEST(Cli, GradCheckPassesAndCorruptionFails) {
  const auto ok = run(std::string("grad-check") + kTiny, "gc");
  EXPECT_EQ(ok.code, 0) << ok.out;
  const auto rep = json_at(root() / "gc/grad-check/report.json");
  EXPECT_TRUE(rep["pass"].get<bool>());
  EXPECT_LT(rep["max_rel_error"].get<double>(), 1e-4);
  for (const char* key : {"threshold", "max_rel_error", "pass", "runs"}) EXPECT_TRUE(rep.contains(key)) << key;
  EXPECT_EQ(run(std::string("grad-check --corrupt 0.5") + kTiny, "gc").code, 3);
}

TEST(Cli, TeacherEvalSolvesEverySplitEpisode) {
  for (const char* mode : {"frontier", "global-onestep", "local"}) {
    const auto r = run(std::string("eval --teacher --mode ") + mode + kTiny, "teach");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto dir = root() / "teach" / (std::string("eval-") + (std::string(mode) == "global-onestep" ? "global-onestep" : mode) + "-test-teacher");
    ASSERT_TRUE(fs::exists(dir / "report.json")) << dir;
    const auto rep = MetricReport::from_json(json_at(dir / "report.json"));
    EXPECT_EQ(rep.count(), 6u);
    EXPECT_EQ(rep.mean.sr, 1.0) << mode;
    EXPECT_EQ(rep.mean.or_, 1.0) << mode;
    EXPECT_EQ(slurp(dir / "report.csv").substr(0, 9), "label,SR,");
  }
}

TEST(Cli, TrainResumeEvalRollout) {
  auto r = run(std::string("train") + kTiny, "tr");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ckpt = root() / "tr/train/last.ckpt.json";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(json_at(ckpt)["epoch"], 1);

  r = run(std::string("train --resume") + kTiny + " --set train.max_epochs=2", "tr");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("resuming after epoch 1"), std::string::npos);
  EXPECT_NE(r.out.find("epoch 2"), std::string::npos);
  EXPECT_EQ(json_at(ckpt)["epoch"], 2);
  const auto curve = slurp(root() / "tr/train/curve.csv");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 3);

  r = run("eval --checkpoint " + ckpt.string() + kTiny, "tr");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(root() / "tr/eval-frontier-test/report.json"));

  const auto cfg = tiny_config("tr");
  const auto test = generate_split(cfg, Split::kTest);
  const auto& ep = test.episodes.front();
  const std::string args = "rollout --checkpoint " + ckpt.string() + " --episode " + std::to_string(ep.id) + kTiny;
  ASSERT_EQ(run(args, "tr").code, 0);
  const auto dir = root() / "tr" / ("rollout-test-" + std::to_string(ep.id) + "-frontier");
  const auto log1 = slurp(dir / "trajectory.jsonl");
  const auto svg = slurp(dir / "plot.svg");
  ASSERT_EQ(run(args, "tr").code, 0);
  EXPECT_EQ(log1, slurp(dir / "trajectory.jsonl"));
  EXPECT_FALSE(log1.empty());

  for (const char* layer : {"id=\"env-graph\"", "id=\"gt-path\"", "id=\"agent-path\""}) {
    EXPECT_NE(svg.find(layer), std::string::npos) << layer;
  }
  // Spot-check node circles against the environment positions.
  const auto& env = test.env_for(ep);
  const auto frame = SvgFrame::fit(env);
  const std::regex circle(R"re(<circle id="node-(\d+)" cx="([-0-9.e]+)" cy="([-0-9.e]+)")re");
  int seen = 0;
  for (std::sregex_iterator it(svg.begin(), svg.end(), circle), end; it != end; ++it, ++seen) {
    const NodeId id = std::stoll((*it)[1]);
    EXPECT_NEAR(std::stod((*it)[2]), frame.px(env.position(id)), 1e-6);
    EXPECT_NEAR(std::stod((*it)[3]), frame.py(env.position(id)), 1e-6);
  }
  EXPECT_EQ(seen, env.size());
}

TEST(Cli, LargeDatasetRoundTrip) {
  const std::string sizes = " --set data.test_envs=50 --set data.test_episodes_per_env=20";
  ASSERT_EQ(run("gen-env --split test" + sizes, "big").code, 0);
  const auto r = run("gen-episodes --split test" + sizes, "big");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto back = read_split((root() / "big/data").string(), Split::kTest);
  nlohmann::json j;
  apply_override(j, "data.test_envs=50");
  apply_override(j, "data.test_episodes_per_env=20");
  const auto want = generate_split(run_config_from_json(j), Split::kTest);
  ASSERT_EQ(back.episodes.size(), 1000u);
  ASSERT_EQ(back.envs.size(), 50u);
  for (const auto& [seed, env] : want.envs) EXPECT_TRUE(back.envs.at(seed) == env);
  for (std::size_t i = 0; i < want.episodes.size(); ++i) {
    EXPECT_EQ(back.episodes[i].gt_path, want.episodes[i].gt_path);
    EXPECT_EQ(back.episodes[i].instruction, want.episodes[i].instruction);
  }
}

TEST(Cli, AblateEmitsOneRowPerVariant) {
  const auto r = run(std::string("ablate") + kTiny, "abl");
  EXPECT_TRUE(r.code == 0 || r.code == 3) << r.out;
  const auto csv = slurp(root() / "abl/ablate/ablation.csv");
  std::istringstream in(csv);
  std::vector<std::string> labels;
  for (std::string line; std::getline(in, line);) labels.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(labels, (std::vector<std::string>{"label", "full", "local", "global", "no-reasoning", "no-grounding"}));
  EXPECT_TRUE(fs::exists(root() / "abl/ablate/trend.txt"));
  EXPECT_EQ(r.code == 0, slurp(root() / "abl/ablate/trend.txt").find("FAIL") == std::string::npos);
}
