#include "ssmnav/environment.hpp"
#include "ssmnav/instructions.hpp"
#include "ssmnav/policy.hpp"
#include "ssmnav/rng.hpp"
#include "ssmnav/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace ssmnav;

namespace {

PolicyConfig tiny(int vocab_tokens) {
  PolicyConfig c;
  c.vocab_tokens = vocab_tokens;
  c.d_x = 6;
  c.d_f = 5;
  c.tiles = 1;
  c.d_h = 7;
  return c;
}

// Action word by hand: compass bearings in degrees, no shared helpers.
std::string expected_action(double prev_bearing_deg, const Vec3& a, const Vec3& b) {
  const Vec3 d = b - a;
  const double planar = std::sqrt(d.x() * d.x() + d.y() * d.y());
  if (std::abs(d.z()) > planar) return d.z() > 0 ? "up" : "down";
  double bearing = std::atan2(d.x(), d.y()) * 180.0 / std::numbers::pi;
  double turn = std::fmod(bearing - prev_bearing_deg + 540.0, 360.0) - 180.0;
  if (turn == -180.0) turn = 180.0;
  if (std::abs(turn) < 45.0) return "forward";
  return turn > 0 ? "right" : "left";
}

double bearing_deg(const Vec3& a, const Vec3& b) { return std::atan2(b.x() - a.x(), b.y() - a.y()) * 180.0 / std::numbers::pi; }

}  // namespace

TEST(Vocab, DenseDisjointIds) {
  const Vocab v(10);
  EXPECT_EQ(v.size(), 16);
  for (int t = 0; t < v.size(); ++t) {
    EXPECT_NE(v.is_action(t), v.is_landmark(t));
    EXPECT_EQ(v.id(v.word(t)), t);
  }
  EXPECT_THROW(v.id("L10"), ValidationError);
  EXPECT_THROW(v.id("jump"), ValidationError);
  EXPECT_EQ(v.split(v.join({0, 6, 5})), (std::vector<int>{0, 6, 5}));
}

TEST(Instructions, StraightTwoHops) {
  const Vocab v(10);
  const std::vector<Vec3> path = {{0, 0, 0}, {0, 3, 0}, {0, 6, 0}};
  const auto t = generate_instruction(path, {1, 7, 3}, v);
  EXPECT_EQ(v.join(t), "forward L7 forward L3 stop");
}

TEST(Instructions, RightTurnAtSecondHop) {
  const Vocab v(10);
  const std::vector<Vec3> path = {{0, 0, 0}, {0, 3, 0}, {3, 3, 0}};
  const auto t = generate_instruction(path, {0, 1, 2}, v);
  EXPECT_EQ(v.word(t[2]), "right");
  const std::vector<Vec3> left = {{0, 0, 0}, {0, 3, 0}, {-3, 3, 0}};
  EXPECT_EQ(v.word(generate_instruction(left, {0, 1, 2}, v)[2]), "left");
  const std::vector<Vec3> climb = {{0, 0, 0}, {0, 1, 3}};
  EXPECT_EQ(v.word(generate_instruction(climb, {0, 1}, v)[0]), "up");
}

TEST(Instructions, MatchesHandClassifierOnGeneratedEpisodes) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto env = EnvironmentGraph::generate(s, EnvParams{});
    const Vocab v(env.params().vocab);
    const auto e = make_episode(env, s, EpisodeParams{});
    const auto words = v.join(e.instruction);
    std::string expected;
    double prev = 0.0;
    for (std::size_t i = 0; i + 1 < e.gt_path.size(); ++i) {
      const Vec3 a = env.position(e.gt_path[i]), b = env.position(e.gt_path[i + 1]);
      expected += expected_action(prev, a, b) + " L" + std::to_string(env.landmark(e.gt_path[i + 1])) + " ";
      prev = bearing_deg(a, b);
    }
    expected += "stop";
    EXPECT_EQ(words, expected);
  }
}

TEST(Instructions, RuleFollowingWalkerReachesGoalWhenUnambiguous) {
  int walked = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto env = EnvironmentGraph::generate(s, EnvParams{});
    const Vocab v(env.params().vocab);
    EpisodeParams ep;
    ep.trap_branches = 0;
    const auto e = make_episode(env, s, ep);
    const auto tokens = e.instruction;
    NodeId cur = e.start;
    double prev = 0.0;
    bool ambiguous = false;
    for (std::size_t k = 0; k + 1 < tokens.size(); k += 2) {
      const std::string act = v.word(tokens[k]);
      const int mark = v.landmark_of(tokens[k + 1]);
      std::vector<NodeId> match;
      for (NodeId u : env.neighbors(cur)) {
        if (env.landmark(u) == mark && expected_action(prev, env.position(cur), env.position(u)) == act) match.push_back(u);
      }
      if (match.size() != 1) {
        ambiguous = true;
        break;
      }
      prev = bearing_deg(env.position(cur), env.position(match[0]));
      cur = match[0];
    }
    if (ambiguous) continue;
    ++walked;
    EXPECT_EQ(cur, e.goal) << "seed " << s;
  }
  EXPECT_GT(walked, 5);
}

TEST(Encode, ZeroWeightsGiveZeroFixedPoint) {
  const auto params = PolicyParams::zeros(tiny(16));
  ad::Tape tape(&params.tensors(), false);
  PolicyGraph g(params, tape);
  const auto x = g.encode({0, 7, 1, 9, 5});
  EXPECT_EQ(x.rows(), 6);
  EXPECT_EQ(x.cols(), 5);
  EXPECT_EQ(x.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encode, ShapeDeterminismAndOrderSensitivity) {
  const auto params = PolicyParams::random(tiny(16), 3);
  auto run = [&](const std::vector<int>& t) {
    ad::Tape tape(&params.tensors(), false);
    PolicyGraph g(params, tape);
    return Mat(g.encode(t).value());
  };
  const Mat a = run({0, 7, 1, 9, 5});
  EXPECT_EQ(a.cols(), 5);
  EXPECT_TRUE(a.allFinite());
  EXPECT_EQ(a, run({0, 7, 1, 9, 5}));
  EXPECT_GT((a - run({7, 0, 1, 9, 5})).norm(), 1e-6);
}

TEST(Encode, OutOfVocabularyRejected) {
  const auto params = PolicyParams::random(tiny(16), 3);
  ad::Tape tape(&params.tensors(), false);
  PolicyGraph g(params, tape);
  EXPECT_ANY_THROW(g.encode({16}));
  EXPECT_ANY_THROW(g.encode({-1}));
}

class EncodeGrad : public ::testing::TestWithParam<int> {};

TEST_P(EncodeGrad, MatchesFiniteDifferences) {
  auto params = PolicyParams::random(tiny(16), GetParam());
  auto rng = make_rng({std::uint64_t(GetParam()), 5});
  std::normal_distribution<double> g01;
  Mat probe(6, 4);
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe(i) = g01(rng);
  GradCheckOptions opt;
  opt.samples_per_tensor = 0;
  const auto report = grad_check(params.tensors(), [&](ad::Tape& tape) {
    PolicyGraph g(params, tape);
    return ad::sum(ad::mul(g.encode({2, 9, 0, 12}), tape.constant(probe)));
  }, opt);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_tensor;
}

INSTANTIATE_TEST_SUITE_P(Seeds, EncodeGrad, ::testing::Range(0, 10));
