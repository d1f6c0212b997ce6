#include "common/builders.hpp"
#include "common/oracles.hpp"

#include "ssmnav/policy.hpp"
#include "ssmnav/rng.hpp"
#include "ssmnav/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ssmnav;
using ad::Var;

namespace {

// Plain Eigen reference pieces, written out independently of the tape.
Vec ref_softmax(const Vec& v) {
  const Vec e = (v.array() - v.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Vec ref_sigmoid(const Vec& v) { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); }

Vec ref_gru(const Mat& wi, const Mat& wh, const Mat& b, const Vec& x, const Vec& h) {
  const Eigen::Index d = h.size();
  const Vec gx = wi * x + b.col(0);
  const Vec gh = wh * h;
  const Vec z = ref_sigmoid(gx.segment(0, d) + gh.segment(0, d));
  const Vec r = ref_sigmoid(gx.segment(d, d) + gh.segment(d, d));
  const Vec n = (gx.segment(2 * d, d) + r.cwiseProduct(gh.segment(2 * d, d))).array().tanh().matrix();
  return n + z.cwiseProduct(h - n);
}

Vec ref_attend(const Mat& values, const Vec& key, const Mat& w) { return values * ref_softmax(values.transpose() * (w * key)); }

PolicyConfig tiny_config(int d_f = 4) {
  PolicyConfig c;
  c.vocab_tokens = 16;
  c.d_x = 4;
  c.d_f = d_f;
  c.tiles = 1;
  c.d_h = 5;
  c.reasoning_steps = 2;
  return c;
}

PolicyConfig scalar_config() {
  PolicyConfig c;
  c.vocab_tokens = 3;
  c.d_x = 1;
  c.d_f = 1;
  c.tiles = 1;
  c.d_h = 1;
  return c;
}

Mat m11(double v) { return Mat::Constant(1, 1, v); }

Vec random_vec(int n, std::uint64_t seed) {
  auto rng = make_rng({seed, 31});
  std::normal_distribution<double> g;
  Vec v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

SubNode candidate(double visual, const Eigen::Vector4d& raw, NodeId parent = 0) {
  SubNode s;
  s.parent = parent;
  s.visual = Vec::Constant(1, visual);
  s.orientation.raw = raw;
  return s;
}

}  // namespace

TEST(Attend, SingleValueAndZeroKey) {
  ad::Tape t;
  const Mat v = random_vec(3, 1);
  const auto one = attend(t.constant(v), t.constant(random_vec(2, 2)), t.constant(Mat::Ones(3, 2)));
  EXPECT_NEAR(one.weights.scalar(), 1.0, 1e-15);
  EXPECT_LT((one.pooled.value() - v).norm(), 1e-15);

  Mat vals(3, 4);
  vals.setRandom();
  const auto uni = attend(t.constant(vals), t.constant(Mat::Zero(2, 1)), t.constant(Mat::Ones(3, 2)));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(uni.weights.value()(i, 0), 0.25, 1e-15);
}

TEST(Attend, TwoScalarValuesByHand) {
  ad::Tape t;
  Mat vals(1, 2);
  vals << 2.0, -1.0;
  const auto a = attend(t.constant(vals), t.constant(m11(0.5)), t.constant(m11(0.8)));
  // scores = value * 0.8 * 0.5 = (0.8, -0.4)
  const double e1 = std::exp(0.8), e2 = std::exp(-0.4);
  EXPECT_NEAR(a.weights.value()(0, 0), e1 / (e1 + e2), 1e-14);
  EXPECT_NEAR(a.pooled.scalar(), (2.0 * e1 - e2) / (e1 + e2), 1e-14);
  EXPECT_NEAR(a.weights.value().sum(), 1.0, 1e-15);
}

TEST(Attend, DimensionMismatchRejected) {
  ad::Tape t;
  EXPECT_ANY_THROW(attend(t.constant(Mat::Ones(3, 2)), t.constant(Mat::Ones(2, 1)), t.constant(Mat::Ones(2, 2))));
}

TEST(UpdateState, ZeroParamsStayAtFixedPoint) {
  const auto params = PolicyParams::zeros(tiny_config());
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const auto env = EnvironmentGraph::generate(1, fuzz::small_env(12, 4));
  Var x = g.encode({0, 6, 5});
  Var h = g.zero_state();
  for (NodeId v = 0; v < 4; ++v) h = g.update_state(h, x, env.observe(v));
  EXPECT_EQ(h.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(UpdateState, OutputWidthIndependentOfViewCount) {
  const auto params = PolicyParams::random(tiny_config(), 4);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  Var x = g.encode({0, 6, 5});
  for (int k : {0, 1, 5}) {
    std::vector<build::Target> targets;
    for (int i = 0; i < k; ++i) targets.push_back({i + 1, Vec3(std::sin(i), std::cos(i), 0) * 3});
    const Var h = g.update_state(g.zero_state(), x, build::obs(0, Vec3::Zero(), targets, 4));
    EXPECT_EQ(h.rows(), 5);
    EXPECT_TRUE(h.value().allFinite());
  }
}

TEST(UpdateState, MatchesReferenceCell) {
  const auto params = PolicyParams::random(tiny_config(), 5);
  const auto& P = params.tensors();
  const auto& ix = params.index();
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const auto env = EnvironmentGraph::generate(2, fuzz::small_env(12, 4));
  Var x = g.encode({1, 7, 2, 9});
  const Vec h0 = random_vec(5, 9);
  const auto obs = env.observe(3);
  const Vec got = g.update_state(t.constant(h0), x, obs).value();

  const Vec x_bar = ref_attend(x.value(), h0, P[ix.state_att_x]);
  Mat o(8, Eigen::Index(obs.navigable.size()));
  for (std::size_t k = 0; k < obs.navigable.size(); ++k) o.col(Eigen::Index(k)) << obs.navigable[k].visual, obs.navigable[k].orientation.raw;
  const Vec o_bar = ref_attend(o, h0, P[ix.state_att_o]);
  Vec in(12);
  in << x_bar, o_bar;
  const Vec want = ref_gru(P[ix.state_wi], P[ix.state_wh], P[ix.state_b], in, h0);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Grounding, SingleTokenAndEqualRows) {
  const auto params = PolicyParams::random(tiny_config(), 6);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const Vec col = random_vec(4, 3);
  const auto one = g.ground_text(t.constant(col), t.constant(random_vec(5, 4)));
  EXPECT_LT((one.x_p.value() - col).norm(), 1e-15);
  EXPECT_LT((one.x_a.value() - col).norm(), 1e-15);
  Mat same(4, 3);
  same << col, col, col;
  const auto eq = g.ground_text(t.constant(same), t.constant(random_vec(5, 4)));
  EXPECT_LT((eq.x_p.value() - col).norm(), 1e-14);
}

TEST(Grounding, TwoScalarTokensByHand) {
  auto params = PolicyParams::zeros(scalar_config());
  auto& P = params.tensors();
  const auto& ix = params.index();
  P[ix.ground_xp] = m11(1.5);
  P[ix.ground_xa] = m11(-0.5);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  Mat X(1, 2);
  X << 1.0, 3.0;
  const auto gr = g.ground_text(t.constant(X), t.constant(m11(0.4)));
  // Perception scores 1.5*0.4*(1,3) = (0.6, 1.8); action scores -0.2*(1,3).
  const double p1 = 1.0 / (1.0 + std::exp(1.2));
  EXPECT_NEAR(gr.x_p.scalar(), p1 * 1.0 + (1 - p1) * 3.0, 1e-14);
  const double a1 = 1.0 / (1.0 + std::exp(-0.4));
  EXPECT_NEAR(gr.x_a.scalar(), a1 * 1.0 + (1 - a1) * 3.0, 1e-14);
  EXPECT_NEAR(gr.alpha_p.value().sum(), 1.0, 1e-15);
}

TEST(Grounding, FuseStatesZeroAndIdentityBlocks) {
  auto params = PolicyParams::zeros(tiny_config());
  ad::Tape t0(&params.tensors(), false);
  PolicyGraph g0(params, t0);
  const Vec h = random_vec(5, 1), xp = random_vec(4, 2), xa = random_vec(4, 3);
  auto [zp, za] = g0.fuse_states(t0.constant(h), t0.constant(xp), t0.constant(xa));
  EXPECT_EQ(zp.value().norm(), 0.0);
  EXPECT_EQ(za.value().norm(), 0.0);

  auto& P = params.tensors();
  const auto& ix = params.index();
  Mat proj(5, 4);
  proj.setRandom();
  P[ix.fuse_hp] << Mat::Identity(5, 5), proj;
  P[ix.fuse_ha] << Mat::Identity(5, 5), Mat::Zero(5, 4);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  auto [hp, ha] = g.fuse_states(t.constant(h), t.constant(xp), t.constant(xa));
  EXPECT_LT((hp.value() - (h + proj * xp)).norm(), 1e-14);
  EXPECT_LT((ha.value() - h).norm(), 1e-15);
}

TEST(Grounding, DisabledUsesRawState) {
  auto params = PolicyParams::random(tiny_config(), 7);
  params.set_fine_grained_grounding(false);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const Vec h = random_vec(5, 1);
  const auto s = g.ground(t.constant(h), g.encode({0, 6}));
  EXPECT_EQ(s.h_p.value(), h);
  EXPECT_EQ(s.h_a.value(), h);
}

TEST(Assemble, OneViewNodeAndIsolatedStart) {
  const auto params = PolicyParams::random(tiny_config(), 8);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  Vec vis(4);
  vis << 1, 2, 3, 4;
  const auto mem = SceneMemory::init(build::obs(0, Vec3::Zero(), {{1, {0, 3, 0}}}, 4, {vis}));
  const NavState s{t.constant(random_vec(5, 1)), t.constant(random_vec(5, 2)), t.constant(random_vec(5, 3))};
  const auto e = g.assemble(mem, s);
  EXPECT_LT((e.f_hat[0].value().col(0) - vis).norm(), 1e-15);
  EXPECT_EQ(e.r_hat[0].value().norm(), 0.0);
}

TEST(Assemble, RandomMemoryMatchesReimplementation) {
  const auto params = PolicyParams::random(tiny_config(), 9);
  const auto& P = params.tensors();
  const auto& ix = params.index();
  const auto env = EnvironmentGraph::generate(11, fuzz::small_env(15, 4));
  auto rng = make_rng({11});
  const auto mem = fuzz::explore(env, 0, 4, rng);
  ASSERT_GE(mem.nodes().size(), 5u);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const Vec hp = random_vec(5, 1), ha = random_vec(5, 2);
  const auto e = g.assemble(mem, {t.constant(random_vec(5, 3)), t.constant(hp), t.constant(ha)});
  int col = 0;
  for (const auto& [id, node] : mem.nodes()) {
    Mat views(4, Eigen::Index(node.panorama_views.size()));
    for (std::size_t k = 0; k < node.panorama_views.size(); ++k) views.col(Eigen::Index(k)) = node.panorama_views[k].visual;
    EXPECT_LT((e.f_hat[0].value().col(col) - ref_attend(views, hp, P[ix.assemble_f])).norm(), 1e-12);
    const auto& edges = mem.out_edges(id);
    Mat orient(4, Eigen::Index(edges.size()));
    for (std::size_t k = 0; k < edges.size(); ++k) orient.col(Eigen::Index(k)) = edges[k].orientation.raw;
    EXPECT_LT((e.r_hat[0].value().col(col) - ref_attend(orient, ha, P[ix.assemble_r])).norm(), 1e-12);
    ++col;
  }
}

TEST(Propagate, ZeroStepsIsIdentity) {
  const auto params = PolicyParams::random(tiny_config(), 10);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const auto w = build::chain(3);
  const auto mem = build::visit(w, {0, 1, 2});
  const NavState s{g.zero_state(), t.constant(random_vec(5, 2)), t.constant(random_vec(5, 3))};
  auto e = g.assemble(mem, s);
  const Mat f0 = e.f_hat[0].value();
  g.propagate(e, mem, 0);
  EXPECT_EQ(e.f_hat.size(), 1u);
  EXPECT_EQ(e.f_final().value(), f0);
  EXPECT_THROW(g.propagate(e, mem, -1), ValidationError);
}

TEST(Propagate, StarCentreReceivesSumOfNeighbours) {
  // Update cell reduced to h' = tanh(m) by saturating the update gate shut.
  auto params = PolicyParams::zeros(tiny_config(1));
  auto& P = params.tensors();
  const auto& ix = params.index();
  P[ix.uf_b](0, 0) = -60.0;  // z ~ 0
  P[ix.uf_wi](2, 0) = 1.0;   // n = tanh(m)
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  build::World w;
  w.pos = {{0, 0, 0}, {0, 3, 0}, {3, 0, 0}, {-3, 0, 0}};
  w.adj = {{1, 2, 3}, {0}, {0}, {0}};
  const auto mem = build::visit(w, {0, 1, 0, 2, 0, 3}, 1);
  EnrichedMemory e;
  e.order = {0, 1, 2, 3};
  for (int i = 0; i < 4; ++i) e.column[i] = i;
  Mat f(1, 4);
  f << 0.0, 0.1, 0.1, 0.1;
  e.f_hat = {t.constant(f)};
  e.r_hat = {t.constant(Mat::Zero(4, 4))};
  g.propagate(e, mem, 1);
  EXPECT_NEAR(std::atanh(e.f_final().value()(0, 0)), 0.3, 1e-12);
  EXPECT_NEAR(std::atanh(e.f_final().value()(0, 1)), 0.0, 1e-12);
}

TEST(Propagate, TwoStepsOnPathGraphMatchesUnrolledOracle) {
  const auto params = PolicyParams::random(tiny_config(), 12);
  const auto& P = params.tensors();
  const auto& ix = params.index();
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const auto w = build::chain(4);
  const auto mem = build::visit(w, {0, 1, 2, 3});
  const NavState s{g.zero_state(), t.constant(random_vec(5, 2)), t.constant(random_vec(5, 3))};
  auto e = g.assemble(mem, s);
  Mat f = e.f_hat[0].value(), r = e.r_hat[0].value();
  g.propagate(e, mem, 2);
  ASSERT_EQ(e.f_hat.size(), 3u);
  for (int step = 0; step < 2; ++step) {
    Mat nf(f.rows(), 4), nr(r.rows(), 4);
    for (int v = 0; v < 4; ++v) {
      Vec mf = Vec::Zero(f.rows()), mr = Vec::Zero(r.rows());
      for (int u : {v - 1, v + 1}) {
        if (u < 0 || u > 3) continue;
        mf += f.col(u);
        mr += r.col(u);
      }
      nf.col(v) = ref_gru(P[ix.uf_wi], P[ix.uf_wh], P[ix.uf_b], mf, f.col(v));
      nr.col(v) = ref_gru(P[ix.ur_wi], P[ix.ur_wh], P[ix.ur_b], mr, r.col(v));
    }
    f = nf;
    r = nr;
    EXPECT_LT((e.f_hat[step + 1].value() - f).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((e.r_hat[step + 1].value() - r).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Propagate, ZeroCellDecaysTowardFixedPoint) {
  const auto params = PolicyParams::zeros(tiny_config());
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const auto mem = build::visit(build::chain(3), {0, 1, 2});
  EnrichedMemory e;
  e.order = {0, 1, 2};
  for (int i = 0; i < 3; ++i) e.column[i] = i;
  Mat f = Mat::Random(4, 3);
  e.f_hat = {t.constant(f)};
  e.r_hat = {t.constant(Mat::Zero(4, 3))};
  g.propagate(e, mem, 3);
  // z = 1/2, n = 0: every step halves the distance to the fixed point 0.
  EXPECT_LT((e.f_final().value() - f / 8.0).norm(), 1e-15);
  EXPECT_EQ(e.r_final().value().norm(), 0.0);
}

TEST(ScoreSubnodes, OnlyStopAndIdenticalCandidates) {
  const auto params = PolicyParams::random(tiny_config(1), 13);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const NavState s{g.zero_state(), t.constant(random_vec(5, 2)), t.constant(random_vec(5, 3))};
  SubNode stop;
  stop.is_stop = true;
  stop.visual = Vec::Constant(1, 0.3);
  EXPECT_NEAR(g.score_subnodes(s, {stop}).probs[0], 1.0, 1e-15);
  const auto c = candidate(0.7, Eigen::Vector4d(1, 0, 1, 0));
  const auto d = g.score_subnodes(s, {c, c, c});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.probs[i], 1.0 / 3, 1e-15);
}

TEST(ScoreSubnodes, ThreeActionsByHand) {
  auto params = PolicyParams::zeros(scalar_config());
  auto& P = params.tensors();
  const auto& ix = params.index();
  P[ix.subnode_qf] = m11(0.9);
  P[ix.subnode_qr] << 0.2, -0.4, 0.1, 0.3;
  P[ix.combine_w] << 1.0, 0.5, -0.3, 2.0;
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const double hp = 0.6, ha = -1.1;
  const NavState s{g.zero_state(), t.constant(m11(hp)), t.constant(m11(ha))};
  const double c = std::cos(1.0), sn = std::sin(1.0);
  const std::vector<SubNode> cands = {candidate(1.0, {1, 0, 1, 0}), candidate(-0.5, {c, sn, 1, 0}),
                                      candidate(2.0, {0, -1, c, sn})};
  const auto d = g.score_subnodes(s, cands);

  const double w0 = 1.0 * hp + 0.5 * ha, w1 = -0.3 * hp + 2.0 * ha;
  const double raw[3][4] = {{1, 0, 1, 0}, {c, sn, 1, 0}, {0, -1, c, sn}};
  const double vis[3] = {1.0, -0.5, 2.0};
  double logit[3], z = 0;
  for (int k = 0; k < 3; ++k) {
    const double qf = vis[k] * 0.9 * hp;
    const double qr = (raw[k][0] * 0.2 - raw[k][1] * 0.4 + raw[k][2] * 0.1 + raw[k][3] * 0.3) * ha;
    logit[k] = qf * w0 + qr * w1;
    z += std::exp(logit[k]);
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(d.probs[k], std::exp(logit[k]) / z, 1e-14);
}

TEST(ScoreFrontiers, IdenticalAndHandCase) {
  auto params = PolicyParams::zeros(scalar_config());
  auto& P = params.tensors();
  const auto& ix = params.index();
  P[ix.frontier_cf] = m11(0.7);
  P[ix.frontier_cr] << 0.1, 0.2, -0.3, 0.4;
  P[ix.combine_w] << 0.5, -1.0, 1.5, 0.25;
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const double hp = 1.2, ha = 0.3;
  const NavState s{g.zero_state(), t.constant(m11(hp)), t.constant(m11(ha))};
  EnrichedMemory e;
  e.order = {0, 1, 2};
  for (int i = 0; i < 3; ++i) e.column[i] = i;
  Mat f(1, 3), r(4, 3);
  f << 0.5, 0.5, -1.0;
  r << 1, 1, 0, 0, 0, 0.5, 1, 1, 0, 0, 0, 1;
  e.f_hat = {t.constant(f)};
  e.r_hat = {t.constant(r)};
  const auto same = g.score_frontiers(e, s, {0, 1});
  EXPECT_NEAR(same.probs[0], 0.5, 1e-15);
  EXPECT_NEAR(same.probs[1], 0.5, 1e-15);

  const auto d = g.score_frontiers(e, s, {0, 2});
  const double w0 = 0.5 * hp - 1.0 * ha, w1 = 1.5 * hp + 0.25 * ha;
  auto logit = [&](int col) {
    const double cf = f(0, col) * 0.7 * hp;
    const double cr = (r(0, col) * 0.1 + r(1, col) * 0.2 - r(2, col) * 0.3 + r(3, col) * 0.4) * ha;
    return cf * w0 + cr * w1;
  };
  const double l0 = logit(0), l2 = logit(2);
  EXPECT_NEAR(d.probs[0], 1.0 / (1.0 + std::exp(l2 - l0)), 1e-14);
  EXPECT_NEAR(d.probs.sum(), 1.0, 1e-15);
}

TEST(ScoreGlobal, SingleIdenticalAndHandCase) {
  auto params = PolicyParams::zeros(scalar_config());
  auto& P = params.tensors();
  const auto& ix = params.index();
  P[ix.global_qf] << 0.4, -0.6;  // top half scores the candidate, bottom half its parent
  P[ix.global_qr] << 0.1, 0.2, 0.3, 0.4, -0.1, -0.2, 0.5, 0.6;
  P[ix.combine_w] << 1.0, 0.0, 0.5, 1.0;
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const double hp = 0.8, ha = -0.5;
  const NavState s{g.zero_state(), t.constant(m11(hp)), t.constant(m11(ha))};
  EnrichedMemory e;
  e.order = {0, 1};
  e.column = {{0, 0}, {1, 1}};
  Mat f(1, 2), r(4, 2);
  f << 0.3, -0.9;
  r << 1, 0, 0, 1, 1, 1, 0, 0;
  e.f_hat = {t.constant(f)};
  e.r_hat = {t.constant(r)};

  const auto c0 = candidate(1.0, {1, 0, 1, 0}, 0);
  EXPECT_NEAR(g.score_global(e, s, {c0}).probs[0], 1.0, 1e-15);
  const auto uni = g.score_global(e, s, {c0, c0});
  EXPECT_NEAR(uni.probs[0], 0.5, 1e-15);

  const std::vector<SubNode> cands = {c0, candidate(-0.5, {0, 1, 1, 0}, 0), candidate(2.0, {0, -1, 0, 1}, 1)};
  const auto d = g.score_global(e, s, cands);
  const double wq0 = 1.0 * hp + 0.0 * ha, wq1 = 0.5 * hp + 1.0 * ha;
  double logit[3], z = 0;
  for (int k = 0; k < 3; ++k) {
    const int par = int(cands[k].parent);
    const double qf = cands[k].visual[0] * 0.4 * hp + f(0, par) * -0.6 * hp;
    const auto& o = cands[k].orientation.raw;
    const double qr = (o[0] * 0.1 + o[1] * 0.2 + o[2] * 0.3 + o[3] * 0.4) * ha +
                      (r(0, par) * -0.1 + r(1, par) * -0.2 + r(2, par) * 0.5 + r(3, par) * 0.6) * ha;
    logit[k] = qf * wq0 + qr * wq1;
    z += std::exp(logit[k]);
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(d.probs[k], std::exp(logit[k]) / z, 1e-14);
}

TEST(ScoreGlobal, SharedParentShiftLeavesDistributionUnchanged) {
  // With one parent, its enriched feature adds the same constant to every
  // score; the distribution (and so its argmax) must not move.
  const auto params = PolicyParams::random(tiny_config(), 14);
  const auto env = EnvironmentGraph::generate(3, fuzz::small_env(12, 4));
  const auto mem = SceneMemory::init(env.observe(0));
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const NavState s{g.zero_state(), t.constant(random_vec(5, 2)), t.constant(random_vec(5, 3))};
  auto e = g.assemble(mem, s);
  const auto cands = mem.global_action_space();
  const auto base = g.score_global(e, s, cands);
  for (std::uint64_t k = 0; k < 20; ++k) {
    EnrichedMemory shifted = e;
    shifted.f_hat = {t.constant(random_vec(4, 100 + k) * 10.0)};
    shifted.r_hat = {t.constant(random_vec(4, 200 + k) * 10.0)};
    const auto d = g.score_global(shifted, s, cands);
    EXPECT_LT((d.probs - base.probs).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::Index a, b;
    d.probs.maxCoeff(&a);
    base.probs.maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

class PolicyFuzz : public ::testing::TestWithParam<int> {};

TEST_P(PolicyFuzz, DistributionsNormalised) {
  const auto params = PolicyParams::random(tiny_config(), GetParam());
  const auto env = EnvironmentGraph::generate(50 + GetParam(), fuzz::small_env(20, 4));
  auto rng = make_rng({std::uint64_t(GetParam()), 8});
  const auto mem = fuzz::explore(env, 0, 6, rng);
  ad::Tape t(&params.tensors(), false);
  PolicyGraph g(params, t);
  const NavState s = g.ground(t.constant(random_vec(5, GetParam())), g.encode({0, 6, 1, 8, 5}));
  auto e = g.assemble(mem, s);
  g.propagate(e, mem, 2);
  std::vector<Distribution> all;
  auto space = mem.global_action_space();
  if (!space.empty()) all.push_back(g.score_global(e, s, space));
  const auto fr = mem.frontiers();
  if (!fr.empty()) all.push_back(g.score_frontiers(e, s, fr));
  for (const auto& [id, node] : mem.nodes()) {
    auto c = node.live_subnodes;
    c.push_back(make_stop(node));
    all.push_back(g.score_subnodes(s, c));
  }
  for (const auto& d : all) {
    EXPECT_NEAR(d.probs.sum(), 1.0, 1e-9);
    EXPECT_GT(d.probs.minCoeff(), 0.0);
  }
}

// Gradient checks per component at tiny dims. Each loss is a fixed random
// read-out of the component's output so every coordinate contributes.
TEST_P(PolicyFuzz, ComponentGradientsMatchFiniteDifferences) {
  auto params = PolicyParams::random(tiny_config(), 1000 + GetParam());
  const auto env = EnvironmentGraph::generate(70 + GetParam(), fuzz::small_env(16, 4));
  auto rng = make_rng({std::uint64_t(GetParam()), 9});
  const auto mem = fuzz::explore(env, 0, 5, rng);
  const std::vector<int> tokens = {0, 6, 2, 9, 5};
  const auto obs = env.observe(mem.current());
  GradCheckOptions opt;
  opt.samples_per_tensor = 6;
  opt.seed = GetParam();

  auto readout = [&](ad::Tape& t, Var v, std::uint64_t salt) {
    auto r = make_rng({salt, std::uint64_t(GetParam())});
    std::normal_distribution<double> g01;
    Mat w(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = g01(r);
    return ad::sum(ad::mul(v, t.constant(w)));
  };

  const std::vector<std::pair<const char*, LossFn>> cases = {
      {"update_state", [&](ad::Tape& t) {
         PolicyGraph g(params, t);
         Var x = g.encode(tokens);
         Var h = g.update_state(g.zero_state(), x, env.observe(0));
         return readout(t, g.update_state(h, x, obs), 1);
       }},
      {"ground", [&](ad::Tape& t) {
         PolicyGraph g(params, t);
         Var x = g.encode(tokens);
         const NavState s = g.ground(g.update_state(g.zero_state(), x, obs), x);
         return readout(t, s.h_p, 2) + readout(t, s.h_a, 3);
       }},
      {"assemble_propagate", [&](ad::Tape& t) {
         PolicyGraph g(params, t);
         Var x = g.encode(tokens);
         const NavState s = g.ground(g.update_state(g.zero_state(), x, obs), x);
         auto e = g.assemble(mem, s);
         g.propagate(e, mem, 2);
         return readout(t, e.f_final(), 4) + readout(t, e.r_final(), 5);
       }},
      {"score_heads", [&](ad::Tape& t) {
         PolicyGraph g(params, t);
         Var x = g.encode(tokens);
         const NavState s = g.ground(g.update_state(g.zero_state(), x, obs), x);
         auto e = g.assemble(mem, s);
         g.propagate(e, mem, 2);
         std::vector<Var> terms;
         const auto space = mem.global_action_space();
         if (!space.empty()) terms.push_back(readout(t, g.score_global(e, s, space).log_probs, 6));
         const auto fr = mem.frontiers();
         if (!fr.empty()) terms.push_back(readout(t, g.score_frontiers(e, s, fr).log_probs, 7));
         auto c = mem.node(mem.current()).live_subnodes;
         c.push_back(make_stop(mem.node(mem.current())));
         terms.push_back(readout(t, g.score_subnodes(s, c).log_probs, 8));
         return ad::add_n(terms);
       }},
  };
  for (const auto& [name, fn] : cases) {
    const auto report = grad_check(params.tensors(), fn, opt);
    EXPECT_LT(report.max_rel_error, 1e-4) << name << " worst " << report.worst_tensor;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PolicyFuzz, ::testing::Range(0, 10));

TEST(PolicyParams, ShapesFollowDims) {
  const auto c = tiny_config();
  const auto p = PolicyParams::random(c, 1);
  const auto& P = p.tensors();
  const auto& ix = p.index();
  EXPECT_EQ(P[ix.embed].rows(), c.d_x);
  EXPECT_EQ(P[ix.state_wi].cols(), c.d_x + c.d_f + c.d_r());
  EXPECT_EQ(P[ix.global_qf].rows(), 2 * c.d_f);
  EXPECT_EQ(P[ix.global_qr].rows(), 2 * c.d_r());
  EXPECT_EQ(P[ix.combine_w].rows(), 2);
  EXPECT_EQ(P[ix.combine_w].cols(), 2 * c.d_h);
  EXPECT_TRUE(P.all_finite());
}

TEST(PolicyParams, JsonRoundTripIsBitExact) {
  const auto p = PolicyParams::random(tiny_config(), 2);
  const auto text = p.to_json().dump();
  const auto back = PolicyParams::from_json(nlohmann::json::parse(text));
  EXPECT_TRUE(back == p);
  EXPECT_EQ(back.to_json().dump(), text);
}
