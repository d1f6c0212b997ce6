#include "ssmnav/policy.hpp"

#include "ssmnav/json_util.hpp"
#include "ssmnav/rng.hpp"

#include <cmath>

namespace ssmnav {

using ad::Var;

void PolicyConfig::validate() const {
  if (vocab_tokens < 1 || d_x < 1 || d_f < 1 || tiles < 1 || d_h < 1) {
    throw ValidationError("policy dimensions must be positive");
  }
  if (reasoning_steps < 0) throw ValidationError("reasoning steps must be >= 0");
}

nlohmann::json policy_config_to_json(const PolicyConfig& c) {
  return {{"vocab_tokens", c.vocab_tokens},
          {"d_x", c.d_x},
          {"d_f", c.d_f},
          {"tiles", c.tiles},
          {"d_h", c.d_h},
          {"reasoning_steps", c.reasoning_steps},
          {"fine_grained_grounding", c.fine_grained_grounding},
          {"share_combination", c.share_combination}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.vocab_tokens = j.at("vocab_tokens").get<int>();
  c.d_x = j.at("d_x").get<int>();
  c.d_f = j.at("d_f").get<int>();
  c.tiles = j.at("tiles").get<int>();
  c.d_h = j.at("d_h").get<int>();
  c.reasoning_steps = j.at("reasoning_steps").get<int>();
  c.fine_grained_grounding = j.at("fine_grained_grounding").get<bool>();
  c.share_combination = j.at("share_combination").get<bool>();
  c.validate();
  return c;
}

void PolicyParams::build(const PolicyConfig& c) {
  c.validate();
  config_ = c;
  tensors_ = ad::ParamSet();
  auto& t = tensors_;
  const int dx = c.d_x, df = c.d_f, dr = c.d_r(), dh = c.d_h, dobs = c.d_f + c.d_r();
  index_.embed = t.add("embed", Mat::Zero(dx, c.vocab_tokens));
  index_.enc_wi = t.add("encoder.Wi", Mat::Zero(3 * dx, dx));
  index_.enc_wh = t.add("encoder.Wh", Mat::Zero(3 * dx, dx));
  index_.enc_b = t.add("encoder.b", Mat::Zero(3 * dx, 1));
  index_.state_wi = t.add("state.Wi", Mat::Zero(3 * dh, dx + dobs));
  index_.state_wh = t.add("state.Wh", Mat::Zero(3 * dh, dh));
  index_.state_b = t.add("state.b", Mat::Zero(3 * dh, 1));
  index_.state_att_x = t.add("state.att_x", Mat::Zero(dx, dh));
  index_.state_att_o = t.add("state.att_o", Mat::Zero(dobs, dh));
  index_.ground_xp = t.add("ground.Wxp", Mat::Zero(dx, dh));
  index_.ground_xa = t.add("ground.Wxa", Mat::Zero(dx, dh));
  index_.fuse_hp = t.add("fuse.Whp", Mat::Zero(dh, dh + dx));
  index_.fuse_ha = t.add("fuse.Wha", Mat::Zero(dh, dh + dx));
  index_.assemble_f = t.add("assemble.Wf", Mat::Zero(df, dh));
  index_.assemble_r = t.add("assemble.Wr", Mat::Zero(dr, dh));
  index_.uf_wi = t.add("reason.Uf.Wi", Mat::Zero(3 * df, df));
  index_.uf_wh = t.add("reason.Uf.Wh", Mat::Zero(3 * df, df));
  index_.uf_b = t.add("reason.Uf.b", Mat::Zero(3 * df, 1));
  index_.ur_wi = t.add("reason.Ur.Wi", Mat::Zero(3 * dr, dr));
  index_.ur_wh = t.add("reason.Ur.Wh", Mat::Zero(3 * dr, dr));
  index_.ur_b = t.add("reason.Ur.b", Mat::Zero(3 * dr, 1));
  index_.global_qf = t.add("global.Wqf", Mat::Zero(2 * df, dh));
  index_.global_qr = t.add("global.Wqr", Mat::Zero(2 * dr, dh));
  index_.combine_w = t.add("combine.Ww", Mat::Zero(2, 2 * dh));
  index_.combine_wc = c.share_combination ? index_.combine_w : t.add("combine.Wwc", Mat::Zero(2, 2 * dh));
  index_.frontier_cf = t.add("frontier.Wcf", Mat::Zero(df, dh));
  index_.frontier_cr = t.add("frontier.Wcr", Mat::Zero(dr, dh));
  index_.subnode_qf = t.add("subnode.Wqf", Mat::Zero(df, dh));
  index_.subnode_qr = t.add("subnode.Wqr", Mat::Zero(dr, dh));
}

PolicyParams PolicyParams::zeros(const PolicyConfig& config) {
  PolicyParams p;
  p.build(config);
  return p;
}

PolicyParams PolicyParams::random(const PolicyConfig& config, std::uint64_t seed) {
  PolicyParams p = zeros(config);
  for (std::size_t i = 0; i < p.tensors_.size(); ++i) {
    Mat& m = p.tensors_[i];
    auto rng = make_rng({seed, 0x9a7a, i});
    if (i == p.index_.embed) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = gauss(rng);
    } else if (m.cols() == 1) {
      m.setZero();  // biases
    } else {
      const double bound = 1.0 / std::sqrt(double(m.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    }
  }
  return p;
}

nlohmann::json PolicyParams::to_json() const {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const Mat& m = tensors_[i];
    std::vector<double> data(std::size_t(m.size()));
    Eigen::Map<Mat>(data.data(), m.rows(), m.cols()) = m;
    tensors.push_back({{"name", tensors_.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  }
  return {{"config", policy_config_to_json(config_)}, {"tensors", std::move(tensors)}};
}

PolicyParams PolicyParams::from_json(const nlohmann::json& j) {
  PolicyParams p = zeros(policy_config_from_json(j.at("config")));
  const auto& tensors = j.at("tensors");
  if (tensors.size() != p.tensors_.size()) throw ValidationError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& jt = tensors[i];
    Mat& m = p.tensors_[i];
    if (jt.at("name").get<std::string>() != p.tensors_.name(i) || jt.at("rows").get<Eigen::Index>() != m.rows() ||
        jt.at("cols").get<Eigen::Index>() != m.cols()) {
      throw ValidationError("checkpoint tensor " + jt.at("name").get<std::string>() + " has the wrong shape");
    }
    const auto data = jt.at("data").get<std::vector<double>>();
    if (data.size() != std::size_t(m.size())) throw ValidationError("checkpoint tensor data size mismatch");
    m = Eigen::Map<const Mat>(data.data(), m.rows(), m.cols());
  }
  if (!p.tensors_.all_finite()) throw ValidationError("checkpoint holds non-finite values");
  return p;
}

Attention attend(Var values, Var key, Var w) {
  if (values.cols() == 0) throw InvariantError("attention over no values");
  if (w.rows() != values.rows() || w.cols() != key.rows() || key.cols() != 1) {
    throw InvariantError("attention: dimension mismatch");
  }
  Var scores = ad::matmul_tn(values, ad::matmul(w, key));
  Var weights = ad::softmax(scores);
  return {weights, ad::matmul(values, weights)};
}

SubNode make_stop(const MemoryNode& node) {
  SubNode s;
  s.parent = node.id;
  s.target = node.position.coords;
  s.is_stop = true;
  if (!node.panorama_views.empty()) {
    s.visual = Vec::Zero(node.panorama_views.front().visual.size());
    for (const auto& v : node.panorama_views) s.visual += v.visual;
    s.visual /= double(node.panorama_views.size());
  }
  return s;
}

PolicyGraph::PolicyGraph(const PolicyParams& params, ad::Tape& tape) : params_(params), tape_(tape) {
  if (tape.params() != &params.tensors()) throw InvariantError("tape is bound to other parameters");
}

Var PolicyGraph::gru(std::size_t wi, std::size_t wh, std::size_t b, Var x, Var h) {
  const Eigen::Index d = h.rows();
  Var gx = ad::add_bias(ad::matmul(param(wi), x), param(b));
  Var gh = ad::matmul(param(wh), h);
  Var z = ad::sigmoid(ad::slice_rows(gx, 0, d) + ad::slice_rows(gh, 0, d));
  Var r = ad::sigmoid(ad::slice_rows(gx, d, d) + ad::slice_rows(gh, d, d));
  Var n = ad::tanh(ad::slice_rows(gx, 2 * d, d) + ad::mul(r, ad::slice_rows(gh, 2 * d, d)));
  return n + ad::mul(z, h - n);
}

Var PolicyGraph::encode(const std::vector<int>& tokens) {
  const auto& c = config();
  if (tokens.empty()) throw ValidationError("cannot encode an empty instruction");
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_tokens) throw ValidationError("out-of-vocabulary token " + std::to_string(t));
  }
  const auto& ix = params_.index();
  Var h = tape_.constant(Mat::Zero(c.d_x, 1));
  std::vector<Var> states;
  states.reserve(tokens.size());
  for (int t : tokens) {
    Var x = ad::select_cols(param(ix.embed), {t});
    h = gru(ix.enc_wi, ix.enc_wh, ix.enc_b, x, h);
    states.push_back(h);
  }
  return ad::concat_cols(states);
}

Var PolicyGraph::zero_state() { return tape_.constant(Mat::Zero(config().d_h, 1)); }

Var PolicyGraph::update_state(Var h, Var x, const Observation& obs) {
  const auto& c = config();
  const auto& ix = params_.index();
  if (h.rows() != c.d_h || x.rows() != c.d_x) throw InvariantError("update_state: dimension mismatch");
  Var x_bar = attend(x, h, param(ix.state_att_x)).pooled;
  Var o_bar;
  if (obs.navigable.empty()) {
    o_bar = tape_.constant(Mat::Zero(c.d_f + c.d_r(), 1));
  } else {
    Mat o(c.d_f + c.d_r(), Eigen::Index(obs.navigable.size()));
    for (std::size_t k = 0; k < obs.navigable.size(); ++k) {
      const auto& nv = obs.navigable[k];
      if (nv.visual.size() != c.d_f) throw InvariantError("observation feature width differs from d_f");
      o.col(Eigen::Index(k)) << nv.visual, nv.orientation.tiled(c.tiles);
    }
    o_bar = attend(tape_.constant(std::move(o)), h, param(ix.state_att_o)).pooled;
  }
  return gru(ix.state_wi, ix.state_wh, ix.state_b, ad::concat_rows({x_bar, o_bar}), h);
}

Grounding PolicyGraph::ground_text(Var x, Var h) {
  const auto& ix = params_.index();
  Attention p = attend(x, h, param(ix.ground_xp));
  Attention a = attend(x, h, param(ix.ground_xa));
  return {p.pooled, a.pooled, p.weights, a.weights};
}

std::pair<Var, Var> PolicyGraph::fuse_states(Var h, Var x_p, Var x_a) {
  const auto& ix = params_.index();
  return {ad::matmul(param(ix.fuse_hp), ad::concat_rows({h, x_p})),
          ad::matmul(param(ix.fuse_ha), ad::concat_rows({h, x_a}))};
}

NavState PolicyGraph::ground(Var h, Var x) {
  if (!config().fine_grained_grounding) return {h, h, h};
  Grounding g = ground_text(x, h);
  auto [h_p, h_a] = fuse_states(h, g.x_p, g.x_a);
  return {h, h_p, h_a};
}

EnrichedMemory PolicyGraph::assemble(const SceneMemory& mem, const NavState& state) {
  const auto& c = config();
  const auto& ix = params_.index();
  EnrichedMemory out;
  std::vector<Var> f_cols, r_cols;
  for (const auto& [id, node] : mem.nodes()) {
    out.column[id] = int(out.order.size());
    out.order.push_back(id);
    if (node.panorama_views.empty()) {
      f_cols.push_back(tape_.constant(Mat::Zero(c.d_f, 1)));
    } else {
      Mat views(c.d_f, Eigen::Index(node.panorama_views.size()));
      for (std::size_t k = 0; k < node.panorama_views.size(); ++k) {
        views.col(Eigen::Index(k)) = node.panorama_views[k].visual;
      }
      f_cols.push_back(attend(tape_.constant(std::move(views)), state.h_p, param(ix.assemble_f)).pooled);
    }
    const auto& edges = mem.out_edges(id);
    if (edges.empty()) {
      r_cols.push_back(tape_.constant(Mat::Zero(c.d_r(), 1)));
    } else {
      Mat orient(c.d_r(), Eigen::Index(edges.size()));
      for (std::size_t k = 0; k < edges.size(); ++k) orient.col(Eigen::Index(k)) = edges[k].orientation.tiled(c.tiles);
      r_cols.push_back(attend(tape_.constant(std::move(orient)), state.h_a, param(ix.assemble_r)).pooled);
    }
  }
  out.f_hat.push_back(ad::concat_cols(f_cols));
  out.r_hat.push_back(ad::concat_cols(r_cols));
  return out;
}

void PolicyGraph::propagate(EnrichedMemory& enriched, const SceneMemory& mem, int steps) {
  if (steps < 0) throw ValidationError("reasoning steps must be >= 0");
  if (enriched.f_hat.empty()) throw InvariantError("propagate before assemble");
  const Eigen::Index n = Eigen::Index(enriched.order.size());
  // adjacency(u, v) = 1 when u is an out-neighbor of v, so messages = F * adjacency.
  Mat adjacency = Mat::Zero(n, n);
  for (const auto& [id, col] : enriched.column) {
    for (const auto& e : mem.out_edges(id)) adjacency(enriched.column.at(e.to), col) = 1.0;
  }
  Var adj = tape_.constant(std::move(adjacency));
  const auto& ix = params_.index();
  for (int s = 0; s < steps; ++s) {
    Var f = enriched.f_hat.back();
    Var r = enriched.r_hat.back();
    enriched.f_hat.push_back(gru(ix.uf_wi, ix.uf_wh, ix.uf_b, ad::matmul(f, adj), f));
    enriched.r_hat.push_back(gru(ix.ur_wi, ix.ur_wh, ix.ur_b, ad::matmul(r, adj), r));
  }
}

Var PolicyGraph::combination(const NavState& state, bool frontier_head) {
  const auto& ix = params_.index();
  return ad::matmul(param(frontier_head ? ix.combine_wc : ix.combine_w), ad::concat_rows({state.h_p, state.h_a}));
}

std::pair<Mat, Mat> PolicyGraph::candidate_features(const std::vector<SubNode>& candidates) const {
  const auto& c = config();
  Mat f(c.d_f, Eigen::Index(candidates.size()));
  Mat r(c.d_r(), Eigen::Index(candidates.size()));
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& s = candidates[k];
    if (s.visual.size() == c.d_f) {
      f.col(Eigen::Index(k)) = s.visual;
    } else if (s.is_stop && s.visual.size() == 0) {
      f.col(Eigen::Index(k)).setZero();
    } else {
      throw InvariantError("candidate visual width differs from d_f");
    }
    r.col(Eigen::Index(k)) = s.orientation.tiled(c.tiles);
  }
  return {std::move(f), std::move(r)};
}

Distribution PolicyGraph::finish(Var q_f, Var q_r, Var w) {
  Var logits = ad::scale_by(q_f, ad::pick(w, 0)) + ad::scale_by(q_r, ad::pick(w, 1));
  Distribution d;
  d.log_probs = ad::log_softmax(logits);
  d.probs = d.log_probs.value().col(0).array().exp().matrix();
  return d;
}

Distribution PolicyGraph::score_global(const EnrichedMemory& enriched, const NavState& state,
                                       const std::vector<SubNode>& candidates) {
  if (candidates.empty()) throw InvariantError("empty action space");
  const auto& c = config();
  const auto& ix = params_.index();
  auto [f, r] = candidate_features(candidates);
  std::vector<int> parents;
  for (const auto& s : candidates) parents.push_back(enriched.column.at(s.parent));
  Var kf = ad::matmul(param(ix.global_qf), state.h_p);  // 2 d_f
  Var kr = ad::matmul(param(ix.global_qr), state.h_a);  // 2 d_r
  Var q_f = ad::matmul_tn(tape_.constant(std::move(f)), ad::slice_rows(kf, 0, c.d_f)) +
            ad::matmul_tn(ad::select_cols(enriched.f_final(), parents), ad::slice_rows(kf, c.d_f, c.d_f));
  Var q_r = ad::matmul_tn(tape_.constant(std::move(r)), ad::slice_rows(kr, 0, c.d_r())) +
            ad::matmul_tn(ad::select_cols(enriched.r_final(), parents), ad::slice_rows(kr, c.d_r(), c.d_r()));
  return finish(q_f, q_r, combination(state, false));
}

Distribution PolicyGraph::score_frontiers(const EnrichedMemory& enriched, const NavState& state,
                                          const std::vector<NodeId>& frontiers) {
  if (frontiers.empty()) throw InvariantError("empty frontier set");
  const auto& ix = params_.index();
  std::vector<int> cols;
  for (NodeId w : frontiers) cols.push_back(enriched.column.at(w));
  Var c_f = ad::matmul_tn(ad::select_cols(enriched.f_final(), cols), ad::matmul(param(ix.frontier_cf), state.h_p));
  Var c_r = ad::matmul_tn(ad::select_cols(enriched.r_final(), cols), ad::matmul(param(ix.frontier_cr), state.h_a));
  return finish(c_f, c_r, combination(state, true));
}

Distribution PolicyGraph::score_subnodes(const NavState& state, const std::vector<SubNode>& candidates) {
  if (candidates.empty()) throw InvariantError("no sub-node candidates");
  const auto& ix = params_.index();
  auto [f, r] = candidate_features(candidates);
  Var q_f = ad::matmul_tn(tape_.constant(std::move(f)), ad::matmul(param(ix.subnode_qf), state.h_p));
  Var q_r = ad::matmul_tn(tape_.constant(std::move(r)), ad::matmul(param(ix.subnode_qr), state.h_a));
  return finish(q_f, q_r, combination(state, false));
}

}  // namespace ssmnav
