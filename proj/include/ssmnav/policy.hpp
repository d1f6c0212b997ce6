#pragma once

#include "ssmnav/autodiff.hpp"
#include "ssmnav/observation.hpp"
#include "ssmnav/scene_memory.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ssmnav {

struct PolicyConfig {
  int vocab_tokens = 16;  // action words + landmark words
  int d_x = 64;
  int d_f = 32;
  int tiles = 8;  // orientation tiling, d_r = 4 * tiles
  int d_h = 64;
  int reasoning_steps = 2;
  /// Off: the raw state h stands in for both grounded states.
  bool fine_grained_grounding = true;
  /// Frontier scores reuse the sub-node combination weights.
  bool share_combination = true;

  int d_r() const { return 4 * tiles; }
  void validate() const;
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

nlohmann::json policy_config_to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

/// Every trainable tensor of the navigator.
class PolicyParams {
 public:
  PolicyParams() = default;
  static PolicyParams zeros(const PolicyConfig& config);
  static PolicyParams random(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  /// Ablation switches that do not change tensor shapes.
  void set_reasoning_steps(int s) { config_.reasoning_steps = s; }
  void set_fine_grained_grounding(bool on) { config_.fine_grained_grounding = on; }

  ad::ParamSet& tensors() { return tensors_; }
  const ad::ParamSet& tensors() const { return tensors_; }

  struct Index {
    std::size_t embed, enc_wi, enc_wh, enc_b;
    std::size_t state_wi, state_wh, state_b, state_att_x, state_att_o;
    std::size_t ground_xp, ground_xa, fuse_hp, fuse_ha;
    std::size_t assemble_f, assemble_r;
    std::size_t uf_wi, uf_wh, uf_b, ur_wi, ur_wh, ur_b;
    std::size_t global_qf, global_qr, combine_w, combine_wc;
    std::size_t frontier_cf, frontier_cr, subnode_qf, subnode_qr;
  };
  const Index& index() const { return index_; }

  nlohmann::json to_json() const;
  static PolicyParams from_json(const nlohmann::json& j);

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.config_ == b.config_ && a.tensors_ == b.tensors_;
  }

 private:
  void build(const PolicyConfig& config);

  PolicyConfig config_;
  ad::ParamSet tensors_;
  Index index_{};
};

struct Attention {
  ad::Var weights;  // n x 1
  ad::Var pooled;   // d x 1
};

/// Softmax attention of columns of `values` under bilinear scores valueᵀ·W·key.
Attention attend(ad::Var values, ad::Var key, ad::Var w);

struct Grounding {
  ad::Var x_p, x_a, alpha_p, alpha_a;
};

struct NavState {
  ad::Var h, h_p, h_a;
};

/// Per-node assembled features for every reasoning level 0..S.
struct EnrichedMemory {
  std::vector<NodeId> order;  // column order
  std::map<NodeId, int> column;
  std::vector<ad::Var> f_hat;  // each d_f x n
  std::vector<ad::Var> r_hat;  // each d_r x n

  ad::Var f_final() const { return f_hat.back(); }
  ad::Var r_final() const { return r_hat.back(); }
};

struct Distribution {
  ad::Var log_probs;  // n x 1
  Vec probs;
};

/// Scoring candidate: a sub-node or a synthetic STOP at `parent`.
SubNode make_stop(const MemoryNode& node);

/// Forward computations of the policy, recorded on one tape.
class PolicyGraph {
 public:
  PolicyGraph(const PolicyParams& params, ad::Tape& tape);

  ad::Tape& tape() { return tape_; }
  const PolicyConfig& config() const { return params_.config(); }
  ad::Var param(std::size_t i) { return tape_.param(i); }

  /// Instruction embedding X (d_x x L), one GRU hidden state per token.
  ad::Var encode(const std::vector<int>& tokens);

  ad::Var zero_state();
  /// Recurrent state update from the attended instruction and the attended
  /// navigable views of `obs`.
  ad::Var update_state(ad::Var h, ad::Var x, const Observation& obs);

  Grounding ground_text(ad::Var x, ad::Var h);
  std::pair<ad::Var, ad::Var> fuse_states(ad::Var h, ad::Var x_p, ad::Var x_a);
  /// h, h_p, h_a for the current round (h_p = h_a = h without grounding).
  NavState ground(ad::Var h, ad::Var x);

  EnrichedMemory assemble(const SceneMemory& mem, const NavState& state);
  void propagate(EnrichedMemory& enriched, const SceneMemory& mem, int steps);

  ad::Var combination(const NavState& state, bool frontier_head);

  /// Candidates are sub-nodes (or STOPs) of any memory node; parents index
  /// into `enriched`.
  Distribution score_global(const EnrichedMemory& enriched, const NavState& state,
                            const std::vector<SubNode>& candidates);
  Distribution score_frontiers(const EnrichedMemory& enriched, const NavState& state,
                               const std::vector<NodeId>& frontiers);
  Distribution score_subnodes(const NavState& state, const std::vector<SubNode>& candidates);

  ad::Var gru(std::size_t wi, std::size_t wh, std::size_t b, ad::Var x, ad::Var h);

 private:
  std::pair<Mat, Mat> candidate_features(const std::vector<SubNode>& candidates) const;
  Distribution finish(ad::Var q_f, ad::Var q_r, ad::Var w);

  const PolicyParams& params_;
  ad::Tape& tape_;
};

}  // namespace ssmnav
