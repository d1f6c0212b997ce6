#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Parameters live in a
// ParamSet outside the tape; after backward() their gradients are added into
// a ParamSet of identical layout. Column vectors are n x 1 matrices.

#include "ssmnav/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ssmnav::ad {

/// Named dense tensors in a fixed order.
class ParamSet {
 public:
  std::size_t add(std::string name, Mat value);
  std::size_t index(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat& operator[](std::size_t i) { return values_[i]; }
  const Mat& operator[](std::size_t i) const { return values_[i]; }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void set_zero();
  void add_scaled(const ParamSet& other, double scale);
  double squared_norm() const;
  std::size_t scalar_count() const;
  bool all_finite() const;
  bool same_layout(const ParamSet& other) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  /// With `record` false the tape only evaluates; backward() is unavailable.
  explicit Tape(const ParamSet* params = nullptr, bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf bound to params[index]; one leaf per parameter per tape.
  Var param(std::size_t index);

  void backward(Var root);
  /// grads[i] += scale * d(root)/d(params[i]).
  void accumulate(ParamSet& grads, double scale = 1.0) const;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  const ParamSet* params() const { return params_; }

  // Building blocks for operations.
  const Mat& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  void add_grad(int id, const Mat& g);
  template <typename Expr>
  void add_grad_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  Var push(Mat value, bool needs_grad, Backward backward);

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
    int param = -1;
  };

  const ParamSet* params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<int> param_leaf_;
};

Var matmul(Var a, Var b);
/// aᵀ b
Var matmul_tn(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Adds column vector `b` to every column of `m`.
Var add_bias(Var m, Var b);
Var scale(Var a, double s);
/// a * s for a 1x1 `s`.
Var scale_by(Var a, Var s);
Var sigmoid(Var a);
Var tanh(Var a);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var select_cols(Var m, const std::vector<int>& columns);
Var softmax(Var v);
Var log_softmax(Var v);
/// Element i of a column vector, as 1x1.
Var pick(Var v, Eigen::Index i);
Var sum(Var a);
Var add_n(const std::vector<Var>& parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace ssmnav::ad
