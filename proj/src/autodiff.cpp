#include "ssmnav/autodiff.hpp"

#include <algorithm>

namespace ssmnav::ad {

std::size_t ParamSet::add(std::string name, Mat value) {
  if (has(name)) throw InvariantError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamSet::index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InvariantError("unknown parameter " + name);
  return std::size_t(it - names_.begin());
}

bool ParamSet::has(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Mat::Zero(values_[i].rows(), values_[i].cols()));
  return out;
}

void ParamSet::set_zero() {
  for (auto& v : values_) v.setZero();
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_layout(other)) throw InvariantError("parameter layouts differ");
  for (std::size_t i = 0; i < size(); ++i) values_[i] += scale * other.values_[i];
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& v : values_) s += v.squaredNorm();
  return s;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += std::size_t(v.size());
  return n;
}

bool ParamSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Mat& m) { return m.allFinite(); });
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) return false;
  }
  return true;
}

const Mat& Var::value() const { return tape_->value(id_); }

Tape::Tape(const ParamSet* params, bool record)
    : params_(params), record_(record), param_leaf_(params ? params->size() : 0, -1) {
  nodes_.reserve(1024);
}

Var Tape::push(Mat value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::param(std::size_t index) {
  if (!params_ || index >= params_->size()) throw InvariantError("parameter index out of range");
  if (param_leaf_[index] >= 0) return Var(this, param_leaf_[index]);
  Node n;
  n.value = (*params_)[index];
  n.needs_grad = record_;
  n.param = int(index);
  nodes_.push_back(std::move(n));
  param_leaf_[index] = int(nodes_.size()) - 1;
  return Var(this, param_leaf_[index]);
}

void Tape::add_grad(int id, const Mat& g) { add_grad_expr(id, g); }

void Tape::backward(Var root) {
  if (!record_) throw InvariantError("backward on a non-recording tape");
  if (root.tape() != this || root.rows() != 1 || root.cols() != 1) {
    throw InvariantError("backward needs a scalar on this tape");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id()].needs_grad) return;
  nodes_[root.id()].grad = Mat::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

void Tape::accumulate(ParamSet& grads, double scale) const {
  for (std::size_t p = 0; p < param_leaf_.size(); ++p) {
    const int id = param_leaf_[p];
    if (id < 0 || nodes_[id].grad.size() == 0) continue;
    grads[p] += scale * nodes_[id].grad;
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw InvariantError("operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw InvariantError("operands live on different tapes");
  return tape_of(a);
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvariantError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw InvariantError("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.add_grad_expr(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.add_grad_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.rows() != b.rows()) throw InvariantError("matmul_tn: row counts differ");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().transpose() * b.value(), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, int self) {
                  const Mat& g = tp.grad(self);
                  if (tp.needs_grad(ia)) tp.add_grad_expr(ia, tp.value(ib) * g.transpose());
                  if (tp.needs_grad(ib)) tp.add_grad_expr(ib, tp.value(ia) * g);
                });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int self) {
    tp.add_grad(ia, tp.grad(self));
    tp.add_grad(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int self) {
    tp.add_grad(ia, tp.grad(self));
    if (tp.needs_grad(ib)) tp.add_grad_expr(ib, -tp.grad(self));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, int self) {
                  const Mat& g = tp.grad(self);
                  if (tp.needs_grad(ia)) tp.add_grad_expr(ia, g.cwiseProduct(tp.value(ib)));
                  if (tp.needs_grad(ib)) tp.add_grad_expr(ib, g.cwiseProduct(tp.value(ia)));
                });
}

Var add_bias(Var m, Var b) {
  Tape& t = tape_of(m, b);
  if (b.cols() != 1 || b.rows() != m.rows()) throw InvariantError("add_bias: bias shape mismatch");
  const int im = m.id(), ib = b.id();
  Mat out = m.value().colwise() + b.value().col(0);
  return t.push(std::move(out), t.needs_grad(im) || t.needs_grad(ib), [im, ib](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    tp.add_grad(im, g);
    if (tp.needs_grad(ib)) tp.add_grad_expr(ib, g.rowwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, t.needs_grad(ia),
                [ia, s](Tape& tp, int self) { tp.add_grad_expr(ia, tp.grad(self) * s); });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  if (s.rows() != 1 || s.cols() != 1) throw InvariantError("scale_by: scale must be 1x1");
  const int ia = a.id(), is = s.id();
  return t.push(a.value() * s.scalar(), t.needs_grad(ia) || t.needs_grad(is), [ia, is](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.add_grad_expr(ia, g * tp.value(is)(0, 0));
    if (tp.needs_grad(is)) tp.add_grad(is, Mat::Constant(1, 1, g.cwiseProduct(tp.value(ia)).sum()));
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Mat y = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return t.push(std::move(y), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    tp.add_grad_expr(ia, tp.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Mat y = a.value().array().tanh().matrix();
  return t.push(std::move(y), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    tp.add_grad_expr(ia, tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = tape_of(a);
  if (start < 0 || n < 0 || start + n > a.rows()) throw InvariantError("slice_rows out of range");
  const int ia = a.id();
  return t.push(a.value().middleRows(start, n), t.needs_grad(ia), [ia, start, n](Tape& tp, int self) {
    Mat g = Mat::Zero(tp.value(ia).rows(), tp.value(ia).cols());
    g.middleRows(start, n) = tp.grad(self);
    tp.add_grad(ia, g);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvariantError("concat_rows of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = 0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.tape() != &t || p.cols() != parts.front().cols()) throw InvariantError("concat_rows: mismatch");
    rows += p.rows();
    needs = needs || t.needs_grad(p.id());
    ids.push_back(p.id());
  }
  Mat out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.push(std::move(out), needs, [ids](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index r = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.add_grad_expr(id, g.middleRows(at, r));
      at += r;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvariantError("concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index cols = 0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.tape() != &t || p.rows() != parts.front().rows()) throw InvariantError("concat_cols: mismatch");
    cols += p.cols();
    needs = needs || t.needs_grad(p.id());
    ids.push_back(p.id());
  }
  Mat out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), needs, [ids](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index c = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.add_grad_expr(id, g.middleCols(at, c));
      at += c;
    }
  });
}

Var select_cols(Var m, const std::vector<int>& columns) {
  Tape& t = tape_of(m);
  const int im = m.id();
  Mat out(m.rows(), Eigen::Index(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] < 0 || columns[j] >= m.cols()) throw InvariantError("select_cols out of range");
    out.col(Eigen::Index(j)) = m.value().col(columns[j]);
  }
  return t.push(std::move(out), t.needs_grad(im), [im, columns](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat acc = Mat::Zero(tp.value(im).rows(), tp.value(im).cols());
    for (std::size_t j = 0; j < columns.size(); ++j) acc.col(columns[j]) += g.col(Eigen::Index(j));
    tp.add_grad(im, acc);
  });
}

Var softmax(Var v) {
  Tape& t = tape_of(v);
  if (v.cols() != 1 || v.rows() == 0) throw InvariantError("softmax needs a non-empty column vector");
  const int iv = v.id();
  Mat y = (v.value().array() - v.value().maxCoeff()).exp().matrix();
  y /= y.sum();
  return t.push(std::move(y), t.needs_grad(iv), [iv](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    const double inner = y.cwiseProduct(g).sum();
    tp.add_grad_expr(iv, y.cwiseProduct((g.array() - inner).matrix()));
  });
}

Var log_softmax(Var v) {
  Tape& t = tape_of(v);
  if (v.cols() != 1 || v.rows() == 0) throw InvariantError("log_softmax needs a non-empty column vector");
  const int iv = v.id();
  const double m = v.value().maxCoeff();
  const double lse = m + std::log((v.value().array() - m).exp().sum());
  Mat y = (v.value().array() - lse).matrix();
  return t.push(std::move(y), t.needs_grad(iv), [iv](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat p = tp.value(self).array().exp().matrix();
    tp.add_grad_expr(iv, g - p * g.sum());
  });
}

Var pick(Var v, Eigen::Index i) {
  Tape& t = tape_of(v);
  if (v.cols() != 1 || i < 0 || i >= v.rows()) throw InvariantError("pick out of range");
  const int iv = v.id();
  return t.push(Mat::Constant(1, 1, v.value()(i, 0)), t.needs_grad(iv), [iv, i](Tape& tp, int self) {
    Mat g = Mat::Zero(tp.value(iv).rows(), 1);
    g(i, 0) = tp.grad(self)(0, 0);
    tp.add_grad(iv, g);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(Mat::Constant(1, 1, a.value().sum()), t.needs_grad(ia), [ia](Tape& tp, int self) {
    tp.add_grad(ia, Mat::Constant(tp.value(ia).rows(), tp.value(ia).cols(), tp.grad(self)(0, 0)));
  });
}

Var add_n(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvariantError("add_n of nothing");
  Tape& t = tape_of(parts.front());
  Mat out = parts.front().value();
  bool needs = t.needs_grad(parts.front().id());
  std::vector<int> ids{parts.front().id()};
  for (std::size_t k = 1; k < parts.size(); ++k) {
    check_same_shape(parts.front(), parts[k], "add_n");
    out += parts[k].value();
    needs = needs || t.needs_grad(parts[k].id());
    ids.push_back(parts[k].id());
  }
  return t.push(std::move(out), needs, [ids](Tape& tp, int self) {
    for (int id : ids) tp.add_grad(id, tp.grad(self));
  });
}

}  // namespace ssmnav::ad
