#include "edt/tape.hpp"

#include <cmath>
#include <limits>

namespace edt {

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

Matrix& ParameterSet::add(const std::string& name, Matrix init, bool trainable) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  require_finite(init, "parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  Matrix grad = Matrix::Zero(init.rows(), init.cols());
  entries_.push_back(Entry{name, std::move(init), std::move(grad), trainable});
  return entries_.back().value;
}

ParameterSet::Entry& ParameterSet::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return entries_[it->second];
}

const ParameterSet::Entry& ParameterSet::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return entries_[it->second];
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.grad.setZero(e.value.rows(), e.value.cols());
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.trainable != y.trainable) return false;
    if (x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
    if (x.value != y.value) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Var / Tape
// ---------------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }
const Matrix& Var::grad() const { return tape_->nodes_[id_].grad; }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(v));
  return v(0, 0);
}

Var Tape::push(Matrix value, std::vector<int> inputs, Backward backward, const char* op) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr, "constant"); }

Var Tape::variable(Matrix value) {
  Var v = push(std::move(value), {}, nullptr, "variable");
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::parameter(ParameterSet& params, const std::string& name) {
  auto& e = params.entry(name);
  Var v = push(e.value, {}, nullptr, "parameter");
  Node& n = nodes_.back();
  n.requires_grad = e.trainable;
  if (e.trainable) {
    if (e.grad.rows() != e.value.rows() || e.grad.cols() != e.value.cols()) {
      e.grad.setZero(e.value.rows(), e.value.cols());
    }
    n.sink = &e.grad;
  }
  return v;
}

double Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (!all_finite(n.grad)) {
      throw NumericError(std::string("non-finite gradient during backward through ") + n.op);
    }
    if (n.backward) n.backward(*this, i);
    if (n.sink) *n.sink += n.grad;
  }
  return lv(0, 0);
}

void Tape::reset() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands are not on the same tape");
  }
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {a.id(), b.id()},
                [](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  int ia = t.input(self, 0), ib = t.input(self, 1);
                  if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                  if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                },
                "matmul");
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  return t.push(a.value() + b.value(), {a.id(), b.id()},
                [](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), t.grad(self));
                  t.accumulate(t.input(self, 1), t.grad(self));
                },
                "add");
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  return t.push(a.value() - b.value(), {a.id(), b.id()},
                [](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), t.grad(self));
                  t.accumulate(t.input(self, 1), -t.grad(self));
                },
                "sub");
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), {a.id(), b.id()},
                [](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  int ia = t.input(self, 0), ib = t.input(self, 1);
                  if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                },
                "mul");
}

Var add_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.value()) + " for input " +
                     shape_str(x.value()));
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return t.push(std::move(out), {x.id(), bias.id()},
                [](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  t.accumulate(t.input(self, 0), g);
                  if (t.requires_grad(t.input(self, 1))) {
                    t.accumulate(t.input(self, 1), g.colwise().sum());
                  }
                },
                "add_bias");
}

Var scale(Var x, double c) {
  Tape& t = *x.tape();
  return t.push(x.value() * c, {x.id()},
                [c](Tape& t, int self) { t.accumulate(t.input(self, 0), t.grad(self) * c); },
                "scale");
}

Var add_scalar(Var x, double c) {
  Tape& t = *x.tape();
  Matrix out = x.value().array() + c;
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) { t.accumulate(t.input(self, 0), t.grad(self)); },
                "add_scalar");
}

Var mul_const(Var x, const Matrix& c) {
  Tape& t = *x.tape();
  require_same_shape(x.value(), c, "mul_const");
  Matrix out = x.value().cwiseProduct(c);
  return t.push(std::move(out), {x.id()},
                [c](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), t.grad(self).cwiseProduct(c));
                },
                "mul_const");
}

Var sum(Var x) {
  Tape& t = *x.tape();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Index r = x.rows(), c = x.cols();
  return t.push(std::move(out), {x.id()},
                [r, c](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), Matrix::Constant(r, c, t.grad(self)(0, 0)));
                },
                "sum");
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var exp(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().array().exp();
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), t.grad(self).cwiseProduct(t.value(self)));
                },
                "exp");
}

Var log(Var x) {
  Tape& t = *x.tape();
  if ((x.value().array() <= 0.0).any()) throw NumericError("log: non-positive argument");
  Matrix out = x.value().array().log();
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  int i = t.input(self, 0);
                  t.accumulate(i, t.grad(self).cwiseQuotient(t.value(i)));
                },
                "log");
}

Var tanh(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().array().tanh();
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  const Matrix& y = t.value(self);
                  Matrix d = (1.0 - y.array().square()).matrix();
                  t.accumulate(t.input(self, 0), t.grad(self).cwiseProduct(d));
                },
                "tanh");
}

Var relu(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().cwiseMax(0.0);
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  int i = t.input(self, 0);
                  Matrix d = (t.value(i).array() > 0.0).cast<double>().matrix();
                  t.accumulate(i, t.grad(self).cwiseProduct(d));
                },
                "relu");
}

Var square(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().array().square();
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  int i = t.input(self, 0);
                  t.accumulate(i, 2.0 * t.grad(self).cwiseProduct(t.value(i)));
                },
                "square");
}

Var transpose(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().transpose();
  return t.push(std::move(out), {x.id()},
                [](Tape& t, int self) {
                  t.accumulate(t.input(self, 0), t.grad(self).transpose());
                },
                "transpose");
}

Mask causal_mask(Index n) {
  Mask m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m(i, j) = j <= i;
  return m;
}

Var masked_softmax(Var scores, const Mask& allowed) {
  Tape& t = *scores.tape();
  require_same_shape(scores.value(), allowed, "masked_softmax");
  const Matrix& s = scores.value();
  Matrix out = Matrix::Zero(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < s.cols(); ++j)
      if (allowed(i, j)) mx = std::max(mx, s(i, j));
    if (!std::isfinite(mx)) {
      throw NumericError("masked_softmax: row " + std::to_string(i) + " has no allowed entry");
    }
    double z = 0.0;
    for (Index j = 0; j < s.cols(); ++j) {
      if (allowed(i, j)) {
        out(i, j) = std::exp(s(i, j) - mx);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  return t.push(std::move(out), {scores.id()},
                [](Tape& t, int self) {
                  const Matrix& y = t.value(self);
                  const Matrix& g = t.grad(self);
                  Vector dot = g.cwiseProduct(y).rowwise().sum();
                  Matrix d = y.cwiseProduct(g - dot.replicate(1, g.cols()));
                  t.accumulate(t.input(self, 0), d);
                },
                "masked_softmax");
}

Var causal_softmax(Var scores) {
  if (scores.rows() != scores.cols()) {
    throw ShapeError("causal_softmax: scores must be square, got " + shape_str(scores.value()));
  }
  return masked_softmax(scores, causal_mask(scores.rows()));
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[k]) + " outside table " +
                       shape_str(tv));
    }
    out.row(static_cast<Index>(k)) = tv.row(ids[k]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  const Index rows = tv.rows();
  return t.push(std::move(out), {table.id()},
                [idx = std::move(idx), rows](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  Matrix d = Matrix::Zero(rows, g.cols());
                  for (std::size_t k = 0; k < idx.size(); ++k) {
                    d.row(idx[k]) += g.row(static_cast<Index>(k));
                  }
                  t.accumulate(t.input(self, 0), d);
                },
                "gather_rows");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm");
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Vector mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Vector inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return t.push(
      std::move(out), {x.id(), gain.id(), bias.id()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        int ix = t.input(self, 0), ig = t.input(self, 1), ib = t.input(self, 2);
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
          Vector m1 = dxhat.rowwise().mean();
          Vector m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix dx = dxhat;
          dx.colwise() -= m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          dx = dx.array().colwise() * inv_std.array();
          t.accumulate(ix, dx);
        }
      },
      "layer_norm");
}

Var slice_cols(Var x, Index start, Index count) {
  Tape& t = *x.tape();
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_str(x.value()));
  }
  Matrix out = x.value().middleCols(start, count);
  const Index cols = x.cols();
  return t.push(std::move(out), {x.id()},
                [start, count, cols](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  Matrix d = Matrix::Zero(g.rows(), cols);
                  d.middleCols(start, count) = g;
                  t.accumulate(t.input(self, 0), d);
                },
                "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  const Index rows = parts[0].rows();
  Index cols = 0;
  std::vector<int> inputs;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_cols: operands are not on the same tape");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    inputs.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), std::move(inputs),
                [widths = std::move(widths)](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  Index c = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    t.accumulate(t.input(self, k), g.middleCols(c, widths[k]));
                    c += widths[k];
                  }
                },
                "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts[0].tape();
  const Index cols = parts[0].cols();
  Index rows = 0;
  std::vector<int> inputs;
  std::vector<Index> heights;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_rows: operands are not on the same tape");
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    inputs.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(out), std::move(inputs),
                [heights = std::move(heights)](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  Index r = 0;
                  for (std::size_t k = 0; k < heights.size(); ++k) {
                    t.accumulate(t.input(self, k), g.middleRows(r, heights[k]));
                    r += heights[k];
                  }
                },
                "concat_rows");
}

}  // namespace edt
