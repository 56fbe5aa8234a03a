#pragma once

// Define-by-run reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every primitive applied to its Vars in execution order, so the
// node list is already topologically sorted. backward() walks it in reverse,
// accumulating adjoints, and adds parameter gradients into the owning
// ParameterSet. Every forward value and every adjoint is checked for NaN/Inf.

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "edt/tensor.hpp"

namespace edt {

/// Named, ordered collection of tensors with gradient slots.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
  };

  Matrix& add(const std::string& name, Matrix init, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Matrix& value(const std::string& name) { return entry(name).value; }
  const Matrix& value(const std::string& name) const { return entry(name).value; }
  Matrix& grad(const std::string& name) { return entry(name).grad; }
  const Matrix& grad(const std::string& name) const { return entry(name).grad; }

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index scalar_count() const;

  void zero_grad();

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is reset.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double item() const;

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

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf that receives a gradient readable via Var::grad().
  Var variable(Matrix value);
  /// Leaf bound to a ParameterSet entry; backward() adds into its grad slot.
  Var parameter(ParameterSet& params, const std::string& name);

  /// Seeds d(loss)/d(loss) = 1 and propagates. The loss must be 1x1.
  /// Returns the loss value.
  double backward(Var loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }

  // Primitive authoring interface.
  Var push(Matrix value, std::vector<int> inputs, Backward backward, const char* op);
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int input(int id, std::size_t k) const { return nodes_[id].inputs[k]; }
  /// Adds `delta` into the adjoint of node `id` (no-op for constants).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    Backward backward;
    Matrix* sink = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All operands must live on the same tape. Shapes must agree
// exactly, except add_bias which broadcasts a 1 x n row over the rows of x.
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var add_bias(Var x, Var bias);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// Elementwise product with a constant matrix.
Var mul_const(Var x, const Matrix& c);
Var sum(Var x);
Var mean(Var x);
Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var relu(Var x);
Var square(Var x);
Var transpose(Var x);
/// Row-wise softmax restricted to entries where allowed(i, j) is true. Every
/// row must allow at least one entry; disallowed entries get weight 0.
Var masked_softmax(Var scores, const Mask& allowed);
/// Row-wise softmax with a lower-triangular (causal) mask.
Var causal_softmax(Var scores);
/// Gathers rows of `table` by index (embedding lookup).
Var gather_rows(Var table, std::span<const int> ids);
/// Row-wise layer normalisation with learned gain/bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var x, Index start, Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

Mask causal_mask(Index n);

}  // namespace edt
