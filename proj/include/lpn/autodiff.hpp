#pragma once

// Minimal define-by-run reverse-mode differentiation over dense float64 matrices.
//
// Every value is a 2-D row-major matrix (vectors are 1xn or nx1, scalars 1x1).
// A Tape records operations in execution order, so the recording order is a
// topological order and backward() is a single reverse sweep.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lpn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

std::string shape_string(const Matrix& m);

/// A trainable tensor with its gradient and optimizer moment buffers.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix init);

  void zero_grad() { grad.setZero(); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }

  std::string name;
  Matrix value;
  Matrix grad;
  // Adam first/second moments; same shape as value.
  Matrix moment1;
  Matrix moment2;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adds gradient contributions to the inputs of one recorded operation.
  /// Receives the gradient of the operation's output.
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Matrix value);
  /// Differentiable input whose gradient persists (and accumulates) across backward calls.
  Var leaf(Matrix value);
  /// Reads a parameter; backward accumulates into `p.grad`.
  Var param(Parameter& p);

  /// Records an operation. Throws NumericError if `value` has a non-finite entry.
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward, const char* op_name);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient buffer of node `id` if it participates in differentiation.
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    if (requires_grad(v.id())) nodes_[v.id()].grad += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool persistent_grad = false;  // leaves keep their gradient between backward calls
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// Differentiable operations.

/// Matrix product. Throws DimensionError if inner dimensions differ.
Var matmul(const Var& a, const Var& b);
/// Adds a 1xn bias row to every row of x.
Var add_bias(const Var& x, const Var& bias);
Var tanh(const Var& x);
/// Sum of all entries, as a 1x1 value.
Var sum(const Var& x);
/// Mean over rows of -log softmax(logits)[label], stabilized by the row max.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Row-max-stabilized softmax of each row.
Matrix softmax_rows(const Matrix& logits);

}  // namespace lpn
