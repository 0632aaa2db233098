#include "lpn/autodiff.hpp"

#include "lpn/errors.hpp"

#include <cmath>
#include <sstream>

namespace lpn {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

Parameter::Parameter(std::string name_, Matrix init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      moment1(Matrix::Zero(value.rows(), value.cols())),
      moment2(Matrix::Zero(value.rows(), value.cols())) {}

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("non-finite value in constant input");
  nodes_.push_back(Node{std::move(value), Matrix(), false, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Matrix value) {
  if (!value.allFinite()) throw NumericError("non-finite value in leaf input");
  Matrix grad = Matrix::Zero(value.rows(), value.cols());
  nodes_.push_back(Node{std::move(value), std::move(grad), true, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (!p.value.allFinite()) throw NumericError("non-finite value in parameter '" + p.name + "'");
  Parameter* target = &p;
  nodes_.push_back(Node{p.value, Matrix(), true, false,
                        [target](Tape&, const Matrix& g) { target->grad += g; }});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward, const char* op_name) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  bool needs_grad = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractError(std::string(op_name) + ": input from a different tape");
    needs_grad = needs_grad || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, false,
                        needs_grad ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  if (nodes_[id].requires_grad) nodes_[id].grad += g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " + shape_string(lv));
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && !n.persistent_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad(0, 0) += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, n.grad);
  }
}

Var matmul(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av) + " x " + shape_string(bv));
  }
  const Var inputs[] = {a, b};
  return a.tape()->record(
      av * bv, inputs,
      [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a.id())) t.accumulate(a, g * b.value().transpose());
        if (t.requires_grad(b.id())) t.accumulate(b, a.value().transpose() * g);
      },
      "matmul");
}

Var add_bias(const Var& x, const Var& bias) {
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bv) + " does not match rows of " + shape_string(xv));
  }
  Matrix out = xv.rowwise() + bv.row(0);
  const Var inputs[] = {x, bias};
  return x.tape()->record(
      std::move(out), inputs,
      [x, bias](Tape& t, const Matrix& g) {
        t.accumulate(x, g);
        t.accumulate(bias, g.colwise().sum());
      },
      "add_bias");
}

Var tanh(const Var& x) {
  Matrix out = x.value().array().tanh().matrix();
  const Var inputs[] = {x};
  Tape* tape = x.tape();
  const std::size_t out_id = tape->size();
  return tape->record(
      std::move(out), inputs,
      [x, out_id](Tape& t, const Matrix& g) {
        const Matrix& y = t.value(out_id);
        t.accumulate(x, (g.array() * (1.0 - y.array().square())).matrix());
      },
      "tanh");
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Var inputs[] = {x};
  return x.tape()->record(
      std::move(out), inputs,
      [x](Tape& t, const Matrix& g) {
        t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
      },
      "sum");
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Matrix e = shifted.array().exp().matrix();
  return e.array().colwise() / e.rowwise().sum().array();
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  const Eigen::Index m = z.rows();
  const Eigen::Index k = z.cols();
  if (static_cast<Eigen::Index>(labels.size()) != m) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(z));
  }
  if (m == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }

  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    total += lse - z(i, labels[static_cast<std::size_t>(i)]);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(m);

  std::vector<int> y(labels.begin(), labels.end());
  const Var inputs[] = {logits};
  return logits.tape()->record(
      std::move(out), inputs,
      [logits, y = std::move(y)](Tape& t, const Matrix& g) {
        Matrix d = softmax_rows(logits.value());
        for (std::size_t i = 0; i < y.size(); ++i) d(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
        d *= g(0, 0) / static_cast<double>(y.size());
        t.accumulate(logits, d);
      },
      "softmax_cross_entropy");
}

}  // namespace lpn
