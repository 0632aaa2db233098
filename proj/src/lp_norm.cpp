#include "lpn/lp_norm.hpp"

#include <cassert>
#include <charconv>
#include <sstream>

namespace lpn {

namespace {

std::optional<double> parse_number(std::string_view text) {
  double v = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

NormOrder NormOrder::general(double p) {
  if (!std::isfinite(p) || p < 1.0) {
    throw DomainError("norm order must be finite and >= 1, got " + format_number(p));
  }
  if (p == 1.0) return one();
  if (p == 2.0) return two();
  return NormOrder(Mode::General, p);
}

NormOrder NormOrder::learnable(double initial_p) {
  if (!std::isfinite(initial_p) || initial_p <= 1.0) {
    throw DomainError("learnable norm order must start at a finite p > 1, got " + format_number(initial_p));
  }
  return NormOrder(Mode::Learnable, initial_p);
}

NormOrder NormOrder::parse(std::string_view text) {
  if (text == "inf" || text == "infinity") return infinity();
  if (text == "learnable") return learnable();
  if (auto v = parse_number(text)) return general(*v);
  throw DomainError("unrecognised norm order '" + std::string(text) + "' (expected 1, 2, inf, learnable or p > 1)");
}

std::string NormOrder::to_string() const {
  switch (mode_) {
    case Mode::One:
      return "1";
    case Mode::Two:
      return "2";
    case Mode::Infinity:
      return "inf";
    case Mode::Learnable:
      return "learnable";
    case Mode::General:
      break;
  }
  return format_number(value_);
}

RadiusParam RadiusParam::fixed(double alpha) {
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw DomainError("radius must be finite and positive, got " + format_number(alpha));
  }
  return RadiusParam(Mode::Fixed, alpha);
}

RadiusParam RadiusParam::learnable(double initial_alpha) {
  if (!std::isfinite(initial_alpha) || initial_alpha <= kAlphaFloor) {
    throw DomainError("learnable radius must start above 1e-6, got " + format_number(initial_alpha));
  }
  return RadiusParam(Mode::Learnable, initial_alpha);
}

RadiusParam RadiusParam::parse(std::string_view text) {
  if (text == "learnable") return learnable();
  if (auto v = parse_number(text)) return fixed(*v);
  throw DomainError("unrecognised radius '" + std::string(text) + "' (expected learnable or alpha > 0)");
}

std::string RadiusParam::to_string() const {
  return mode_ == Mode::Learnable ? std::string("learnable") : format_number(value_);
}

LpNormLayer::LpNormLayer(NormOrder order, RadiusParam radius, double epsilon)
    : order_(order), radius_(radius), epsilon_(epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("lp layer epsilon must be positive");
  if (order_.is_learnable()) {
    p_raw_ = Parameter("norm.p_raw", scalar_matrix(softplus_inverse(order_.value() - 1.0)));
  }
  if (radius_.is_learnable()) {
    alpha_raw_ = Parameter("norm.alpha_raw", scalar_matrix(softplus_inverse(radius_.value() - kAlphaFloor)));
  }
}

double LpNormLayer::p() const {
  if (order_.is_learnable()) return 1.0 + softplus(p_raw_.value(0, 0));
  return order_.value();
}

double LpNormLayer::alpha() const {
  if (radius_.is_learnable()) return softplus(alpha_raw_.value(0, 0)) + kAlphaFloor;
  return radius_.value();
}

Parameter& LpNormLayer::p_raw() {
  if (!learnable_p()) throw ContractError("norm order is not learnable");
  return p_raw_;
}
const Parameter& LpNormLayer::p_raw() const {
  if (!learnable_p()) throw ContractError("norm order is not learnable");
  return p_raw_;
}
Parameter& LpNormLayer::alpha_raw() {
  if (!learnable_alpha()) throw ContractError("radius is not learnable");
  return alpha_raw_;
}
const Parameter& LpNormLayer::alpha_raw() const {
  if (!learnable_alpha()) throw ContractError("radius is not learnable");
  return alpha_raw_;
}

std::vector<Parameter*> LpNormLayer::parameters() {
  std::vector<Parameter*> out;
  if (learnable_p()) out.push_back(&p_raw_);
  if (learnable_alpha()) out.push_back(&alpha_raw_);
  return out;
}

std::vector<const Parameter*> LpNormLayer::parameters() const {
  std::vector<const Parameter*> out;
  if (learnable_p()) out.push_back(&p_raw_);
  if (learnable_alpha()) out.push_back(&alpha_raw_);
  return out;
}

Vector LpNormLayer::forward(const Eigen::Ref<const Vector>& x) const {
  const double p_ = p();
  const double a = alpha();
  Vector out = lp_normalize(x, p_, a, epsilon_);
#ifndef NDEBUG
  // ||xbar||_2 == alpha * C_p whenever the denominator is not clamped.
  if (const double np = lp_norm(x, p_); np > epsilon_) {
    const double expected = a * x.norm() / np;
    assert(std::abs(out.norm() - expected) <= 1e-9 * expected);
  }
#endif
  return out;
}

Matrix LpNormLayer::forward_rows(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = forward(x.row(i).transpose()).transpose();
  }
  return out;
}

Vector LpNormLayer::grad_wrt_input(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream) const {
  return lp_normalize_vjp_input(x, p(), alpha(), upstream, epsilon_);
}

double LpNormLayer::grad_wrt_p(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream) const {
  const double g = lp_normalize_vjp_p(x, p(), alpha(), upstream, epsilon_);
  return learnable_p() ? g * sigmoid(p_raw_.value(0, 0)) : g;
}

std::optional<double> LpNormLayer::grad_wrt_alpha(const Eigen::Ref<const Vector>& x,
                                                  const Eigen::Ref<const Vector>& upstream) const {
  if (!learnable_alpha()) return std::nullopt;
  return lp_normalize_vjp_alpha(x, p(), upstream, epsilon_) * sigmoid(alpha_raw_.value(0, 0));
}

Var lp_normalize(const Var& x, LpNormLayer& layer) {
  Tape& tape = *x.tape();
  std::vector<Var> inputs{x};
  std::optional<Var> p_var;
  std::optional<Var> a_var;
  if (layer.learnable_p()) {
    p_var = tape.param(layer.p_raw());
    inputs.push_back(*p_var);
  }
  if (layer.learnable_alpha()) {
    a_var = tape.param(layer.alpha_raw());
    inputs.push_back(*a_var);
  }

  const double p = layer.p();
  const double alpha = layer.alpha();
  const double eps = layer.epsilon();
  const double dp_draw = layer.learnable_p() ? sigmoid(layer.p_raw().value(0, 0)) : 0.0;
  const double da_draw = layer.learnable_alpha() ? sigmoid(layer.alpha_raw().value(0, 0)) : 0.0;

  return tape.record(
      layer.forward_rows(x.value()), inputs,
      [x, p_var, a_var, p, alpha, eps, dp_draw, da_draw](Tape& t, const Matrix& g) {
        const Matrix& xv = x.value();
        Matrix gx(xv.rows(), xv.cols());
        double gp = 0.0;
        double ga = 0.0;
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
          const Vector row = xv.row(i).transpose();
          const Vector up = g.row(i).transpose();
          gx.row(i) = lp_normalize_vjp_input(row, p, alpha, up, eps).transpose();
          if (p_var) gp += lp_normalize_vjp_p(row, p, alpha, up, eps);
          if (a_var) ga += lp_normalize_vjp_alpha(row, p, up, eps);
        }
        t.accumulate(x, gx);
        if (p_var) t.accumulate(*p_var, Matrix::Constant(1, 1, gp * dp_draw));
        if (a_var) t.accumulate(*a_var, Matrix::Constant(1, 1, ga * da_draw));
      },
      "lp_normalize");
}

}  // namespace lpn
