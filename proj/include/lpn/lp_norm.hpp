#pragma once

// Projection of representations onto the radius-alpha lp sphere,
//   xbar = alpha * x / max(||x||_p, eps),
// with exact reverse-mode rules for the input, the norm order p and the radius.
//
// The free functions are templates over Eigen expressions; all finite-p norms
// are evaluated on the max-rescaled vector u = |x| / max|x| so that neither
// large p nor large |x| overflows.

#include "lpn/autodiff.hpp"
#include "lpn/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lpn {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

template <typename Scalar>
Scalar sign(Scalar v) {
  return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
}

template <typename Scalar>
void check_order(Scalar p) {
  using std::isnan;
  if (isnan(p) || p < Scalar(1)) {
    throw DomainError("lp norm requires p >= 1, got " + std::to_string(static_cast<double>(p)));
  }
}

}  // namespace detail

/// ||x||_p for p >= 1 (p = +inf gives max|x_i|). Zero vector gives 0.
template <typename Derived>
typename Derived::Scalar lp_norm(const Eigen::MatrixBase<Derived>& x, typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  using std::isinf;
  using std::pow;
  detail::check_order(p);
  if (x.size() == 0) return Scalar(0);
  const Scalar m = x.cwiseAbs().maxCoeff();
  if (isinf(p) || m == Scalar(0)) return m;
  if (p == Scalar(1)) return x.cwiseAbs().sum();
  const Scalar s = (x.cwiseAbs().array() / m).pow(p).sum();
  return m * pow(s, Scalar(1) / p);
}

/// Gradient (or the chosen subgradient) of ||x||_p with respect to x.
///  finite p > 1 : sign(x_i) (|x_i| / ||x||_p)^(p-1)
///  p = 1        : sign(x_i), sign(0) = 0
///  p = inf      : sign at the max-magnitude coordinates, split equally between ties
/// The zero vector gets the zero subgradient.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> lp_norm_gradient(const Eigen::MatrixBase<Derived>& x,
                                                                           typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  using VectorS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using std::abs;
  using std::isinf;
  using std::pow;
  detail::check_order(p);
  const Eigen::Index n = x.size();
  VectorS g = VectorS::Zero(n);
  if (n == 0) return g;
  const Scalar m = x.cwiseAbs().maxCoeff();
  if (m == Scalar(0)) return g;

  if (isinf(p)) {
    Scalar ties(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (abs(x(i)) == m) ties += Scalar(1);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (abs(x(i)) == m) g(i) = detail::sign(x(i)) / ties;
    }
    return g;
  }
  if (p == Scalar(1)) {
    for (Eigen::Index i = 0; i < n; ++i) g(i) = detail::sign(x(i));
    return g;
  }
  // |x_i| / ||x||_p == u_i / s^(1/p) with u = |x| / m
  const Scalar s = (x.cwiseAbs().array() / m).pow(p).sum();
  const Scalar root = pow(s, Scalar(1) / p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar ratio = (abs(x(i)) / m) / root;
    g(i) = detail::sign(x(i)) * pow(ratio, p - Scalar(1));
  }
  return g;
}

/// d||x||_p / dp for finite p. Uses 0^p ln 0 = 0; zero vector gives 0.
template <typename Derived>
typename Derived::Scalar lp_norm_dp(const Eigen::MatrixBase<Derived>& x, typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::isinf;
  using std::log;
  using std::pow;
  detail::check_order(p);
  if (isinf(p)) throw DomainError("d||x||_p/dp is undefined at p = inf");
  if (x.size() == 0) return Scalar(0);
  const Scalar m = x.cwiseAbs().maxCoeff();
  if (m == Scalar(0)) return Scalar(0);
  Scalar s(0);
  Scalar s_log(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar u = abs(x(i)) / m;
    if (u == Scalar(0)) continue;
    const Scalar up = pow(u, p);
    s += up;
    s_log += up * log(u);
  }
  const Scalar norm = m * pow(s, Scalar(1) / p);
  return norm * (s_log / (p * s) - log(s) / (p * p));
}

/// alpha * x / max(||x||_p, eps). Exactly scale invariant above eps; the zero vector maps to 0.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> lp_normalize(const Eigen::MatrixBase<Derived>& x,
                                                                       typename Derived::Scalar p,
                                                                       typename Derived::Scalar alpha,
                                                                       typename Derived::Scalar eps = 1e-12) {
  using std::max;
  const auto denom = max(lp_norm(x, p), eps);
  return (alpha / denom) * x.reshaped();
}

/// Vector-Jacobian product of lp_normalize with respect to x:
///   alpha * (g / d - grad||x||_p * <x, g> / d^2),  d = ||x||_p,
/// or alpha * g / eps where the denominator is clamped.
template <typename DerivedX, typename DerivedG>
Eigen::Matrix<typename DerivedX::Scalar, Eigen::Dynamic, 1> lp_normalize_vjp_input(
    const Eigen::MatrixBase<DerivedX>& x, typename DerivedX::Scalar p, typename DerivedX::Scalar alpha,
    const Eigen::MatrixBase<DerivedG>& upstream, typename DerivedX::Scalar eps = 1e-12) {
  const auto d = lp_norm(x, p);
  if (!(d > eps)) return (alpha / eps) * upstream.reshaped();
  const auto xg = x.reshaped().dot(upstream.reshaped());
  return alpha * (upstream.reshaped() / d - lp_norm_gradient(x, p) * (xg / (d * d)));
}

/// Gradient of <upstream, lp_normalize(x, p, alpha)> with respect to p (not reparameterized).
template <typename DerivedX, typename DerivedG>
typename DerivedX::Scalar lp_normalize_vjp_p(const Eigen::MatrixBase<DerivedX>& x, typename DerivedX::Scalar p,
                                             typename DerivedX::Scalar alpha,
                                             const Eigen::MatrixBase<DerivedG>& upstream,
                                             typename DerivedX::Scalar eps = 1e-12) {
  const auto d = lp_norm(x, p);
  if (!(d > eps)) return typename DerivedX::Scalar(0);
  const auto xg = x.reshaped().dot(upstream.reshaped());
  return -alpha * xg * lp_norm_dp(x, p) / (d * d);
}

/// Gradient of <upstream, lp_normalize(x, p, alpha)> with respect to alpha.
template <typename DerivedX, typename DerivedG>
typename DerivedX::Scalar lp_normalize_vjp_alpha(const Eigen::MatrixBase<DerivedX>& x, typename DerivedX::Scalar p,
                                                 const Eigen::MatrixBase<DerivedG>& upstream,
                                                 typename DerivedX::Scalar eps = 1e-12) {
  using std::max;
  return x.reshaped().dot(upstream.reshaped()) / max(lp_norm(x, p), eps);
}

/// C_p = ||x||_2 / ||x||_p. Throws DomainError for the zero vector.
template <typename Derived>
typename Derived::Scalar cp_ratio(const Eigen::MatrixBase<Derived>& x, typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  const Scalar np = lp_norm(x, p);
  if (np == Scalar(0)) throw DomainError("cp_ratio: zero vector");
  return lp_norm(x, Scalar(2)) / np;
}

template <typename Scalar>
struct MagnitudeInterval {
  Scalar lo;
  Scalar hi;
  Scalar actual;  // ||xbar||_2
};

/// Interval containing ||xbar||_2 for the radius-alpha lp projection of x, plus the actual value.
template <typename Derived>
MagnitudeInterval<typename Derived::Scalar> magnitude_interval(const Eigen::MatrixBase<Derived>& x,
                                                               typename Derived::Scalar p,
                                                               typename Derived::Scalar alpha,
                                                               typename Derived::Scalar eps = 1e-12) {
  using std::max;
  using std::min;
  using Scalar = typename Derived::Scalar;
  const Scalar cp = cp_ratio(x, p);
  return {alpha * min(Scalar(1), cp), alpha * max(Scalar(1), cp), lp_normalize(x, p, alpha, eps).norm()};
}

template <typename Scalar>
struct LogitDecomposition {
  Scalar weight_norm;
  Scalar representation_norm;
  Scalar cos_theta;
  Scalar inner;  // weight_norm * representation_norm * cos_theta
};

/// Splits <w, xbar> into magnitudes and the cosine of the angle between them.
template <typename DerivedW, typename DerivedX>
LogitDecomposition<typename DerivedW::Scalar> logit_decomposition(const Eigen::MatrixBase<DerivedW>& w,
                                                                  const Eigen::MatrixBase<DerivedX>& xbar) {
  using Scalar = typename DerivedW::Scalar;
  if (w.size() != xbar.size()) throw DimensionError("logit_decomposition: vector lengths differ");
  const Scalar wn = w.norm();
  const Scalar xn = xbar.norm();
  if (wn == Scalar(0) || xn == Scalar(0)) throw DomainError("logit_decomposition: zero vector");
  const Scalar cos_theta = w.reshaped().dot(xbar.reshaped()) / (wn * xn);
  return {wn, xn, cos_theta, wn * xn * cos_theta};
}

/// Norm order of the projection.
class NormOrder {
 public:
  enum class Mode { One, Two, Infinity, General, Learnable };

  static NormOrder one() { return NormOrder(Mode::One, 1.0); }
  static NormOrder two() { return NormOrder(Mode::Two, 2.0); }
  static NormOrder infinity() { return NormOrder(Mode::Infinity, kInf); }
  /// Fixed finite p > 1; p == 1 or 2 map onto the dedicated modes.
  static NormOrder general(double p);
  /// Trainable p = 1 + softplus(rho), with rho initialised so that p == initial_p.
  static NormOrder learnable(double initial_p = 2.0);
  /// "1", "2", "inf", "learnable" or a number.
  static NormOrder parse(std::string_view text);

  Mode mode() const { return mode_; }
  bool is_learnable() const { return mode_ == Mode::Learnable; }
  /// Fixed p, or the initial p for the learnable mode.
  double value() const { return value_; }
  std::string to_string() const;

  friend bool operator==(const NormOrder&, const NormOrder&) = default;

 private:
  NormOrder(Mode mode, double value) : mode_(mode), value_(value) {}
  Mode mode_;
  double value_;
};

/// Radius of the projection.
class RadiusParam {
 public:
  enum class Mode { Fixed, Learnable };

  static RadiusParam fixed(double alpha);
  /// Trainable alpha = softplus(a) + 1e-6, with a initialised so that alpha == initial_alpha.
  static RadiusParam learnable(double initial_alpha = 1.0);
  /// "learnable" or a positive number.
  static RadiusParam parse(std::string_view text);

  Mode mode() const { return mode_; }
  bool is_learnable() const { return mode_ == Mode::Learnable; }
  double value() const { return value_; }
  std::string to_string() const;

  friend bool operator==(const RadiusParam&, const RadiusParam&) = default;

 private:
  RadiusParam(Mode mode, double value) : mode_(mode), value_(value) {}
  Mode mode_;
  double value_;
};

inline constexpr double kAlphaFloor = 1e-6;

/// Row-wise lp projection with optionally trainable p and alpha.
class LpNormLayer {
 public:
  explicit LpNormLayer(NormOrder order = NormOrder::two(), RadiusParam radius = RadiusParam::fixed(1.0),
                       double epsilon = 1e-12);

  const NormOrder& order() const { return order_; }
  const RadiusParam& radius() const { return radius_; }
  double epsilon() const { return epsilon_; }

  /// Decoded norm order (may be +inf).
  double p() const;
  /// Decoded radius.
  double alpha() const;

  bool learnable_p() const { return order_.is_learnable(); }
  bool learnable_alpha() const { return radius_.is_learnable(); }
  Parameter& p_raw();
  const Parameter& p_raw() const;
  Parameter& alpha_raw();
  const Parameter& alpha_raw() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Vector forward(const Eigen::Ref<const Vector>& x) const;
  /// Projects every row of x.
  Matrix forward_rows(const Matrix& x) const;

  Vector grad_wrt_input(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream) const;
  /// Gradient with respect to the trainable raw rho (learnable mode) or p itself (fixed finite p).
  double grad_wrt_p(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream) const;
  /// Gradient with respect to the raw radius parameter; empty when alpha is fixed.
  std::optional<double> grad_wrt_alpha(const Eigen::Ref<const Vector>& x,
                                       const Eigen::Ref<const Vector>& upstream) const;

 private:
  NormOrder order_;
  RadiusParam radius_;
  double epsilon_;
  Parameter p_raw_;
  Parameter alpha_raw_;
};

/// Records the row-wise projection of x on the tape. Gradients for trainable
/// p and alpha are accumulated into the layer's parameters.
Var lp_normalize(const Var& x, LpNormLayer& layer);

}  // namespace lpn
