#pragma once

// Central finite-difference checks of every analytic gradient in the library.
// The numeric side only ever evaluates forward passes.

#include "lpn/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lpn {

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                      double floor = 1e-10);

/// Central differences of f at x with step h.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h = 1e-5);

struct GradCheckResult {
  std::string name;
  int checks = 0;
  double worst_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  int seeds = 100;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t master_seed = 20240601;
};

/// lp projection: gradients with respect to input, p and alpha for p in {1.5, 2, 3, 8} and the
/// learnable mode, on random vectors in R^2..R^16.
std::vector<GradCheckResult> check_lp_layer(const GradCheckOptions& opts = {});
/// matmul, add_bias, tanh, softmax cross-entropy, and a full classifier with learnable p and alpha.
std::vector<GradCheckResult> check_tape_ops(const GradCheckOptions& opts = {});

/// Both suites.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts = {});

}  // namespace lpn
