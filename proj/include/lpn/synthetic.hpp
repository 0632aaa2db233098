#pragma once

// Two-class Gaussian-mixture data, its exact class densities and the
// Bayes-optimal reference classifier.

#include "lpn/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace lpn {

/// Mixes two integers into an independent 64-bit seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Diagonal-covariance Gaussian mixture component.
struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // diagonal of the covariance
  double weight = 1.0;
};

struct GmmSpec {
  std::vector<std::vector<GaussianComponent>> classes;
  std::vector<double> priors;

  int num_classes() const { return static_cast<int>(classes.size()); }
  Eigen::Index dim() const;
  /// Throws DomainError unless weights and priors are distributions and variances are positive.
  void validate() const;
};

struct Dataset {
  Matrix points;            // n x d
  std::vector<int> labels;  // n
  std::uint64_t seed = 0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  int num_classes() const;
};

/// Maps an n x d batch to n predicted class indices.
using BatchPredictor = std::function<std::vector<int>(const Matrix&)>;

/// Two classes, each an equal mixture of two Gaussians with covariance diag(1.2, 1.2):
/// class 0 at (-1.5, 1.5), (1.5, -1.5); class 1 at (-1.5, -1.5), (1.5, 1.5).
GmmSpec poc_spec();

/// Exactly `n_per_class` points per class, class-major order. Deterministic in `seed`.
Dataset sample(const GmmSpec& spec, int n_per_class, std::uint64_t seed);

/// Points drawn from the marginal (class by prior, then component). Returns points and their true classes.
std::pair<Matrix, std::vector<int>> sample_marginal(const GmmSpec& spec, Eigen::Index n, std::mt19937_64& rng);

/// log sum_k w_k N(point; mu_k, Sigma_k), via log-sum-exp.
double log_density(const GmmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& point, int cls);

/// argmax_c prior_c * density_c(point); ties go to the lowest class index.
int bayes_predict(const GmmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& point);

/// Batch version of bayes_predict.
BatchPredictor bayes_predictor(const GmmSpec& spec);

struct DeviationEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::int64_t disagreements = 0;
  std::int64_t samples = 0;
};

inline constexpr std::int64_t kDeviationChunk = 8192;

/// Monte Carlo probability that `classifier` and the Bayes rule disagree on a point from the
/// data distribution. Points come in fixed-size chunks, chunk c drawing from
/// derive_seed(seed, c), so the result does not depend on `workers`.
DeviationEstimate bayes_deviation(const GmmSpec& spec, const BatchPredictor& classifier, std::int64_t n_samples,
                                  std::uint64_t seed, int workers = 1);

/// Monte Carlo disagreement between two arbitrary classifiers on the same sample stream.
DeviationEstimate disagreement(const GmmSpec& spec, const BatchPredictor& a, const BatchPredictor& b,
                               std::int64_t n_samples, std::uint64_t seed, int workers = 1);

/// CSV with header `x0,...,x{d-1},label`; values in shortest round-trip decimal form.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace lpn
