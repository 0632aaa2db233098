#pragma once

#include "lpn/autodiff.hpp"
#include "lpn/model.hpp"
#include "lpn/synthetic.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace lpn {

struct SilhouetteReport {
  std::vector<double> scores;          // per point, in [-1, 1]
  std::map<int, double> class_means;   // keyed by label
  double overall = 0.0;                // mean of `scores`
};

/// Euclidean silhouette. a(i) excludes the point itself; singleton clusters score 0.
/// Distances are accumulated row by row per cluster, so memory stays O(n).
/// Throws DomainError for fewer than 3 points or fewer than 2 distinct labels.
SilhouetteReport silhouette(const Matrix& points, std::span<const int> labels, int workers = 1);

/// Reference implementation: full n x n distance table and a naive double loop.
double silhouette_oracle(const Matrix& points, std::span<const int> labels);

struct RepresentationSnapshot {
  Matrix raw;
  Matrix normalized;
  std::vector<int> labels;
};

RepresentationSnapshot representation_snapshot(const Classifier& model, const Dataset& data);

/// CSV `x0..x{d-1},label,kind` with kind raw or norm; raw rows first.
std::string snapshot_csv(const RepresentationSnapshot& snap);

}  // namespace lpn
