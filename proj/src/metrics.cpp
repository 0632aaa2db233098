#include "lpn/metrics.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lpn {

namespace {

/// Dense cluster ids 0..k-1 in order of first label value.
std::vector<int> compact_ids(std::span<const int> labels, std::vector<int>& label_of_id) {
  label_of_id.assign(labels.begin(), labels.end());
  std::sort(label_of_id.begin(), label_of_id.end());
  label_of_id.erase(std::unique(label_of_id.begin(), label_of_id.end()), label_of_id.end());
  std::vector<int> ids(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ids[i] = static_cast<int>(std::lower_bound(label_of_id.begin(), label_of_id.end(), labels[i]) - label_of_id.begin());
  }
  return ids;
}

void check_inputs(const Matrix& points, std::span<const int> labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw DimensionError("silhouette: " + std::to_string(labels.size()) + " labels for " + shape_string(points));
  }
  if (points.rows() < 3) throw DomainError("silhouette needs at least 3 points");
}

double point_score(double a, double b) {
  const double denom = std::max(a, b);
  return denom > 0.0 ? (b - a) / denom : 0.0;
}

}  // namespace

SilhouetteReport silhouette(const Matrix& points, std::span<const int> labels, int workers) {
  check_inputs(points, labels);
  std::vector<int> label_of_id;
  const std::vector<int> ids = compact_ids(labels, label_of_id);
  const int k = static_cast<int>(label_of_id.size());
  if (k < 2) throw DomainError("silhouette needs at least two distinct labels");

  const Eigen::Index n = points.rows();
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int id : ids) ++sizes[static_cast<std::size_t>(id)];

  SilhouetteReport report;
  report.scores.assign(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
    const int own = ids[i];
    if (sizes[static_cast<std::size_t>(own)] == 1) return;  // singleton
    const Eigen::VectorXd dist = (points.rowwise() - points.row(static_cast<Eigen::Index>(i))).rowwise().norm();
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(k);
    for (Eigen::Index j = 0; j < n; ++j) sums(ids[static_cast<std::size_t>(j)]) += dist(j);
    const double a = sums(own) / static_cast<double>(sizes[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]));
    }
    report.scores[i] = point_score(a, b);
  });

  std::vector<double> class_sum(static_cast<std::size_t>(k), 0.0);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = report.scores[static_cast<std::size_t>(i)];
    total += s;
    class_sum[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] += s;
  }
  for (int c = 0; c < k; ++c) {
    report.class_means[label_of_id[static_cast<std::size_t>(c)]] =
        class_sum[static_cast<std::size_t>(c)] / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
  }
  report.overall = total / static_cast<double>(n);
  return report;
}

double silhouette_oracle(const Matrix& points, std::span<const int> labels) {
  check_inputs(points, labels);
  const std::size_t n = labels.size();
  const std::size_t d = static_cast<std::size_t>(points.cols());
  std::vector<int> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw DomainError("silhouette needs at least two distinct labels");

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -
                            points(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
        s += diff * diff;
      }
      dist[i][j] = std::sqrt(s);
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double intra = 0.0;
    std::size_t intra_count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) {
        intra += dist[i][j];
        ++intra_count;
      }
    }
    if (intra_count == 0) continue;  // singleton cluster scores 0
    const double a = intra / static_cast<double>(intra_count);
    double b = std::numeric_limits<double>::infinity();
    for (int other : distinct) {
      if (other == labels[i]) continue;
      double s = 0.0;
      std::size_t count = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[j] == other) {
          s += dist[i][j];
          ++count;
        }
      }
      b = std::min(b, s / static_cast<double>(count));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

RepresentationSnapshot representation_snapshot(const Classifier& model, const Dataset& data) {
  auto out = model.forward(data.points);
  return {std::move(out.penultimate), std::move(out.normalized), data.labels};
}

std::string snapshot_csv(const RepresentationSnapshot& snap) {
  std::ostringstream os;
  for (Eigen::Index j = 0; j < snap.raw.cols(); ++j) os << 'x' << j << ',';
  os << "label,kind\n";
  auto rows = [&](const Matrix& m, const char* kind) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) os << format_double(m(i, j)) << ',';
      os << snap.labels[static_cast<std::size_t>(i)] << ',' << kind << '\n';
    }
  };
  rows(snap.raw, "raw");
  rows(snap.normalized, "norm");
  return os.str();
}

}  // namespace lpn
