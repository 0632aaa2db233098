#include "lpn/synthetic.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace lpn {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Eigen::Index GmmSpec::dim() const {
  if (classes.empty() || classes.front().empty()) return 0;
  return classes.front().front().mean.size();
}

void GmmSpec::validate() const {
  if (classes.size() < 2) throw DomainError("mixture spec needs at least two classes");
  if (priors.size() != classes.size()) throw DomainError("one prior per class required");
  const Eigen::Index d = dim();
  if (d == 0) throw DomainError("mixture components must have a positive dimension");
  double prior_total = 0.0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (!(priors[c] >= 0.0)) throw DomainError("class priors must be nonnegative");
    prior_total += priors[c];
    if (classes[c].empty()) throw DomainError("class " + std::to_string(c) + " has no components");
    double weight_total = 0.0;
    for (const auto& comp : classes[c]) {
      if (comp.mean.size() != d || comp.variance.size() != d) {
        throw DomainError("mixture components have inconsistent dimensions");
      }
      if ((comp.variance.array() <= 0.0).any()) throw DomainError("covariance entries must be positive");
      if (!(comp.weight >= 0.0)) throw DomainError("component weights must be nonnegative");
      weight_total += comp.weight;
    }
    if (std::abs(weight_total - 1.0) > 1e-12) {
      throw DomainError("component weights of class " + std::to_string(c) + " do not sum to 1");
    }
  }
  if (std::abs(prior_total - 1.0) > 1e-12) throw DomainError("class priors do not sum to 1");
}

int Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

GmmSpec poc_spec() {
  const Eigen::Vector2d var(1.2, 1.2);
  auto comp = [&](double x, double y) { return GaussianComponent{Eigen::Vector2d(x, y), var, 0.5}; };
  GmmSpec spec;
  spec.classes = {{comp(-1.5, 1.5), comp(1.5, -1.5)}, {comp(-1.5, -1.5), comp(1.5, 1.5)}};
  spec.priors = {0.5, 0.5};
  return spec;
}

namespace {

std::size_t pick(const std::vector<double>& weights, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  return weights.size() - 1;
}

Eigen::VectorXd draw(const GaussianComponent& comp, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(comp.mean.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = comp.mean(j) + std::sqrt(comp.variance(j)) * normal(rng);
  return x;
}

std::vector<double> component_weights(const std::vector<GaussianComponent>& comps) {
  std::vector<double> w;
  w.reserve(comps.size());
  for (const auto& c : comps) w.push_back(c.weight);
  return w;
}

}  // namespace

Dataset sample(const GmmSpec& spec, int n_per_class, std::uint64_t seed) {
  spec.validate();
  if (n_per_class <= 0) throw DomainError("n_per_class must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int k = spec.num_classes();
  Dataset data;
  data.seed = seed;
  data.points.resize(static_cast<Eigen::Index>(k) * n_per_class, spec.dim());
  data.labels.reserve(static_cast<std::size_t>(k) * n_per_class);
  Eigen::Index row = 0;
  for (int c = 0; c < k; ++c) {
    const auto weights = component_weights(spec.classes[c]);
    for (int i = 0; i < n_per_class; ++i) {
      const auto& comp = spec.classes[c][pick(weights, uniform(rng))];
      data.points.row(row++) = draw(comp, rng).transpose();
      data.labels.push_back(c);
    }
  }
  return data;
}

std::pair<Matrix, std::vector<int>> sample_marginal(const GmmSpec& spec, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Matrix points(n, spec.dim());
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = pick(spec.priors, uniform(rng));
    const auto& comps = spec.classes[c];
    const auto& comp = comps[pick(component_weights(comps), uniform(rng))];
    points.row(i) = draw(comp, rng).transpose();
    labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
  }
  return {std::move(points), std::move(labels)};
}

double log_density(const GmmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& point, int cls) {
  if (cls < 0 || cls >= spec.num_classes()) throw IndexError("log_density: class " + std::to_string(cls));
  if (point.size() != spec.dim()) throw DimensionError("log_density: point dimension mismatch");
  const auto& comps = spec.classes[static_cast<std::size_t>(cls)];
  std::vector<double> terms;
  terms.reserve(comps.size());
  for (const auto& comp : comps) {
    if (comp.weight == 0.0) continue;
    const auto diff = (point - comp.mean).array();
    const double quad = (diff.square() / comp.variance.array()).sum();
    const double log_det = (2.0 * std::numbers::pi * comp.variance.array()).log().sum();
    terms.push_back(std::log(comp.weight) - 0.5 * (quad + log_det));
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc);
}

int bayes_predict(const GmmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& point) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < spec.num_classes(); ++c) {
    const double prior = spec.priors[static_cast<std::size_t>(c)];
    if (prior == 0.0) continue;
    const double score = std::log(prior) + log_density(spec, point, c);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

BatchPredictor bayes_predictor(const GmmSpec& spec) {
  return [spec](const Matrix& batch) {
    std::vector<int> out(static_cast<std::size_t>(batch.rows()));
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = bayes_predict(spec, batch.row(i).transpose());
    }
    return out;
  };
}

DeviationEstimate disagreement(const GmmSpec& spec, const BatchPredictor& a, const BatchPredictor& b,
                               std::int64_t n_samples, std::uint64_t seed, int workers) {
  spec.validate();
  if (n_samples < 1000) throw DomainError("deviation estimate needs at least 1000 samples");
  const std::int64_t chunks = (n_samples + kDeviationChunk - 1) / kDeviationChunk;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(chunks), 0);
  parallel_for(static_cast<std::size_t>(chunks), workers, [&](std::size_t c) {
    const std::int64_t begin = static_cast<std::int64_t>(c) * kDeviationChunk;
    const std::int64_t len = std::min(kDeviationChunk, n_samples - begin);
    std::mt19937_64 rng(derive_seed(seed, c));
    const Matrix points = sample_marginal(spec, len, rng).first;
    const auto pa = a(points);
    const auto pb = b(points);
    if (pa.size() != static_cast<std::size_t>(len) || pb.size() != static_cast<std::size_t>(len)) {
      throw DimensionError("classifier returned the wrong number of predictions");
    }
    std::int64_t diff = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) diff += pa[i] != pb[i];
    counts[c] = diff;
  });
  DeviationEstimate est;
  est.samples = n_samples;
  for (auto c : counts) est.disagreements += c;
  est.estimate = static_cast<double>(est.disagreements) / static_cast<double>(n_samples);
  est.std_error = std::sqrt(est.estimate * (1.0 - est.estimate) / static_cast<double>(n_samples));
  return est;
}

DeviationEstimate bayes_deviation(const GmmSpec& spec, const BatchPredictor& classifier, std::int64_t n_samples,
                                  std::uint64_t seed, int workers) {
  return disagreement(spec, classifier, bayes_predictor(spec), n_samples, seed, workers);
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ostringstream os;
  for (Eigen::Index j = 0; j < data.dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) os << format_double(data.points(i, j)) << ',';
    os << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
  write_file_atomic(path, os.str());
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DomainError(path.string() + ": empty dataset file");
  const auto header = split(line, ',');
  if (header.size() < 2 || header.back() != "label") {
    throw DomainError(path.string() + ": header must be x0,...,x{d-1},label");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  std::vector<int> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != d + 1) {
      throw DomainError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(d + 1) +
                        " fields");
    }
    try {
      for (std::size_t j = 0; j < d; ++j) values.push_back(parse_double(fields[j]));
      const double label = parse_double(fields[d]);
      if (label < 0 || label != std::floor(label)) throw std::invalid_argument("label must be a class index");
      labels.push_back(static_cast<int>(label));
    } catch (const std::invalid_argument& e) {
      throw DomainError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (labels.empty()) throw DomainError(path.string() + ": no rows");
  Dataset data;
  data.points = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                         static_cast<Eigen::Index>(d));
  data.labels = std::move(labels);
  return data;
}

}  // namespace lpn
