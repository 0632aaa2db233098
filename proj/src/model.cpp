#include "lpn/model.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <random>

namespace lpn {

void ClassifierSpec::validate() const {
  if (input_dim < 1) throw DomainError("classifier input_dim must be >= 1");
  for (int w : hidden_widths) {
    if (w < 1) throw DomainError("hidden layer widths must be >= 1");
  }
  if (num_classes < 2) throw DomainError("classifier needs at least two classes");
}

ClassifierSpec poc_classifier_spec(int penultimate_dim, std::optional<NormConfig> norm, std::uint64_t seed,
                                   int first_hidden) {
  ClassifierSpec spec;
  spec.input_dim = 2;
  spec.hidden_widths = {first_hidden, penultimate_dim};
  spec.num_classes = 2;
  spec.norm = std::move(norm);
  spec.init_seed = seed;
  return spec;
}

ClassifierSpec probe_classifier_spec(int hidden, int encoder_dim, NormConfig norm, std::uint64_t seed,
                                     int num_classes) {
  if (hidden < 0) throw DomainError("probe hidden width must be >= 0");
  ClassifierSpec spec;
  spec.input_dim = encoder_dim;
  if (hidden > 0) spec.hidden_widths = {hidden};
  spec.num_classes = num_classes;
  spec.norm = norm;
  spec.init_seed = seed;
  return spec;
}

Classifier build_poc(int penultimate_dim, std::optional<NormConfig> norm, std::uint64_t seed) {
  return Classifier(poc_classifier_spec(penultimate_dim, std::move(norm), seed));
}

Classifier build_probe(int hidden, int encoder_dim, NormConfig norm, std::uint64_t seed) {
  return Classifier(probe_classifier_spec(hidden, encoder_dim, norm, seed));
}

namespace {

Classifier::Dense glorot_dense(const std::string& name, int in, int out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = uniform(rng);
  }
  return {Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", Matrix::Zero(1, out))};
}

Matrix dense_forward(const Classifier::Dense& layer, const Matrix& x) {
  Matrix out = x * layer.weight.value;
  out.rowwise() += layer.bias.value.row(0);
  return out;
}

}  // namespace

Classifier::Classifier(ClassifierSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.init_seed);
  int in = spec_.input_dim;
  for (std::size_t i = 0; i < spec_.hidden_widths.size(); ++i) {
    hidden_.push_back(glorot_dense("hidden." + std::to_string(i), in, spec_.hidden_widths[i], rng));
    in = spec_.hidden_widths[i];
  }
  output_ = glorot_dense("output", in, spec_.num_classes, rng);
  if (spec_.norm) norm_.emplace(spec_.norm->order, spec_.norm->radius, spec_.norm->epsilon);
}

std::vector<Parameter*> Classifier::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : hidden_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  if (norm_) {
    for (Parameter* p : norm_->parameters()) out.push_back(p);
  }
  out.push_back(&output_.weight);
  out.push_back(&output_.bias);
  return out;
}

std::vector<const Parameter*> Classifier::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto* p : const_cast<Classifier*>(this)->parameters()) out.push_back(p);
  return out;
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

void Classifier::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void Classifier::check_input(const Matrix& batch) const {
  if (batch.cols() != spec_.input_dim) {
    throw DimensionError("classifier expects " + std::to_string(spec_.input_dim) + " input columns, got batch " +
                         shape_string(batch));
  }
}

Classifier::Outputs Classifier::forward(const Matrix& batch) const {
  check_input(batch);
  Matrix h = batch;
  for (const auto& layer : hidden_) h = dense_forward(layer, h).array().tanh().matrix();
  Outputs out;
  out.normalized = norm_ ? norm_->forward_rows(h) : h;
  out.logits = dense_forward(output_, out.normalized);
  out.penultimate = std::move(h);
  return out;
}

Classifier::TapeOutputs Classifier::forward(Tape& tape, const Matrix& batch) {
  check_input(batch);
  Var h = tape.constant(batch);
  for (auto& layer : hidden_) {
    h = lpn::tanh(add_bias(matmul(h, tape.param(layer.weight)), tape.param(layer.bias)));
  }
  TapeOutputs out;
  out.penultimate = h;
  out.normalized = norm_ ? lp_normalize(h, *norm_) : h;
  out.logits = add_bias(matmul(out.normalized, tape.param(output_.weight)), tape.param(output_.bias));
  return out;
}

Matrix Classifier::logits_from_penultimate(const Matrix& penultimate) const {
  if (penultimate.cols() != spec_.penultimate_dim()) {
    throw DimensionError("penultimate representation has the wrong width: " + shape_string(penultimate));
  }
  return dense_forward(output_, norm_ ? norm_->forward_rows(penultimate) : penultimate);
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> Classifier::predict(const Matrix& batch) const { return argmax_rows(forward(batch).logits); }

BatchPredictor Classifier::predictor() const {
  return [this](const Matrix& batch) { return predict(batch); };
}

// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'L', 'P', 'N', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;
  std::string origin;

  template <typename T>
  T get() {
    if (pos + sizeof(T) > data.size()) throw DomainError(origin + ": truncated checkpoint");
    char bytes[sizeof(T)];
    std::memcpy(bytes, data.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos + n > data.size()) throw DomainError(origin + ": truncated checkpoint");
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

void put_tensor(std::string& out, const std::string& name, const Matrix& value, bool as_vector) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  if (as_vector) {
    put_le<std::uint32_t>(out, 1);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.size()));
  } else {
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.cols()));
  }
  for (Eigen::Index i = 0; i < value.rows(); ++i) {
    for (Eigen::Index j = 0; j < value.cols(); ++j) put_le<double>(out, value(i, j));
  }
}

}  // namespace

void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::pair<Matrix, bool>>> tensors;
  for (const auto& layer : model.hidden()) {
    tensors.push_back({layer.weight.name, {layer.weight.value, false}});
    tensors.push_back({layer.bias.name, {layer.bias.value, true}});
  }
  if (const auto& norm = model.norm()) {
    if (norm->learnable_p()) {
      tensors.push_back({"norm.p_raw", {norm->p_raw().value, true}});
    } else {
      tensors.push_back({"norm.p", {Matrix::Constant(1, 1, norm->p()), true}});
    }
    if (norm->learnable_alpha()) {
      tensors.push_back({"norm.alpha_raw", {norm->alpha_raw().value, true}});
    } else {
      tensors.push_back({"norm.alpha", {Matrix::Constant(1, 1, norm->alpha()), true}});
    }
    tensors.push_back({"norm.epsilon", {Matrix::Constant(1, 1, norm->epsilon()), true}});
  }
  tensors.push_back({model.output().weight.name, {model.output().weight.value, false}});
  tensors.push_back({model.output().bias.name, {model.output().bias.value, true}});

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(out, name, t.first, t.second);
  write_file_atomic(path, out);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r{data, 0, path.string()};
  if (r.bytes(4) != std::string(kMagic, 4)) throw DomainError(path.string() + ": not an LPN1 checkpoint");
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Matrix> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.bytes(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank < 1 || rank > 2) throw DomainError(path.string() + ": tensor '" + name + "' has unsupported rank");
    std::uint32_t rows = 1;
    std::uint32_t cols = r.get<std::uint32_t>();
    if (rank == 2) {
      rows = cols;
      cols = r.get<std::uint32_t>();
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
    }
    tensors.emplace(std::move(name), std::move(m));
  }
  if (r.pos != data.size()) throw DomainError(path.string() + ": trailing bytes after checkpoint");

  auto take = [&](const std::string& name) -> const Matrix& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DomainError(path.string() + ": missing tensor '" + name + "'");
    return it->second;
  };

  ClassifierSpec spec;
  const Matrix& out_w = take("output.weight");
  spec.num_classes = static_cast<int>(out_w.cols());
  for (int i = 0; tensors.count("hidden." + std::to_string(i) + ".weight"); ++i) {
    spec.hidden_widths.push_back(static_cast<int>(take("hidden." + std::to_string(i) + ".weight").cols()));
  }
  spec.input_dim = spec.hidden_widths.empty() ? static_cast<int>(out_w.rows())
                                              : static_cast<int>(take("hidden.0.weight").rows());
  const bool has_norm = tensors.count("norm.epsilon") > 0;
  if (has_norm) {
    NormConfig norm;
    norm.epsilon = take("norm.epsilon")(0, 0);
    if (tensors.count("norm.p_raw")) {
      norm.order = NormOrder::learnable();
    } else {
      const double p = take("norm.p")(0, 0);
      norm.order = std::isinf(p) ? NormOrder::infinity() : NormOrder::general(p);
    }
    norm.radius = tensors.count("norm.alpha_raw") ? RadiusParam::learnable() : RadiusParam::fixed(take("norm.alpha")(0, 0));
    spec.norm = norm;
  }

  Classifier model(spec);
  auto assign = [&](Parameter& p) {
    const Matrix& v = take(p.name);
    if (v.size() != p.value.size()) throw DomainError(path.string() + ": tensor '" + p.name + "' has the wrong size");
    p.value = Eigen::Map<const Matrix>(v.data(), p.value.rows(), p.value.cols());
  };
  for (Parameter* p : model.parameters()) assign(*p);
  return model;
}

}  // namespace lpn
