#include "lpn/training.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace lpn {

void sgd_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) p->value -= lr * p->grad;
}

Adam::Adam(OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw DomainError("learning rate must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw DomainError("Adam betas must lie in [0, 1)");
  }
}

void Adam::step(std::span<Parameter* const> params) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (p->moment1.rows() != p->value.rows() || p->moment1.cols() != p->value.cols()) {
      throw DimensionError("optimizer state of '" + p->name + "' does not match its value");
    }
    p->moment1 = cfg_.beta1 * p->moment1 + (1.0 - cfg_.beta1) * p->grad;
    p->moment2 = cfg_.beta2 * p->moment2 + (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= cfg_.lr * (p->moment1.array() / c1) / ((p->moment2.array() / c2).sqrt() + cfg_.eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw DomainError("epochs must be >= 1");
  if (batch_size < 0) throw DomainError("batch_size must be >= 0 (0 = full batch)");
  if (optimizer.kind == OptimizerConfig::Kind::Adam && !(optimizer.lr > 0.0)) {
    throw DomainError("learning rate must be positive");
  }
  if (optimizer.kind == OptimizerConfig::Kind::Sgd && !(optimizer.lr >= 0.0)) {
    throw DomainError("learning rate must be nonnegative");
  }
  for (int e : eval_epochs) {
    if (e < 1 || e > epochs) throw DomainError("eval epoch " + std::to_string(e) + " outside [1, epochs]");
  }
}

TrainingDiverged::TrainingDiverged(int epoch_, int batch_, double grad_norm_, const std::string& detail)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch_) + ", batch " +
                         std::to_string(batch_) + " (last gradient norm " + format_double(grad_norm_) +
                         "): " + detail),
      epoch(epoch_),
      batch(batch_),
      grad_norm(grad_norm_) {}

std::string RunRecord::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_acc,p_decoded,alpha_decoded,bayes_dev\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& e : epochs) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.train_acc) << ','
       << opt(e.val_acc) << ',' << opt(e.p_decoded) << ',' << opt(e.alpha_decoded) << ',' << opt(e.bayes_dev)
       << '\n';
  }
  return os.str();
}

double evaluate_accuracy(const BatchPredictor& classifier, const Dataset& data) {
  if (data.size() == 0) throw DomainError("accuracy of an empty dataset is undefined");
  const auto pred = classifier(data.points);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double evaluate_accuracy(const Classifier& model, const Dataset& data) {
  return evaluate_accuracy(model.predictor(), data);
}

std::string config_hash(const TrainConfig& cfg, const ClassifierSpec& spec) {
  std::ostringstream os;
  os << "epochs=" << cfg.epochs << ";batch=" << cfg.batch_size
     << ";opt=" << (cfg.optimizer.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd")
     << ";lr=" << format_double(cfg.optimizer.lr) << ";b1=" << format_double(cfg.optimizer.beta1)
     << ";b2=" << format_double(cfg.optimizer.beta2) << ";eps=" << format_double(cfg.optimizer.eps)
     << ";seed=" << cfg.seed << ";shuffle=" << cfg.shuffle << ";in=" << spec.input_dim << ";hidden=";
  for (int w : spec.hidden_widths) os << w << ',';
  os << ";k=" << spec.num_classes << ";init=" << spec.init_seed;
  if (spec.norm) {
    os << ";p=" << spec.norm->order.to_string() << ";alpha=" << spec.norm->radius.to_string()
       << ";neps=" << format_double(spec.norm->epsilon);
  }
  return fnv1a_hex(os.str());
}

namespace {

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

RunRecord train(Classifier& model, const Dataset& data, const TrainConfig& cfg, const TrainObservers& observers) {
  cfg.validate();
  if (data.size() == 0) throw DomainError("training set is empty");
  if (data.dim() != model.spec().input_dim) throw DimensionError("dataset width does not match the model input");
  for (int y : data.labels) {
    if (y < 0 || y >= model.spec().num_classes) throw IndexError("training label " + std::to_string(y) + " out of range");
  }

  const auto start = std::chrono::steady_clock::now();
  RunRecord record;
  record.config_hash = config_hash(cfg, model.spec());

  const std::size_t n = static_cast<std::size_t>(data.size());
  const std::size_t batch = cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  auto params = model.parameters();
  Adam adam(cfg.optimizer.kind == OptimizerConfig::Kind::Adam ? cfg.optimizer : OptimizerConfig{});
  double last_grad_norm = 0.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += batch, ++batch_index) {
      const std::size_t len = std::min(batch, n - begin);
      const std::span<const std::size_t> idx(order.data() + begin, len);
      const Matrix x = gather_rows(data.points, idx);
      std::vector<int> y(len);
      for (std::size_t i = 0; i < len; ++i) y[i] = data.labels[idx[i]];

      model.zero_grad();
      double loss_value = 0.0;
      try {
        Tape tape;
        const auto out = model.forward(tape, x);
        const Var loss = softmax_cross_entropy(out.logits, y);
        loss_value = loss.value()(0, 0);
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw TrainingDiverged(epoch, batch_index, last_grad_norm, e.what());
      }
      last_grad_norm = grad_norm(params);
      if (!std::isfinite(loss_value) || !std::isfinite(last_grad_norm)) {
        throw TrainingDiverged(epoch, batch_index, last_grad_norm, "non-finite loss or gradient");
      }
      loss_sum += loss_value * static_cast<double>(len);

      if (cfg.optimizer.kind == OptimizerConfig::Kind::Adam) {
        adam.step(params);
      } else {
        sgd_step(params, cfg.optimizer.lr);
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n);
    log.train_acc = evaluate_accuracy(model, data);
    if (observers.validation) log.val_acc = evaluate_accuracy(model, *observers.validation);

    const bool checkpoint = std::find(cfg.eval_epochs.begin(), cfg.eval_epochs.end(), epoch) != cfg.eval_epochs.end();
    const bool extra = std::find(observers.extra_deviation_epochs.begin(), observers.extra_deviation_epochs.end(),
                                 epoch) != observers.extra_deviation_epochs.end();
    if (checkpoint) {
      if (const auto& norm = model.norm()) {
        log.p_decoded = norm->p();
        log.alpha_decoded = norm->alpha();
      }
    }
    if ((checkpoint || extra) && observers.bayes_reference) {
      log.bayes_dev = bayes_deviation(*observers.bayes_reference, model.predictor(), observers.deviation_samples,
                                      observers.deviation_seed)
                          .estimate;
    }
    record.epochs.push_back(log);
    if (checkpoint && observers.on_checkpoint) observers.on_checkpoint(epoch, model);
  }

  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

}  // namespace lpn
