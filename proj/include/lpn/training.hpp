#pragma once

#include "lpn/autodiff.hpp"
#include "lpn/model.hpp"
#include "lpn/synthetic.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpn {

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Plain gradient descent: value -= lr * grad.
void sgd_step(std::span<Parameter* const> params, double lr);

/// Adam with bias-corrected moments. Moment buffers live in each Parameter.
class Adam {
 public:
  explicit Adam(OptimizerConfig cfg = {});
  void step(std::span<Parameter* const> params);
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
};

struct TrainConfig {
  int epochs = 500;
  int batch_size = 32;  // 0 = full batch
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::vector<int> eval_epochs = {100, 250, 500};
  bool shuffle = true;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  // Filled at checkpoint epochs only.
  std::optional<double> p_decoded;
  std::optional<double> alpha_decoded;
  std::optional<double> bayes_dev;
};

struct RunRecord {
  std::vector<EpochLog> epochs;
  double wall_seconds = 0.0;  // not part of any deterministic output
  std::string config_hash;

  /// `epoch,train_loss,train_acc,val_acc,p_decoded,alpha_decoded,bayes_dev`; empty fields where absent.
  std::string to_csv() const;
};

/// Optional evaluation wiring for train().
struct TrainObservers {
  const Dataset* validation = nullptr;
  /// When set, Bayes deviation is estimated at each checkpoint epoch.
  const GmmSpec* bayes_reference = nullptr;
  std::int64_t deviation_samples = 100000;
  std::uint64_t deviation_seed = 0;
  /// Epochs (other than checkpoints) at which Bayes deviation is also logged.
  std::vector<int> extra_deviation_epochs;
  std::function<void(int epoch, const Classifier&)> on_checkpoint;
};

/// Raised when the loss or a forward value becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, double grad_norm, const std::string& detail);
  int epoch;
  int batch;
  double grad_norm;
};

/// Minimizes mean softmax cross-entropy. Deterministic in (model init, data, cfg.seed).
RunRecord train(Classifier& model, const Dataset& data, const TrainConfig& cfg, const TrainObservers& observers = {});

/// Fraction of rows whose prediction equals the label. Throws DomainError on an empty dataset.
double evaluate_accuracy(const BatchPredictor& classifier, const Dataset& data);
double evaluate_accuracy(const Classifier& model, const Dataset& data);

std::string config_hash(const TrainConfig& cfg, const ClassifierSpec& spec);

}  // namespace lpn
