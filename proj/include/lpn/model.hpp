#pragma once

// Fully connected tanh classifiers with an optional lp projection of the
// penultimate representation:
//   input -> [dense + tanh]* -> [lp projection] -> dense -> logits

#include "lpn/autodiff.hpp"
#include "lpn/lp_norm.hpp"
#include "lpn/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace lpn {

struct NormConfig {
  NormOrder order = NormOrder::two();
  RadiusParam radius = RadiusParam::fixed(1.0);
  double epsilon = 1e-12;
};

struct ClassifierSpec {
  int input_dim = 2;
  std::vector<int> hidden_widths;  // tanh layers; the last one is the penultimate representation
  int num_classes = 2;
  std::optional<NormConfig> norm;  // empty = no projection
  std::uint64_t init_seed = 0;

  /// Width of the representation fed to the output layer.
  int penultimate_dim() const { return hidden_widths.empty() ? input_dim : hidden_widths.back(); }
  void validate() const;
};

/// 2 -> 128 tanh -> d tanh -> [lp] -> 2.
ClassifierSpec poc_classifier_spec(int penultimate_dim, std::optional<NormConfig> norm, std::uint64_t seed,
                                   int first_hidden = 128);
/// encoder_dim -> [hidden tanh] -> lp -> num_classes. hidden == 0 puts the linear head
/// straight on the projected encoder output.
ClassifierSpec probe_classifier_spec(int hidden, int encoder_dim, NormConfig norm, std::uint64_t seed,
                                     int num_classes = 2);

class Classifier {
 public:
  struct Dense {
    Parameter weight;  // in x out
    Parameter bias;    // 1 x out
  };

  /// Forward outputs: logits plus raw and projected penultimate representations.
  struct Outputs {
    Matrix logits;
    Matrix penultimate;
    Matrix normalized;
  };
  struct TapeOutputs {
    Var logits;
    Var penultimate;
    Var normalized;
  };

  /// Glorot-uniform weights, zero biases, drawn from spec.init_seed.
  explicit Classifier(ClassifierSpec spec);

  const ClassifierSpec& spec() const { return spec_; }
  const std::vector<Dense>& hidden() const { return hidden_; }
  std::vector<Dense>& hidden() { return hidden_; }
  const Dense& output() const { return output_; }
  Dense& output() { return output_; }
  const std::optional<LpNormLayer>& norm() const { return norm_; }
  std::optional<LpNormLayer>& norm() { return norm_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  Outputs forward(const Matrix& batch) const;
  TapeOutputs forward(Tape& tape, const Matrix& batch);
  /// Logits of the output layer applied to a (possibly externally modified) penultimate representation.
  Matrix logits_from_penultimate(const Matrix& penultimate) const;

  /// Row-wise argmax of the logits; ties go to the lowest class index.
  std::vector<int> predict(const Matrix& batch) const;
  BatchPredictor predictor() const;

 private:
  void check_input(const Matrix& batch) const;

  ClassifierSpec spec_;
  std::vector<Dense> hidden_;
  std::optional<LpNormLayer> norm_;
  Dense output_;
};

Classifier build_poc(int penultimate_dim, std::optional<NormConfig> norm, std::uint64_t seed);
Classifier build_probe(int hidden, int encoder_dim, NormConfig norm, std::uint64_t seed);

/// Row-wise argmax with ties to the lowest index.
std::vector<int> argmax_rows(const Matrix& logits);

/// Binary checkpoint: "LPN1", u32 tensor count, then per tensor u32 name length, name bytes,
/// u32 rank, u32 dims[rank], float64 payload (row-major). All integers and floats little-endian.
/// Fixed projection settings are stored as 1-element tensors "norm.p" / "norm.alpha" / "norm.epsilon".
void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace lpn
