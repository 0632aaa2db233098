#include "lpn/errors.hpp"
#include "lpn/model.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace lpn;

namespace {

Matrix random_batch(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

const std::vector<std::string> kOrders = {"1", "2", "3", "inf", "learnable"};

}  // namespace

TEST_CASE("PoC parameter counts") {
  CHECK(build_poc(2, std::nullopt, 1).parameter_count() == 648);
  CHECK(build_poc(2, NormConfig{NormOrder::learnable(), RadiusParam::learnable()}, 1).parameter_count() == 650);
  CHECK(build_poc(2, NormConfig{NormOrder::two(), RadiusParam::fixed(1.0)}, 1).parameter_count() == 648);
  CHECK(build_poc(16, std::nullopt, 1).parameter_count() == 2 * 128 + 128 + 128 * 16 + 16 + 16 * 2 + 2);
}

TEST_CASE("probe heads") {
  const NormConfig norm{NormOrder::two(), RadiusParam::fixed(1.0)};
  const Classifier linear = build_probe(0, 2, norm, 3);
  CHECK(linear.parameter_count() == 6);
  CHECK(linear.spec().penultimate_dim() == 2);
  const Classifier wide = build_probe(128, 2, norm, 3);
  CHECK(wide.spec().penultimate_dim() == 128);
  const auto out = wide.forward(random_batch(4, 2, 1));
  CHECK(out.penultimate.cols() == 128);
  CHECK(out.normalized.cols() == 128);
}

TEST_CASE("same seed gives identical weights") {
  const Classifier a = build_poc(4, std::nullopt, 99);
  const Classifier b = build_poc(4, std::nullopt, 99);
  const Classifier c = build_poc(4, std::nullopt, 100);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK_FALSE(pa.front()->value == c.parameters().front()->value);
}

TEST_CASE("Glorot-uniform bounds and zero biases") {
  const Classifier m = build_poc(2, std::nullopt, 5);
  for (const auto& layer : m.hidden()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.value.rows() + layer.weight.value.cols()));
    CHECK(layer.weight.value.cwiseAbs().maxCoeff() <= limit);
    CHECK(layer.bias.value.isZero());
  }
}

TEST_CASE("zero output weights give uniform logits") {
  Classifier m = build_poc(2, std::nullopt, 5);
  m.output().weight.value.setZero();
  const auto out = m.forward(random_batch(6, 2, 2));
  CHECK(out.logits.isZero());
  const auto y = m.predict(random_batch(6, 2, 2));
  for (int v : y) CHECK(v == 0);
}

TEST_CASE("normalized representation lies on the lp sphere") {
  for (const auto& order : kOrders) {
    Classifier m = build_poc(3, NormConfig{NormOrder::parse(order), RadiusParam::fixed(1.7)}, 8);
    const auto out = m.forward(random_batch(50, 2, 3));
    const double p = m.norm()->p();
    for (Eigen::Index i = 0; i < out.normalized.rows(); ++i) {
      const Eigen::VectorXd row = out.normalized.row(i).transpose();
      CHECK(std::abs(lp_norm(row, p) - 1.7) < 1e-9);
      CHECK(std::abs(row.norm() - 1.7 * cp_ratio(Eigen::VectorXd(out.penultimate.row(i).transpose()), p)) < 1e-9);
    }
  }
  Classifier plain = build_poc(3, std::nullopt, 8);
  const auto out = plain.forward(random_batch(10, 2, 3));
  CHECK(out.normalized == out.penultimate);
}

TEST_CASE("argmax and predict") {
  Matrix logits(3, 2);
  logits << 0.2, 0.9, 0.5, 0.5, 3.0, -1.0;
  CHECK(argmax_rows(logits) == std::vector<int>{1, 0, 0});

  const Classifier m = build_poc(2, NormConfig{}, 4);
  const Matrix x = random_batch(30, 2, 6);
  CHECK(m.predict(x) == argmax_rows(m.forward(x).logits));
  CHECK_THROWS_AS(m.predict(random_batch(3, 5, 1)), DimensionError);
}

TEST_CASE("predictions are invariant to positive penultimate rescaling") {
  for (const auto& order : kOrders) {
    const Classifier m = build_poc(4, NormConfig{NormOrder::parse(order), RadiusParam::fixed(1.0)}, 12);
    const auto out = m.forward(random_batch(100, 2, 13));
    const auto base = argmax_rows(out.logits);
    for (double c : {1e-6, 1e-2, 0.5, 3.0, 1e3, 1e6}) {
      CHECK(argmax_rows(m.logits_from_penultimate(c * out.penultimate)) == base);
    }
  }
}

TEST_CASE("forward is a pure function of weights and input") {
  const Classifier m = build_poc(2, NormConfig{NormOrder::learnable(), RadiusParam::learnable()}, 21);
  const Matrix x = random_batch(20, 2, 22);
  CHECK(m.forward(x).logits == m.forward(x).logits);
  Tape tape;
  Classifier copy = m;
  CHECK(copy.forward(tape, x).logits.value() == m.forward(x).logits);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "lpn_test_ckpt";
  std::filesystem::create_directories(dir);
  const Matrix x = random_batch(25, 2, 30);
  const std::vector<std::optional<NormConfig>> norms = {
      std::nullopt, NormConfig{NormOrder::infinity(), RadiusParam::fixed(2.5)},
      NormConfig{NormOrder::general(3.0), RadiusParam::fixed(1.0)},
      NormConfig{NormOrder::learnable(), RadiusParam::learnable()}};
  int i = 0;
  for (const auto& norm : norms) {
    Classifier m = build_poc(3, norm, 31);
    if (m.norm() && m.norm()->learnable_p()) m.norm()->p_raw().value(0, 0) = 0.37;
    const auto path = dir / ("m" + std::to_string(i++) + ".lpn");
    save_checkpoint(m, path);
    const Classifier back = load_checkpoint(path);
    CHECK(back.parameter_count() == m.parameter_count());
    CHECK(back.spec().hidden_widths == m.spec().hidden_widths);
    CHECK(back.norm().has_value() == m.norm().has_value());
    CHECK(back.forward(x).logits == m.forward(x).logits);
  }
  const auto bad = dir / "bad.lpn";
  {
    std::ofstream(bad) << "nope";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), DomainError);
  std::filesystem::remove_all(dir);
}
