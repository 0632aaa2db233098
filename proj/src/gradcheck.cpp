#include "lpn/gradcheck.hpp"

#include "lpn/lp_norm.hpp"
#include "lpn/model.hpp"
#include "lpn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace lpn {

double relative_error(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                      double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

/// Below this gradient magnitude central differences cannot resolve `tol` relative accuracy:
/// roundoff in f(x+h) - f(x-h) is about eps * |f| / h.
double noise_floor(double fx, const GradCheckOptions& opts) {
  return std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(fx)) / opts.step / opts.tolerance;
}

void record(GradCheckResult& r, double err, double tol) {
  ++r.checks;
  r.worst_rel_error = std::max(r.worst_rel_error, err);
  if (!(err < tol)) r.passed = false;
}

Eigen::VectorXd scalar_vec(double v) { return Eigen::VectorXd::Constant(1, v); }

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

/// Numeric gradient of f with respect to every entry of `target`, restoring it afterwards.
Matrix numeric_matrix_gradient(Matrix& target, const std::function<double()>& f, double h) {
  Matrix g(target.rows(), target.cols());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double saved = target.data()[i];
    target.data()[i] = saved + h;
    const double up = f();
    target.data()[i] = saved - h;
    const double down = f();
    target.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double matrix_rel_error(const Matrix& a, const Matrix& b, double floor) {
  return relative_error(Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()),
                        Eigen::Map<const Eigen::VectorXd>(b.data(), b.size()), floor);
}

}  // namespace

std::vector<GradCheckResult> check_lp_layer(const GradCheckOptions& opts) {
  struct Mode {
    std::string label;
    double p;  // 0 = learnable
  };
  const std::vector<Mode> modes = {{"p=1.5", 1.5}, {"p=2", 2.0}, {"p=3", 3.0}, {"p=8", 8.0}, {"learnable", 0.0}};
  std::vector<GradCheckResult> results;

  for (std::size_t m = 0; m < modes.size(); ++m) {
    const Mode& mode = modes[m];
    GradCheckResult r_input{"lp input " + mode.label};
    GradCheckResult r_p{"lp order " + mode.label};
    GradCheckResult r_alpha{"lp radius " + mode.label};
    for (int s = 0; s < opts.seeds; ++s) {
      std::mt19937_64 rng(derive_seed(opts.master_seed, static_cast<std::uint64_t>(s) * 16 + m));
      std::uniform_int_distribution<int> dim(2, 16);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const int d = dim(rng);
      const double scale = std::pow(10.0, 2.0 * unit(rng) - 1.0);
      const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(random_matrix(d, 1, rng, scale).data(), d);
      const Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(random_matrix(d, 1, rng).data(), d);
      const double alpha0 = 0.5 + 2.5 * unit(rng);
      const NormOrder order = mode.p > 0 ? NormOrder::general(mode.p) : NormOrder::learnable(1.2 + 4.8 * unit(rng));
      LpNormLayer layer(order, RadiusParam::learnable(alpha0));
      const double floor = noise_floor(u.dot(layer.forward(x)), opts);

      // input
      const Eigen::VectorXd analytic_x = layer.grad_wrt_input(x, u);
      const Eigen::VectorXd numeric_x =
          numeric_gradient([&](const Eigen::VectorXd& v) { return u.dot(layer.forward(v)); }, x, opts.step);
      record(r_input, relative_error(analytic_x, numeric_x, floor), opts.tolerance);

      // order: with respect to p itself (fixed) or the raw parameter (learnable)
      const double analytic_p = layer.grad_wrt_p(x, u);
      double numeric_p = 0.0;
      if (layer.learnable_p()) {
        Parameter& raw = layer.p_raw();
        numeric_p = numeric_gradient(
            [&](const Eigen::VectorXd& v) {
              const double saved = raw.value(0, 0);
              raw.value(0, 0) = v(0);
              const double out = u.dot(layer.forward(x));
              raw.value(0, 0) = saved;
              return out;
            },
            scalar_vec(raw.value(0, 0)), opts.step)(0);
      } else {
        const double a = layer.alpha();
        const double eps = layer.epsilon();
        numeric_p = numeric_gradient([&](const Eigen::VectorXd& v) { return u.dot(lp_normalize(x, v(0), a, eps)); },
                                     scalar_vec(mode.p), opts.step)(0);
      }
      record(r_p, relative_error(scalar_vec(analytic_p), scalar_vec(numeric_p), floor), opts.tolerance);

      // radius, through the raw parameter
      const double analytic_a = *layer.grad_wrt_alpha(x, u);
      Parameter& araw = layer.alpha_raw();
      const double numeric_a = numeric_gradient(
          [&](const Eigen::VectorXd& v) {
            const double saved = araw.value(0, 0);
            araw.value(0, 0) = v(0);
            const double out = u.dot(layer.forward(x));
            araw.value(0, 0) = saved;
            return out;
          },
          scalar_vec(araw.value(0, 0)), opts.step)(0);
      record(r_alpha, relative_error(scalar_vec(analytic_a), scalar_vec(numeric_a), floor), opts.tolerance);
    }
    results.push_back(r_input);
    results.push_back(r_p);
    results.push_back(r_alpha);
  }
  return results;
}

std::vector<GradCheckResult> check_tape_ops(const GradCheckOptions& opts) {
  GradCheckResult r_matmul{"matmul"};
  GradCheckResult r_bias{"add_bias"};
  GradCheckResult r_tanh{"tanh"};
  GradCheckResult r_ce{"softmax_cross_entropy"};
  GradCheckResult r_model{"classifier parameters"};

  const std::vector<std::string> model_orders = {"1", "2", "3", "inf", "learnable"};
  for (int s = 0; s < opts.seeds; ++s) {
    std::mt19937_64 rng(derive_seed(opts.master_seed ^ 0xabcdefULL, static_cast<std::uint64_t>(s)));
    std::uniform_int_distribution<int> cls3(0, 2);
    std::uniform_int_distribution<int> cls2(0, 1);

    {
      Matrix a = random_matrix(3, 4, rng);
      Matrix b = random_matrix(4, 2, rng);
      const std::vector<int> y = {cls2(rng), cls2(rng), cls2(rng)};
      Tape tape;
      Var av = tape.leaf(a);
      Var bv = tape.leaf(b);
      tape.backward(softmax_cross_entropy(matmul(av, bv), y));
      auto f = [&] {
        Tape t;
        return softmax_cross_entropy(matmul(t.constant(a), t.constant(b)), y).value()(0, 0);
      };
      record(r_matmul, matrix_rel_error(av.grad(), numeric_matrix_gradient(a, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
      record(r_matmul, matrix_rel_error(bv.grad(), numeric_matrix_gradient(b, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
    }
    {
      Matrix x = random_matrix(4, 3, rng);
      Matrix b = random_matrix(1, 3, rng);
      const std::vector<int> y = {cls3(rng), cls3(rng), cls3(rng), cls3(rng)};
      Tape tape;
      Var xv = tape.leaf(x);
      Var bv = tape.leaf(b);
      tape.backward(softmax_cross_entropy(add_bias(xv, bv), y));
      auto f = [&] {
        Tape t;
        return softmax_cross_entropy(add_bias(t.constant(x), t.constant(b)), y).value()(0, 0);
      };
      record(r_bias, matrix_rel_error(xv.grad(), numeric_matrix_gradient(x, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
      record(r_bias, matrix_rel_error(bv.grad(), numeric_matrix_gradient(b, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
    }
    {
      Matrix x = random_matrix(4, 3, rng, 1.5);
      const std::vector<int> y = {cls3(rng), cls3(rng), cls3(rng), cls3(rng)};
      Tape tape;
      Var xv = tape.leaf(x);
      tape.backward(softmax_cross_entropy(lpn::tanh(xv), y));
      auto f = [&] {
        Tape t;
        return softmax_cross_entropy(lpn::tanh(t.constant(x)), y).value()(0, 0);
      };
      record(r_tanh, matrix_rel_error(xv.grad(), numeric_matrix_gradient(x, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
    }
    {
      Matrix z = random_matrix(4, 3, rng, 2.0);
      const std::vector<int> y = {cls3(rng), cls3(rng), cls3(rng), cls3(rng)};
      Tape tape;
      Var zv = tape.leaf(z);
      tape.backward(softmax_cross_entropy(zv, y));
      auto f = [&] {
        Tape t;
        return softmax_cross_entropy(t.constant(z), y).value()(0, 0);
      };
      record(r_ce, matrix_rel_error(zv.grad(), numeric_matrix_gradient(z, f, opts.step), noise_floor(f(), opts)), opts.tolerance);
    }
    {
      const std::string& order = model_orders[static_cast<std::size_t>(s) % model_orders.size()];
      NormConfig norm{NormOrder::parse(order), RadiusParam::learnable(1.5)};
      ClassifierSpec spec;
      spec.input_dim = 2;
      spec.hidden_widths = {6, 3};
      spec.num_classes = 2;
      spec.norm = norm;
      spec.init_seed = derive_seed(opts.master_seed, 1000 + static_cast<std::uint64_t>(s));
      Classifier model(spec);
      const Matrix x = random_matrix(5, 2, rng, 1.5);
      std::vector<int> y(5);
      for (int& v : y) v = cls2(rng);

      model.zero_grad();
      {
        Tape tape;
        tape.backward(softmax_cross_entropy(model.forward(tape, x).logits, y));
      }
      auto loss = [&] {
        Tape t;
        return softmax_cross_entropy(t.constant(model.forward(x).logits), y).value()(0, 0);
      };
      for (Parameter* p : model.parameters()) {
        record(r_model, matrix_rel_error(p->grad, numeric_matrix_gradient(p->value, loss, opts.step), noise_floor(loss(), opts)), opts.tolerance);
      }
    }
  }
  return {r_matmul, r_bias, r_tanh, r_ce, r_model};
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts) {
  auto out = check_lp_layer(opts);
  auto ops = check_tape_ops(opts);
  out.insert(out.end(), ops.begin(), ops.end());
  return out;
}

}  // namespace lpn
