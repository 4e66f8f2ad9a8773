#include "nho/checks.hpp"

#include "nho/autodiff.hpp"
#include "nho/model.hpp"
#include "nho/network.hpp"
#include "nho/problems.hpp"
#include "nho/simulator.hpp"
#include "nho/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace nho {

using ad::Var;

namespace {

template <class... Args>
std::string fmt(const char* pattern, Args... args) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

NetworkParams random_net(int d, int out, std::uint64_t seed, OutputMap map = OutputMap::Identity) {
  NetworkSpec spec;
  spec.state_dim = d;
  spec.hidden_widths = {8, 8};
  spec.output_dim = out;
  spec.output_map = map;
  if (map == OutputMap::BoxBounded) spec.bounds = ControlBounds::box(out, -5.0, 5.0);
  NetworkParams p = init_network(spec, seed);
  std::mt19937_64 rng(seed ^ 0x5A5A);
  std::normal_distribution<double> n(0.0, 0.1);
  for (Matrix& t : p.tensors)
    if (t.cols() == 1)
      for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = n(rng);
  return p;
}

// Worst relative error over instances of grad vs central differences of a
// scalar function of one parameter tensor.
template <class Value, class Grad>
double fd_check(const Matrix& x0, Value value, Grad grad, double h) {
  const Matrix g = grad(x0);
  Matrix fd(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Matrix a = x0, b = x0;
    a(i) += h;
    b(i) -= h;
    fd(i) = (value(a) - value(b)) / (2.0 * h);
  }
  return rel_err(g, fd);
}

CheckResult gradient_check() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const NetworkParams net = random_net(3, 1, 100 + k);
    const Vector s = Vector::LinSpaced(3, -0.5, 0.7 + 0.01 * static_cast<double>(k));
    auto value = [&](const Matrix& w) {
      NetworkParams p = net;
      p.tensors[0] = w;
      return forward(p, 0.3, s)(0);
    };
    auto grad = [&](const Matrix& w) {
      std::vector<Matrix> params = net.tensors;
      params[0] = w;
      return ad::grad(
          [&](ad::Tape& tape, std::span<const Var> vars) {
            BoundNetwork b(&net, std::vector<Var>(vars.begin(), vars.end()));
            return b(0.3, tape.constant(Matrix(s)));
          },
          params)[0];
    };
    worst = std::max(worst, fd_check(net.tensors[0], value, grad, 1e-5));
  }
  return {"autodiff-gradient", worst <= 1e-4, fmt("max relative error %.3e over 100 MLPs", worst)};
}

CheckResult jacobian_check() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const NetworkParams net = random_net(4, 3, 300 + k);
    const Vector s = Vector::LinSpaced(4, -1.0, 1.0) * (0.5 + 0.01 * static_cast<double>(k));
    const Matrix J = input_jacobian(net, 0.4, s);
    Matrix fd(3, 4);
    for (int j = 0; j < 4; ++j) {
      Vector a = s, b = s;
      a(j) += 1e-5;
      b(j) -= 1e-5;
      fd.col(j) = (forward(net, 0.4, a) - forward(net, 0.4, b)) / 2e-5;
    }
    worst = std::max(worst, rel_err(J, fd));
  }
  return {"autodiff-jacobian", worst <= 1e-4, fmt("max relative error %.3e over 100 MLPs", worst)};
}

CheckResult second_order_check() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const NetworkParams net = random_net(3, 2, 500 + k);
    const Vector s = Vector::LinSpaced(3, -0.8, 0.6) * (1.0 + 0.01 * static_cast<double>(k));
    auto value = [&](const Matrix& w) {
      NetworkParams p = net;
      p.tensors[2] = w;
      return input_jacobian(p, 0.2, s).squaredNorm();
    };
    auto grad = [&](const Matrix& w) {
      std::vector<Matrix> params = net.tensors;
      params[2] = w;
      return ad::grad(
          [&](ad::Tape& tape, std::span<const Var> vars) {
            BoundNetwork b(&net, std::vector<Var>(vars.begin(), vars.end()));
            return ad::squared_norm(input_jacobian(b, 0.2, tape.constant(Matrix(s))));
          },
          params)[2];
    };
    worst = std::max(worst, fd_check(net.tensors[2], value, grad, 1e-5));
  }
  return {"autodiff-second-order", worst <= 1e-3, fmt("max relative error %.3e over 100 MLPs", worst)};
}

CheckResult bounded_control_check() {
  const NetworkParams net = random_net(2, 2, 11, OutputMap::BoxBounded);
  NetworkParams big = net;
  for (Matrix& t : big.tensors) t *= 40.0;
  const ControlBounds K = ControlBounds::box(2, -5.0, 5.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  int outside = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vector s = Vector::NullaryExpr(2, [&](Eigen::Index) { return n(rng); });
    const Vector a = control_forward(i % 2 ? big : net, K, 0.5, s);
    if (!K.contains_strictly(a)) ++outside;
  }
  return {"network-bounded-control", outside == 0, fmt("%.0f of 10000 controls outside the open box", outside)};
}

CheckResult rank_check() {
  const ProblemSpec spec = make_problem({"p2-double-well", 4, {}});
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const Psi psi = make_psi(spec, {8, 8}, 700 + k);
    const Vector s = Vector::LinSpaced(4, -1.5, 1.5) * std::cos(static_cast<double>(k));
    const NhoCoefficients c = nho_coefficients(psi, spec, 0.005 * static_cast<double>(k), s);
    const Matrix D = c.generator_matrix(spec.quadratic_variation(0.0));
    Eigen::JacobiSVD<Matrix> svd(D);
    const Vector sv = svd.singularValues();
    worst = std::max(worst, sv.tail(sv.size() - spec.d_M).maxCoeff() / sv(0));
  }
  return {"model-rank", worst <= 1e-8, fmt("max trailing/leading singular value ratio %.3e", worst)};
}

CheckResult hamiltonian_gradient_check() {
  double worst = 0.0;
  for (const std::string& name : benchmark_names()) {
    const int d = name == "ergodic-ou" ? 1 : 3;
    const ProblemSpec spec = make_problem({name, d, {}});
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n;
    for (int k = 0; k < 20; ++k) {
      const Vector s = Vector::NullaryExpr(d, [&](Eigen::Index) { return n(rng); });
      const Vector a = spec.bounds.center() + 0.5 * spec.bounds.half_width().cwiseProduct(Vector::NullaryExpr(
                                                        spec.m, [&](Eigen::Index) { return std::tanh(n(rng)); }));
      const Vector p = Vector::NullaryExpr(d, [&](Eigen::Index) { return n(rng); });
      const Matrix q = Matrix::NullaryExpr(d, spec.d_M, [&](Eigen::Index, Eigen::Index) { return n(rng); });
      const Vector g = grad_s_hamiltonian(spec, 0.1, s, a, p, q);
      Vector fd(d);
      for (int j = 0; j < d; ++j) {
        Vector u = s, v = s;
        u(j) += 1e-6;
        v(j) -= 1e-6;
        fd(j) = (hamiltonian(spec, 0.1, u, a, p, q) - hamiltonian(spec, 0.1, v, a, p, q)) / 2e-6;
      }
      worst = std::max(worst, (g - fd).norm() / std::max(1.0, fd.norm()));
    }
  }
  return {"model-grad-s-hamiltonian", worst <= 1e-5, fmt("max error %.3e across benchmarks", worst)};
}

// For quadratic g, one Euler step of the extended system satisfies
// E g(X_h) - g(x) - h^2/2 b^T A b = h Lg exactly, so the simulator provides
// an oracle for the generator.
CheckResult generator_check() {
  const ProblemSpec spec = make_problem({"p2-double-well", 2, {}});
  const int n2 = 2 * spec.d;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n;
  const Matrix R = Matrix::NullaryExpr(n2, n2, [&](Eigen::Index, Eigen::Index) { return n(rng); });
  const Matrix A = 0.5 * (R + R.transpose());
  const Vector c = Vector::NullaryExpr(n2, [&](Eigen::Index) { return n(rng); });
  const TestFunction g{[&](const Vector& x) { return Vector(A * x + c); }, [&](const Vector&) { return A; }};
  const auto value = [&](const Vector& x) { return 0.5 * x.dot(A * x) + c.dot(x); };
  bool ok = true;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Psi psi = make_psi(spec, {8, 8}, 900 + k);
    const Vector s = Vector::LinSpaced(spec.d, -0.7, 0.4 + 0.2 * static_cast<double>(k));
    const double h = 0.01;
    const long paths = 200000;
    const TimeGrid grid = TimeGrid::uniform(h, 1);
    const TrajectoryBatch tb = simulate(psi, spec, grid, {s, 0.0}, paths, NoiseStream(7 + k, NoiseStream::Test),
                                        {1, 4096, false});
    Vector x0(n2);
    x0 << s, tb.P[0].col(0);
    const NhoCoefficients coef = nho_coefficients(psi, spec, 0.0, s);
    const Vector b = coef.drift();
    Eigen::ArrayXd sample(paths);
    for (long j = 0; j < paths; ++j) {
      Vector x(n2);
      x << tb.S[1].col(j), tb.P[1].col(j);
      sample(j) = (value(x) - value(x0) - 0.5 * h * h * b.dot(A * b)) / h;
    }
    const double mean = sample.mean();
    const double se = std::sqrt((sample - mean).square().sum() / (paths - 1.0) / paths);
    const double lg = nho_apply(psi, spec, 0.0, x0, g);
    const double z = std::abs(mean - lg) / se;
    worst = std::max(worst, z);
    if (z > 3.0) ok = false;
  }
  return {"model-generator", ok, fmt("max deviation %.2f standard errors", worst)};
}

CheckResult increment_check() {
  const TimeGrid grid = TimeGrid::uniform(0.01, 1);
  std::string detail;
  bool ok = true;
  const Matrix identity = Matrix::Identity(2, 2);
  const Matrix scaled = Vector::Map(std::vector<double>{4.0, 1.0}.data(), 2).asDiagonal();
  for (const Matrix& C : {identity, scaled}) {
    const long n = 1000000;
    const auto inc = sample_increments([&](double) { return C; }, grid, 0, n, NoiseStream(5, NoiseStream::Test));
    const Matrix& X = inc.front();
    const Matrix cov = X * X.transpose() / static_cast<double>(n);
    const Matrix target = 0.01 * C;
    double worst = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        // standard error of the second moment of a Gaussian pair
        const double se = std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) / static_cast<double>(n));
        worst = std::max(worst, std::abs(cov(i, j) - target(i, j)) / se);
      }
    }
    ok = ok && worst <= 3.0;
    if (!detail.empty()) detail += ", ";
    detail += fmt("C = diag(%g, %g): max deviation %.2f standard errors", C(0, 0), C(1, 1), worst);
  }
  return {"simulator-increment-covariance", ok, detail + " over 1e6 draws"};
}

CheckResult initial_field_check() {
  const ProblemSpec spec = make_problem({"p2-double-well", 3, {}});
  const Psi psi = make_psi(spec, {8, 8}, 21);
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, 5);
  const InitialStates init{spec.s0, 0.5};
  const NoiseStream noise(9, NoiseStream::Train);
  const TrajectoryBatch tb = simulate(psi, spec, grid, init, 32, noise);
  const Matrix direct = forward_batch(psi.field, 0.0, init.sample(0, 32, noise));
  const bool same = tb.P.front().cwiseEqual(direct).all();
  return {"simulator-initial-field", same, same ? "bitwise equal" : "initial adjoint differs from the field network"};
}

CheckResult worker_check() {
  const ProblemSpec spec = make_problem({"p1-terminal-log", 3, {}});
  const Psi psi = make_psi(spec, {8, 8}, 4);
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, 10);
  const NoiseStream noise(1, NoiseStream::Train);
  SimulateOptions one{1, 16, false}, many{8, 16, false};
  const auto a = simulate(psi, spec, grid, {spec.s0, 0.1}, 100, noise, one);
  const auto b = simulate(psi, spec, grid, {spec.s0, 0.1}, 100, noise, many);
  bool same = true;
  for (std::size_t i = 0; i < a.S.size(); ++i) same = same && a.S[i] == b.S[i] && a.P[i] == b.P[i];
  return {"simulator-worker-invariance", same, same ? "1 and 8 workers bitwise equal" : "outputs differ"};
}

CheckResult schedule_check() {
  double sum = 0.0, sum_sq = 0.0, sum_half = 0.0;
  for (long k = 0; k <= 1000000; ++k) {
    const double g = lr_schedule(k, 1.0, 100.0);
    sum += g;
    sum_sq += g * g;
    if (k == 500000) sum_half = sum;
  }
  const bool ok = sum_sq < 200.0 && sum - sum_half > 60.0;
  return {"trainer-schedule", ok, fmt("sum %.2f, sum of squares %.3f", sum, sum_sq)};
}

}  // namespace

const std::vector<CheckInfo>& property_checks() {
  static const std::vector<CheckInfo> checks = {
      {"autodiff-gradient", gradient_check},
      {"autodiff-jacobian", jacobian_check},
      {"autodiff-second-order", second_order_check},
      {"network-bounded-control", bounded_control_check},
      {"model-rank", rank_check},
      {"model-grad-s-hamiltonian", hamiltonian_gradient_check},
      {"model-generator", generator_check},
      {"simulator-increment-covariance", increment_check},
      {"simulator-initial-field", initial_field_check},
      {"simulator-worker-invariance", worker_check},
      {"trainer-schedule", schedule_check},
  };
  return checks;
}

std::vector<CheckResult> run_checks(const std::string& filter) {
  std::vector<CheckResult> out;
  for (const CheckInfo& c : property_checks()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    try {
      out.push_back(c.run());
    } catch (const std::exception& e) {
      out.push_back({c.name, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace nho
