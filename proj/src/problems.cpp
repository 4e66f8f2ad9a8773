#include "nho/problems.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace nho {

using ad::Var;

namespace {

constexpr double kP1Horizon = 1.0;

Var zeros_like_rows(const Var& S, Eigen::Index rows) {
  return S.tape()->constant(Matrix::Zero(rows, 1));
}

Diffusion constant_diagonal(const Var& S, double value) {
  Diffusion sigma;
  sigma.diagonal = S.tape()->constant(Matrix::Constant(S.rows(), 1, value));
  return sigma;
}

std::function<Matrix(double)> identity_variation(int dim) {
  return [dim](double) { return Matrix::Identity(dim, dim); };
}

double param(const BenchmarkId& id, const std::string& key) {
  const auto defaults = benchmark_parameters(id.name);
  const auto it = id.params.find(key);
  return it != id.params.end() ? it->second : defaults.at(key);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

ProblemSpec terminal_log(const BenchmarkId& id) {
  const int d = id.d;
  ProblemSpec p;
  p.name = "p1-terminal-log";
  p.d = p.d_M = p.m = d;
  p.horizon = kP1Horizon;
  p.sense = Sense::Maximize;
  p.bounds = ControlBounds::box(d, -param(id, "control_bound"), param(id, "control_bound"));
  p.s0 = Vector::Zero(d);
  p.drift = [](double, const Var&, const Var& A) { return A; };
  p.diffusion = [](double, const Var& S, const Var&) { return constant_diagonal(S, 1.0); };
  p.running = [](double, const Var&, const Var& A) { return -0.5 * ad::colsum(ad::square(A)); };
  p.terminal = [](const Var& S) { return ad::log(0.5 + 0.5 * ad::colsum(ad::square(S))); };
  p.terminal_grad = [](const Var& S) {
    return (2.0 * S) * ad::pow(1.0 + ad::colsum(ad::square(S)), -1.0);
  };
  p.drift_jac_transpose = [](double, const Var& S, const Var&, const Var&) { return zeros_like_rows(S, S.rows()); };
  p.running_grad = [](double, const Var& S, const Var&) { return zeros_like_rows(S, S.rows()); };
  p.quadratic_variation = identity_variation(d);
  return p;
}

ProblemSpec double_well(const BenchmarkId& id) {
  const int d = id.d;
  const double scale = 1.0 / d;
  ProblemSpec p;
  p.name = "p2-double-well";
  p.d = p.d_M = p.m = d;
  p.horizon = param(id, "horizon");
  p.sense = Sense::Minimize;
  p.bounds = ControlBounds::box(d, -param(id, "control_bound"), param(id, "control_bound"));
  p.s0 = Vector::Zero(d);
  const double noise = std::sqrt(2.0);
  // U(s) = (1/d) sum (s_i^2 - 1)^2 / 4
  auto grad_U = [scale](const Var& S) { return scale * (ad::pow(S, 3.0) - S); };
  p.drift = [grad_U](double, const Var& S, const Var& A) { return A - grad_U(S); };
  p.diffusion = [noise](double, const Var& S, const Var&) { return constant_diagonal(S, noise); };
  p.running = [](double, const Var&, const Var& A) { return 0.5 * ad::colsum(ad::square(A)); };
  p.terminal = [scale](const Var& S) {
    return (0.25 * scale) * ad::colsum(ad::square(ad::square(S) - 1.0));
  };
  p.terminal_grad = grad_U;
  p.drift_jac_transpose = [scale](double, const Var& S, const Var&, const Var& P) {
    return (-scale) * ((3.0 * ad::square(S) - 1.0) * P);
  };
  p.running_grad = [](double, const Var& S, const Var&) { return zeros_like_rows(S, S.rows()); };
  p.quadratic_variation = identity_variation(d);
  return p;
}

ProblemSpec liquidation(const BenchmarkId& id) {
  const int d = id.d;
  const double kappa = param(id, "kappa");
  const double penalty = param(id, "lambda");
  const double vol = param(id, "sigma");
  const double eps = param(id, "epsilon");
  require(kappa > 0.0 && penalty > 0.0 && vol >= 0.0 && eps > 0.0,
          "p3-liquidation: kappa, lambda, epsilon must be > 0 and sigma >= 0");
  ProblemSpec p;
  p.name = "p3-liquidation";
  p.d = p.d_M = p.m = d;
  p.horizon = param(id, "horizon");
  p.sense = Sense::Minimize;
  p.bounds = ControlBounds::box(d, param(id, "rate_lower"), param(id, "rate_upper"));
  p.s0 = Vector::Constant(d, param(id, "s0"));
  p.drift = [](double, const Var&, const Var& A) { return -A; };
  p.diffusion = [vol](double, const Var& S, const Var&) { return constant_diagonal(S, vol); };
  p.running = [kappa, eps](double, const Var&, const Var& A) {
    return kappa * ad::colsum(ad::pow(ad::square(A) + eps * eps, 0.75));
  };
  p.terminal = [penalty](const Var& S) { return penalty * ad::colsum(ad::square(S)); };
  p.terminal_grad = [penalty](const Var& S) { return (2.0 * penalty) * S; };
  p.drift_jac_transpose = [](double, const Var& S, const Var&, const Var&) { return zeros_like_rows(S, S.rows()); };
  p.running_grad = [](double, const Var& S, const Var&) { return zeros_like_rows(S, S.rows()); };
  p.quadratic_variation = identity_variation(d);
  return p;
}

ProblemSpec ergodic_ou(const BenchmarkId& id) {
  require(id.d == 1, "ergodic-ou is one-dimensional (d = 1)");
  ProblemSpec p;
  p.name = "ergodic-ou";
  p.d = p.d_M = p.m = 1;
  p.horizon = param(id, "horizon");
  p.sense = Sense::Minimize;
  p.stationary = true;
  p.bounds = ControlBounds::box(1, -param(id, "control_bound"), param(id, "control_bound"));
  p.s0 = Vector::Zero(1);
  p.drift = [](double, const Var& S, const Var& A) { return A - S; };
  p.diffusion = [](double, const Var& S, const Var&) { return constant_diagonal(S, 1.0); };
  p.running = [](double, const Var& S, const Var& A) {
    return ad::colsum(ad::square(S)) + 0.5 * ad::colsum(ad::square(A));
  };
  p.terminal = [](const Var& S) { return 0.0 * ad::colsum(S); };
  p.terminal_grad = [](const Var& S) { return 0.0 * S; };
  p.drift_jac_transpose = [](double, const Var&, const Var&, const Var& P) { return -P; };
  p.running_grad = [](double, const Var& S, const Var&) { return 2.0 * S; };
  p.quadratic_variation = identity_variation(1);
  return p;
}

}  // namespace

const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"p1-terminal-log", "p2-double-well", "p3-liquidation",
                                                 "ergodic-ou"};
  return names;
}

std::map<std::string, double> benchmark_parameters(const std::string& name) {
  if (name == "p1-terminal-log") return {{"control_bound", 1.0}};
  if (name == "p2-double-well") return {{"horizon", 0.5}, {"control_bound", 5.0}};
  if (name == "p3-liquidation")
    return {{"horizon", 1.0}, {"kappa", 0.1},      {"lambda", 100.0},   {"sigma", 0.1},
            {"epsilon", 1e-3}, {"s0", 1.0},        {"rate_lower", 0.0}, {"rate_upper", 5.0}};
  if (name == "ergodic-ou") return {{"horizon", 10.0}, {"control_bound", 5.0}};
  throw std::invalid_argument("unknown benchmark '" + name + "'");
}

ProblemSpec make_problem(const BenchmarkId& id) {
  require(id.d >= 1, "benchmark dimension must be >= 1");
  const auto known = benchmark_parameters(id.name);
  for (const auto& [key, value] : id.params) {
    require(known.count(key) == 1, "benchmark '" + id.name + "' has no parameter '" + key + "'");
    require(std::isfinite(value), "benchmark parameter '" + key + "' must be finite");
  }
  if (known.count("horizon")) require(param(id, "horizon") > 0.0, "benchmark horizon must be > 0");

  ProblemSpec spec;
  if (id.name == "p1-terminal-log") spec = terminal_log(id);
  else if (id.name == "p2-double-well") spec = double_well(id);
  else if (id.name == "p3-liquidation") spec = liquidation(id);
  else spec = ergodic_ou(id);
  spec.validate();
  return to_maximization(std::move(spec));
}

// ---------------------------------------------------------------------------

namespace {

template <class Visit>
void sample_terminal_points(int d, double t, const Vector& s, std::int64_t samples, std::uint64_t seed,
                            Visit&& visit) {
  if (s.size() != d) throw std::invalid_argument("reference: state has wrong dimension");
  if (t > kP1Horizon) throw std::invalid_argument("reference: t must be <= T");
  if (samples < 2) throw std::invalid_argument("reference: need at least two samples");
  const double scale = std::sqrt(kP1Horizon - t);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x(d);
  for (std::int64_t n = 0; n < samples; ++n) {
    for (int k = 0; k < d; ++k) x(k) = s(k) + scale * normal(rng);
    visit(x);
  }
}

}  // namespace

Estimate p1_reference_value(int d, double t, const Vector& s, std::int64_t samples, std::uint64_t seed) {
  if (t == kP1Horizon) return {std::log(0.5 + 0.5 * s.squaredNorm()), 0.0};
  // exp(G(x)) = (1 + |x|^2) / 2
  double sum = 0.0, sum_sq = 0.0;
  sample_terminal_points(d, t, s, samples, seed, [&](const Vector& x) {
    const double w = 0.5 + 0.5 * x.squaredNorm();
    sum += w;
    sum_sq += w * w;
  });
  const auto n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {std::log(mean), std::sqrt(var / n) / mean};
}

VectorEstimate p1_reference_control(int d, double t, const Vector& s, std::int64_t samples,
                                    std::uint64_t seed) {
  if (t >= kP1Horizon) throw std::invalid_argument("reference control: t must be < T");
  // Ratio of means a / b with a = e^G grad G, b = e^G.
  Vector sum_a = Vector::Zero(d), sum_aa = Vector::Zero(d), sum_ab = Vector::Zero(d);
  double sum_b = 0.0, sum_bb = 0.0;
  sample_terminal_points(d, t, s, samples, seed, [&](const Vector& x) {
    const double b = 0.5 + 0.5 * x.squaredNorm();
    const Vector a = b * (2.0 * x / (1.0 + x.squaredNorm()));
    sum_a += a;
    sum_aa += a.cwiseAbs2();
    sum_ab += a * b;
    sum_b += b;
    sum_bb += b * b;
  });
  const auto n = static_cast<double>(samples);
  const Vector mean_a = sum_a / n;
  const double mean_b = sum_b / n;
  const Vector ratio = mean_a / mean_b;
  const Vector var_a = (sum_aa / n - mean_a.cwiseAbs2()) * (n / (n - 1.0));
  const Vector cov_ab = (sum_ab / n - mean_a * mean_b) * (n / (n - 1.0));
  const double var_b = (sum_bb / n - mean_b * mean_b) * (n / (n - 1.0));
  Vector var_ratio = (var_a - 2.0 * ratio.cwiseProduct(cov_ab) + ratio.cwiseAbs2() * var_b) /
                     (mean_b * mean_b * n);
  return {ratio, var_ratio.cwiseMax(0.0).cwiseSqrt()};
}

}  // namespace nho
