#include "nho/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace nho {

using ad::Var;
using Eigen::Index;

namespace {

Var broadcast_cols(const Var& v, Index cols) {
  if (v.cols() == cols) return v;
  return v + v.tape()->constant(Matrix::Zero(v.rows(), cols));
}

}  // namespace

int Diffusion::driver_dim() const {
  return is_diagonal() ? static_cast<int>(diagonal.rows()) : static_cast<int>(columns.size());
}

Var Diffusion::apply(const Var& increments) const {
  if (increments.rows() != driver_dim())
    throw ad::ShapeError("diffusion: increments have " + std::to_string(increments.rows()) +
                         " rows, expected " + std::to_string(driver_dim()));
  if (is_diagonal()) return diagonal * increments;
  Var out;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    Var term = columns[j] * ad::rows(increments, static_cast<Index>(j), 1);
    out = out.valid() ? out + term : term;
  }
  return out;
}

Var Diffusion::column(int j, Index batch) const {
  if (is_diagonal()) {
    Matrix e = Matrix::Zero(diagonal.rows(), 1);
    e(j, 0) = 1.0;
    return broadcast_cols(diagonal * diagonal.tape()->constant(std::move(e)), batch);
  }
  return broadcast_cols(columns[static_cast<std::size_t>(j)], batch);
}

void ProblemSpec::validate() const {
  if (d < 1 || d_M < 1 || m < 1) throw std::invalid_argument("problem '" + name + "': dimensions must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("problem '" + name + "': horizon must be > 0");
  bounds.validate();
  if (bounds.dim() != m) throw std::invalid_argument("problem '" + name + "': bounds dimension differs from m");
  if (s0.size() != d) throw std::invalid_argument("problem '" + name + "': s0 dimension differs from d");
  if (!drift || !diffusion || !running || !terminal || !terminal_grad || !drift_jac_transpose ||
      !running_grad || !quadratic_variation)
    throw std::invalid_argument("problem '" + name + "': missing callable");
  if (sigma_depends_on_state && !sigma_contraction)
    throw std::invalid_argument("problem '" + name + "': state-dependent sigma needs sigma_contraction");
  const Matrix C = quadratic_variation(0.0);
  if (C.rows() != d_M || C.cols() != d_M)
    throw std::invalid_argument("problem '" + name + "': quadratic variation must be d_M x d_M");
}

ProblemSpec to_maximization(ProblemSpec spec) {
  if (spec.sense == Sense::Maximize || spec.negated) return spec;
  auto running = spec.running;
  auto running_grad = spec.running_grad;
  auto terminal = spec.terminal;
  auto terminal_grad = spec.terminal_grad;
  spec.running = [running](double t, const Var& S, const Var& A) { return -running(t, S, A); };
  spec.running_grad = [running_grad](double t, const Var& S, const Var& A) {
    return -running_grad(t, S, A);
  };
  spec.terminal = [terminal](const Var& S) { return -terminal(S); };
  spec.terminal_grad = [terminal_grad](const Var& S) { return -terminal_grad(S); };
  spec.negated = true;
  return spec;
}

double field_output_scale(const ProblemSpec& spec) {
  if (spec.stationary || spec.s0.size() != spec.d) return 1.0;
  ad::Tape tape;
  const Matrix grad = spec.terminal_grad(tape.constant(Matrix(spec.s0))).value();
  return std::max(1.0, grad.cwiseAbs().maxCoeff());
}

Psi make_psi(const ProblemSpec& spec, const std::vector<int>& hidden_widths, std::uint64_t seed) {
  NetworkSpec control;
  control.state_dim = spec.d;
  control.hidden_widths = hidden_widths;
  control.output_dim = spec.m;
  control.output_map = OutputMap::BoxBounded;
  control.bounds = spec.bounds;
  control.stationary = spec.stationary;
  control.horizon = spec.horizon;

  NetworkSpec field = control;
  field.output_dim = spec.d;
  field.output_map = OutputMap::Identity;
  field.bounds = {};
  field.output_scale = field_output_scale(spec);

  NetworkParams field_params = init_network(field, seed + 1);
  // initial field outputs do not depend on the scale
  if (field.output_scale != 1.0) field_params.weight(field_params.layers() - 1) /= field.output_scale;
  return {init_network(control, seed), std::move(field_params)};
}

nlohmann::json to_json(const Psi& psi) {
  return {{"control", to_json(psi.control)}, {"field", to_json(psi.field)}};
}

Psi psi_from_json(const nlohmann::json& j) {
  return {network_from_json(j.at("control")), network_from_json(j.at("field"))};
}

BoundPsi bind(ad::Tape& tape, const Psi& psi, bool control_trainable, bool field_trainable) {
  return {bind(tape, psi.control, control_trainable), bind(tape, psi.field, field_trainable)};
}

// ---------------------------------------------------------------------------

std::vector<Var> q_columns(const Var& field_out, const Var& S, const Diffusion& sigma) {
  std::vector<Var> seeds;
  const int n = sigma.driver_dim();
  seeds.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) seeds.push_back(sigma.column(j, S.cols()));
  return S.tape()->jvp(field_out, S, seeds);
}

Var hamiltonian(const ProblemSpec& spec, double t, const Var& S, const Var& A, const Var& P,
                std::span<const Var> Q) {
  Var h = ad::colsum(spec.drift(t, S, A) * P) + spec.running(t, S, A);
  if (!Q.empty()) {
    const Diffusion sigma = spec.diffusion(t, S, A);
    for (std::size_t j = 0; j < Q.size(); ++j)
      h = h + ad::colsum(sigma.column(static_cast<int>(j), S.cols()) * Q[j]);
  }
  return h;
}

Var grad_s_hamiltonian(const ProblemSpec& spec, double t, const Var& S, const Var& A, const Var& P,
                       std::span<const Var> Q) {
  Var g = spec.drift_jac_transpose(t, S, A, P) + spec.running_grad(t, S, A);
  if (spec.sigma_contraction && !Q.empty()) g = g + spec.sigma_contraction(t, S, A, Q);
  return broadcast_cols(g, S.cols());
}

// ---------------------------------------------------------------------------

namespace {

void check_point_shapes(const ProblemSpec& spec, const Vector& s, const Vector& a) {
  if (s.size() != spec.d) throw ad::ShapeError("state has size " + std::to_string(s.size()) +
                                               ", expected " + std::to_string(spec.d));
  if (a.size() != spec.m) throw ad::ShapeError("control has size " + std::to_string(a.size()) +
                                               ", expected " + std::to_string(spec.m));
}

void check_adjoint_shapes(const ProblemSpec& spec, const Vector& p, const Matrix& q) {
  if (p.size() != spec.d) throw ad::ShapeError("p has size " + std::to_string(p.size()));
  if (q.rows() != spec.d || q.cols() != spec.d_M)
    throw ad::ShapeError("q must be d x d_M, got " + std::to_string(q.rows()) + "x" +
                         std::to_string(q.cols()));
}

std::vector<Var> constant_columns(ad::Tape& tape, const Matrix& q) {
  std::vector<Var> cols;
  for (Index j = 0; j < q.cols(); ++j) cols.push_back(tape.constant(Matrix(q.col(j))));
  return cols;
}

}  // namespace

Matrix diffusion_matrix(const ProblemSpec& spec, double t, const Vector& s, const Vector& a) {
  check_point_shapes(spec, s, a);
  ad::Tape tape;
  const Diffusion sigma = spec.diffusion(t, tape.constant(Matrix(s)), tape.constant(Matrix(a)));
  Matrix out(spec.d, sigma.driver_dim());
  for (int j = 0; j < sigma.driver_dim(); ++j) out.col(j) = sigma.column(j, 1).value().col(0);
  return out;
}

double hamiltonian(const ProblemSpec& spec, double t, const Vector& s, const Vector& a,
                   const Vector& p, const Matrix& q) {
  check_point_shapes(spec, s, a);
  check_adjoint_shapes(spec, p, q);
  ad::Tape tape;
  const auto Q = constant_columns(tape, q);
  return hamiltonian(spec, t, tape.constant(Matrix(s)), tape.constant(Matrix(a)),
                     tape.constant(Matrix(p)), Q)
      .scalar();
}

Vector grad_s_hamiltonian(const ProblemSpec& spec, double t, const Vector& s, const Vector& a,
                          const Vector& p, const Matrix& q) {
  check_point_shapes(spec, s, a);
  check_adjoint_shapes(spec, p, q);
  ad::Tape tape;
  const auto Q = constant_columns(tape, q);
  return grad_s_hamiltonian(spec, t, tape.constant(Matrix(s)), tape.constant(Matrix(a)),
                            tape.constant(Matrix(p)), Q)
      .value()
      .col(0);
}

Matrix q_field(const Psi& psi, const ProblemSpec& spec, double t, const Vector& s) {
  const Vector a = forward(psi.control, t, s);
  return input_jacobian(psi.field, t, s) * diffusion_matrix(spec, t, s, a);
}

Vector NhoCoefficients::drift() const {
  Vector b(b_s.size() + b_p.size());
  b << b_s, b_p;
  return b;
}

Matrix NhoCoefficients::diffusion() const {
  Matrix sigma(sigma_block.rows() + q_block.rows(), sigma_block.cols());
  sigma << sigma_block, q_block;
  return sigma;
}

Matrix NhoCoefficients::generator_matrix(const Matrix& C) const {
  const Matrix sigma = diffusion();
  return sigma * C * sigma.transpose();
}

NhoCoefficients nho_coefficients(const Psi& psi, const ProblemSpec& spec, double t, const Vector& s) {
  const Vector a = forward(psi.control, t, s);
  const Vector p = forward(psi.field, t, s);
  NhoCoefficients c;
  c.sigma_block = diffusion_matrix(spec, t, s, a);
  c.q_block = input_jacobian(psi.field, t, s) * c.sigma_block;
  {
    ad::Tape tape;
    c.b_s = spec.drift(t, tape.constant(Matrix(s)), tape.constant(Matrix(a))).value().col(0);
  }
  c.b_p = -grad_s_hamiltonian(spec, t, s, a, p, c.q_block);
  return c;
}

double nho_apply(const Psi& psi, const ProblemSpec& spec, double t, const Vector& x,
                 const TestFunction& g) {
  if (x.size() != 2 * spec.d) throw ad::ShapeError("nho_apply: x must have size 2d");
  const NhoCoefficients c = nho_coefficients(psi, spec, t, x.head(spec.d));
  const Matrix D = c.generator_matrix(spec.quadratic_variation(t));
  return g.gradient(x).dot(c.drift()) + 0.5 * (D * g.hessian(x)).trace();
}

}  // namespace nho
