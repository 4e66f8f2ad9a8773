#pragma once

// Control-problem contract and the coefficients of the extended-state
// operator built from a control network and a decoupling-field network.
//
// Problem callables are batched: states S are d x B, controls A are m x B,
// adjoints P are d x B, and scalar fields return 1 x B rows. A callable may
// return a d x 1 column where the value is the same for every path.

#include "nho/autodiff.hpp"
#include "nho/network.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nho {

enum class Sense { Maximize, Minimize };

/// sigma(t, s, a) for a batch: either a diagonal (d_M == d) or explicit
/// columns, each d x B or d x 1.
struct Diffusion {
  ad::Var diagonal;
  std::vector<ad::Var> columns;

  bool is_diagonal() const { return diagonal.valid(); }
  int driver_dim() const;
  /// sigma * dM for increments dM (d_M x B).
  ad::Var apply(const ad::Var& increments) const;
  /// Column j of sigma, broadcast to d x batch.
  ad::Var column(int j, Eigen::Index batch) const;
};

using StateFn = std::function<ad::Var(double t, const ad::Var& S, const ad::Var& A)>;
using TerminalFn = std::function<ad::Var(const ad::Var& S)>;

struct ProblemSpec {
  std::string name;
  int d = 1;
  int d_M = 1;
  int m = 1;
  double horizon = 1.0;
  Sense sense = Sense::Maximize;
  /// True once a minimization problem has been rewritten as a maximization.
  bool negated = false;
  ControlBounds bounds;
  Vector s0;
  bool stationary = false;
  bool sigma_depends_on_state = false;
  bool sigma_depends_on_control = false;

  StateFn drift;                                    // d x B
  std::function<Diffusion(double, const ad::Var&, const ad::Var&)> diffusion;
  StateFn running;                                  // 1 x B
  TerminalFn terminal;                              // 1 x B
  TerminalFn terminal_grad;                         // d x B
  /// (grad_s mu)^T p, d x B.
  std::function<ad::Var(double, const ad::Var& S, const ad::Var& A, const ad::Var& P)>
      drift_jac_transpose;
  StateFn running_grad;                             // d x B
  /// Tr((grad_s sigma)^T q) componentwise for q given by its d_M columns.
  /// Empty when sigma does not depend on the state.
  std::function<ad::Var(double, const ad::Var& S, const ad::Var& A, std::span<const ad::Var> Q)>
      sigma_contraction;
  std::function<Matrix(double t)> quadratic_variation;  // d_M x d_M

  void validate() const;
};

/// Minimization problems become maximization problems with negated running
/// and terminal payoffs (and their gradients). Maximization specs pass through.
ProblemSpec to_maximization(ProblemSpec spec);

/// The trainable pair: feedback control and decoupling field.
struct Psi {
  NetworkParams control;
  NetworkParams field;
};

/// max(1, max_i |grad G(s0)_i|): the field's output scale, so its layers
/// fit adjoints of order one whatever the size of the terminal penalty.
double field_output_scale(const ProblemSpec& spec);

/// Control network (box-bounded, m outputs) and field network (identity,
/// d outputs scaled by field_output_scale, last layer initialized divided by
/// it) for `spec`, seeded from `seed` and `seed + 1`.
Psi make_psi(const ProblemSpec& spec, const std::vector<int>& hidden_widths, std::uint64_t seed);

nlohmann::json to_json(const Psi& psi);
Psi psi_from_json(const nlohmann::json& j);

struct BoundPsi {
  BoundNetwork control;
  BoundNetwork field;
};

BoundPsi bind(ad::Tape& tape, const Psi& psi, bool control_trainable, bool field_trainable);

// ---------------------------------------------------------------------------
// Batched building blocks on a tape.

/// Columns of q = (grad_s Phi) sigma, one d x B Var per driver component.
/// `field_out` must have been computed from `S` on the same tape.
std::vector<ad::Var> q_columns(const ad::Var& field_out, const ad::Var& S, const Diffusion& sigma);

/// mu^T p + Tr(sigma^T q) + f, as a 1 x B row. Q may be empty when sigma is
/// zero or the trace term is not wanted.
ad::Var hamiltonian(const ProblemSpec& spec, double t, const ad::Var& S, const ad::Var& A,
                    const ad::Var& P, std::span<const ad::Var> Q);

/// (grad_s mu)^T p + Tr((grad_s sigma)^T q) + grad_s f, d x B.
ad::Var grad_s_hamiltonian(const ProblemSpec& spec, double t, const ad::Var& S, const ad::Var& A,
                           const ad::Var& P, std::span<const ad::Var> Q);

// ---------------------------------------------------------------------------
// Single-point evaluation.

/// sigma(t, s, a) as a dense d x d_M matrix.
Matrix diffusion_matrix(const ProblemSpec& spec, double t, const Vector& s, const Vector& a);

double hamiltonian(const ProblemSpec& spec, double t, const Vector& s, const Vector& a,
                   const Vector& p, const Matrix& q);
Vector grad_s_hamiltonian(const ProblemSpec& spec, double t, const Vector& s, const Vector& a,
                          const Vector& p, const Matrix& q);

/// (grad_s Phi_xi) sigma(t, s, alpha_omega(t, s)), d x d_M.
Matrix q_field(const Psi& psi, const ProblemSpec& spec, double t, const Vector& s);

struct NhoCoefficients {
  Vector b_s;
  Vector b_p;
  Matrix sigma_block;
  Matrix q_block;

  /// (b_s, b_p) stacked.
  Vector drift() const;
  /// sigma_block stacked over q_block, 2d x d_M.
  Matrix diffusion() const;
  /// Sigma C Sigma^T, 2d x 2d.
  Matrix generator_matrix(const Matrix& C) const;
};

NhoCoefficients nho_coefficients(const Psi& psi, const ProblemSpec& spec, double t, const Vector& s);

struct TestFunction {
  std::function<Vector(const Vector&)> gradient;
  std::function<Matrix(const Vector&)> hessian;
};

/// grad g(x)^T b + 1/2 Tr(D grad^2 g(x)) with coefficients taken at the state
/// part of x = (s, p).
double nho_apply(const Psi& psi, const ProblemSpec& spec, double t, const Vector& x,
                 const TestFunction& g);

}  // namespace nho
