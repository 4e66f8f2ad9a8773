#pragma once

// Training objectives computed from a recorded rollout. Each function returns
// a 1 x 1 Var equal to the sum of per-path contributions divided by
// `normalizer`; with normalizer = batch size this is the batch mean, and the
// results of several path chunks add up to the mean over all of them.
//
// Time integrals use left-endpoint sums over the Euler grid, starting at
// `first_step` (a burn-in offset for stationary runs).

#include "nho/model.hpp"
#include "nho/simulator.hpp"

#include <iosfwd>
#include <string>

namespace nho {

enum class LossMode { FiniteHorizon, Ergodic };

struct LossReport {
  double terminal = 0.0;
  double grad_reg = 0.0;     // unweighted integral of E||grad_s Phi||_F^2
  double ergodic = 0.0;
  double lyapunov = 0.0;     // unweighted time average of the Lyapunov drift
  double hamiltonian = 0.0;  // mean Hamiltonian seen by the control update
  double total = 0.0;
  double lambda = 0.0;
  double lambda_lyap = 0.0;

  static std::string csv_header();
  /// iteration,terminal,grad_reg,ergodic,lyapunov,hamiltonian,total,lr
  std::string csv_row(long iteration, double lr) const;
};

/// terminal + lambda * grad_reg, or ergodic + lambda_lyap * lyapunov.
double loss_total(LossMode mode, const LossReport& r);

/// E||p_T - grad G(S_T)||^2.
ad::Var terminal_loss(const Trajectory& tr, const ProblemSpec& spec, double normalizer);

/// lambda * sum_i dt_i E||grad_s Phi(t_i, S_i)||_F^2. Needs a rollout with
/// jacobian_norms.
ad::Var gradient_regularizer(const Trajectory& tr, const TimeGrid& grid, double lambda, double normalizer);

/// Per path: time average of (H_i - Hbar)^2 with Hbar the path's time mean of
/// H_i = H(t_i, S_i, A_i, Phi_i, q_i). Needs a rollout with record_q.
ad::Var ergodic_loss(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step,
                     double normalizer);

/// The per-path values behind ergodic_loss, 1 x B.
ad::Var ergodic_rows(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step);

/// Per path: time average of 2 S^T mu + Tr(sigma C sigma^T), 1 x B.
ad::Var lyapunov_rows(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step);

/// weight * time average of 2 S^T mu + Tr(sigma C sigma^T).
ad::Var lyapunov_regularizer(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid,
                             int first_step, double weight, double normalizer);

/// Time average of H along the paths. The trace term is included only when
/// the trajectory carries q columns.
ad::Var mean_hamiltonian(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step,
                         double normalizer);

/// Time weights dt_i / (t_N - t_first) for i in [first_step, N).
std::vector<double> average_weights(const TimeGrid& grid, int first_step);

}  // namespace nho
