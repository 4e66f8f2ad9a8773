#include "nho/losses.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace nho {

using ad::Var;

std::string LossReport::csv_header() {
  return "iteration,terminal,grad_reg,ergodic,lyapunov,hamiltonian,total,lr";
}

std::string LossReport::csv_row(long iteration, double lr) const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", iteration, terminal, grad_reg,
                ergodic, lyapunov, hamiltonian, total, lr);
  return buf;
}

double loss_total(LossMode mode, const LossReport& r) {
  if (mode == LossMode::FiniteHorizon) return r.terminal + r.lambda * r.grad_reg;
  return r.ergodic + r.lambda_lyap * r.lyapunov;
}

std::vector<double> average_weights(const TimeGrid& grid, int first_step) {
  const int N = grid.steps();
  if (first_step < 0 || first_step >= N) throw std::invalid_argument("time average: first step out of range");
  const double span = grid.horizon() - grid.times[static_cast<std::size_t>(first_step)];
  std::vector<double> w;
  for (int i = first_step; i < N; ++i) w.push_back(grid.dt(i) / span);
  return w;
}

namespace {

Var accumulate(Var acc, const Var& term) { return acc.valid() ? acc + term : term; }

void require_steps(const Trajectory& tr, const TimeGrid& grid) {
  if (static_cast<int>(tr.A.size()) != grid.steps())
    throw std::invalid_argument("loss: trajectory does not match the time grid");
}

}  // namespace

Var terminal_loss(const Trajectory& tr, const ProblemSpec& spec, double normalizer) {
  const Var& S = tr.S.back();
  const Var residual = tr.P.back() - spec.terminal_grad(S);
  return (1.0 / normalizer) * ad::squared_norm(residual);
}

Var gradient_regularizer(const Trajectory& tr, const TimeGrid& grid, double lambda, double normalizer) {
  require_steps(tr, grid);
  if (static_cast<int>(tr.jacobian_sq.size()) != grid.steps())
    throw std::invalid_argument("gradient regularizer: rollout has no Jacobian norms");
  Var acc;
  for (int i = 0; i < grid.steps(); ++i)
    acc = accumulate(acc, grid.dt(i) * ad::sum(tr.jacobian_sq[static_cast<std::size_t>(i)]));
  return (lambda / normalizer) * acc;
}

namespace {

std::vector<Var> hamiltonian_rows(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid,
                                  int first_step, bool require_q) {
  require_steps(tr, grid);
  const bool have_q = static_cast<int>(tr.Q.size()) == grid.steps();
  if (require_q && !have_q) throw std::invalid_argument("hamiltonian: rollout has no q columns");
  std::vector<Var> rows;
  for (int i = first_step; i < grid.steps(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::span<const Var> Q;
    if (have_q) Q = tr.Q[k];
    rows.push_back(hamiltonian(spec, grid.times[k], tr.S[k], tr.A[k], tr.Phi[k], Q));
  }
  return rows;
}

}  // namespace

Var ergodic_rows(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step) {
  const auto w = average_weights(grid, first_step);
  const auto H = hamiltonian_rows(tr, spec, grid, first_step, true);
  Var mean;
  for (std::size_t i = 0; i < H.size(); ++i) mean = accumulate(mean, w[i] * H[i]);
  Var var;
  for (std::size_t i = 0; i < H.size(); ++i) var = accumulate(var, w[i] * ad::square(H[i] - mean));
  return var;
}

Var ergodic_loss(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step,
                 double normalizer) {
  return (1.0 / normalizer) * ad::sum(ergodic_rows(tr, spec, grid, first_step));
}

Var lyapunov_rows(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step) {
  require_steps(tr, grid);
  const auto w = average_weights(grid, first_step);
  Var acc;
  for (int i = first_step; i < grid.steps(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double t = grid.times[k];
    const Var& S = tr.S[k];
    const Var& A = tr.A[k];
    Var drift = 2.0 * ad::colsum(S * spec.drift(t, S, A));
    // Tr(sigma C sigma^T) = sum_jl C_jl sigma_j . sigma_l
    const Diffusion sigma = spec.diffusion(t, S, A);
    const Matrix C = spec.quadratic_variation(t);
    const int dm = sigma.driver_dim();
    for (int j = 0; j < dm; ++j) {
      for (int l = 0; l < dm; ++l) {
        if (C(j, l) == 0.0) continue;
        drift = drift + C(j, l) * ad::colsum(sigma.column(j, S.cols()) * sigma.column(l, S.cols()));
      }
    }
    acc = accumulate(acc, w[static_cast<std::size_t>(i - first_step)] * drift);
  }
  return acc;
}

Var lyapunov_regularizer(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step,
                         double weight, double normalizer) {
  return (weight / normalizer) * ad::sum(lyapunov_rows(tr, spec, grid, first_step));
}

Var mean_hamiltonian(const Trajectory& tr, const ProblemSpec& spec, const TimeGrid& grid, int first_step,
                     double normalizer) {
  const auto w = average_weights(grid, first_step);
  const auto H = hamiltonian_rows(tr, spec, grid, first_step, false);
  Var acc;
  for (std::size_t i = 0; i < H.size(); ++i) acc = accumulate(acc, w[i] * ad::sum(H[i]));
  return (1.0 / normalizer) * acc;
}

}  // namespace nho
