#pragma once

// Monte-Carlo evaluation of a trained control: values, slices through the
// state space, expected paths and stationary diagnostics.

#include "nho/model.hpp"
#include "nho/problems.hpp"
#include "nho/simulator.hpp"

#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

namespace nho {

struct EvalOptions {
  int steps = 0;  // 0 selects default_steps(horizon)
  int workers = 1;
  Eigen::Index chunk_paths = 4096;
};

/// Expected payoff from (t0, s0) under the learned control: left-endpoint
/// sum of the running payoff plus the terminal payoff, in the problem's
/// original sense (costs for minimization problems).
Estimate estimate_value(const Psi& psi, const ProblemSpec& spec, const Vector& s0, long batch,
                        std::uint64_t seed, const EvalOptions& opts = {}, double t0 = 0.0);

struct SliceRequest {
  int axis = 0;  // 0-based coordinate that varies
  double lo = -3.0;
  double hi = 3.0;
  int points = 101;
  Vector base;  // values of the other coordinates
  double t = 0.0;

  void validate(int d) const;
  double coordinate(int i) const { return lo + (hi - lo) * i / (points - 1); }
};

struct SliceRow {
  double coordinate = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  double reference_value = 0.0;  // NaN without a reference
  double control = 0.0;
  double reference_control = 0.0;  // NaN without a reference
};

/// Reference (value, control component along the slice axis) at a state.
using SliceReference = std::function<std::pair<double, double>(const Vector& s)>;

std::vector<SliceRow> value_slice(const Psi& psi, const ProblemSpec& spec, const SliceRequest& req, long batch,
                                  std::uint64_t seed, const SliceReference& reference = {},
                                  const EvalOptions& opts = {});

struct PathRow {
  double t = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

/// Per grid time, mean and standard deviation of one state coordinate.
std::vector<PathRow> expected_path(const Psi& psi, const ProblemSpec& spec, int coordinate, long batch,
                                   std::uint64_t seed, const InitialStates& initial, const EvalOptions& opts = {});

/// Mean over held-out paths of the time variance of H along each path,
/// over grid steps from first_step on.
Estimate hamiltonian_time_variance(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                                   const InitialStates& initial, long batch, std::uint64_t seed, int first_step,
                                   const EvalOptions& opts = {});

/// Mean over held-out paths of the time-averaged Lyapunov drift
/// 2 S^T mu + Tr(sigma C sigma^T), over grid steps from first_step on.
Estimate lyapunov_drift(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                        const InitialStates& initial, long batch, std::uint64_t seed, int first_step,
                        const EvalOptions& opts = {});

void write_slice_csv(std::ostream& out, const std::vector<SliceRow>& rows);
void write_path_csv(std::ostream& out, const std::vector<PathRow>& rows);

}  // namespace nho
