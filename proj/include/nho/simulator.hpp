#pragma once

// Euler-Maruyama rollout of the extended state (S, p) under the operator
// built from a control and a decoupling-field network, with counter-based
// Gaussian increments.

#include "nho/autodiff.hpp"
#include "nho/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace nho {

struct TimeGrid {
  std::vector<double> times;

  static TimeGrid uniform(double horizon, int steps);
  int steps() const { return static_cast<int>(times.size()) - 1; }
  double dt(int i) const { return times[static_cast<std::size_t>(i) + 1] - times[static_cast<std::size_t>(i)]; }
  double horizon() const { return times.back(); }
  void validate() const;
};

/// Uniform grid with 50 steps per unit time (at least one step).
int default_steps(double horizon);

/// Independent standard normals addressed by (seed, stream, epoch, path,
/// step). The same address always yields the same numbers, whatever order
/// or thread asks for them.
class NoiseStream {
 public:
  enum Stream : std::uint64_t { Train = 1, Eval = 2, Initial = 3, Test = 4 };

  NoiseStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch = 0)
      : seed_(seed), stream_(stream), epoch_(epoch) {}

  NoiseStream with_epoch(std::uint64_t epoch) const { return {seed_, stream_, epoch}; }
  NoiseStream with_stream(std::uint64_t stream) const { return {seed_, stream, epoch_}; }

  /// n standard normals for one (path, step) address.
  void fill(std::uint64_t path, std::uint64_t step, double* out, int n) const;
  Vector normals(std::uint64_t path, std::uint64_t step, int n) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t epoch_;
};

/// Symmetric square root with negative eigenvalues clipped to zero.
/// Throws std::invalid_argument when C is not symmetric within 1e-12.
Matrix sym_sqrt(const Matrix& C);

using QuadraticVariation = std::function<Matrix(double t)>;

/// Increments sqrt(dt_i) C(t_i)^{1/2} eps for paths [first_path,
/// first_path + batch); one d_M x batch matrix per step.
std::vector<Matrix> sample_increments(const QuadraticVariation& C, const TimeGrid& grid,
                                      std::uint64_t first_path, Eigen::Index batch,
                                      const NoiseStream& noise);

/// Point mass at `center` plus an optional isotropic Gaussian cloud.
struct InitialStates {
  Vector center;
  double std = 0.0;

  Matrix sample(std::uint64_t first_path, Eigen::Index batch, const NoiseStream& noise) const;
};

class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(std::int64_t path, int step, const std::string& what);
  std::int64_t path() const { return path_; }
  int step() const { return step_; }

 private:
  std::int64_t path_;
  int step_;
};

struct RolloutOptions {
  /// Record per-step ||grad_s Phi||_F^2 per path (needs d extra tangents).
  bool jacobian_norms = false;
  /// Record the q columns at every step.
  bool record_q = false;
  /// Ablation: drop the q dM term from the adjoint update.
  bool drop_q_increment = false;
  std::uint64_t first_path = 0;
};

/// A rollout recorded on a tape. Index i refers to grid time t_i; A, Phi,
/// jacobian_sq and Q are defined for i < N, S and P for i <= N.
struct Trajectory {
  std::vector<ad::Var> S;
  std::vector<ad::Var> P;
  std::vector<ad::Var> A;
  std::vector<ad::Var> Phi;
  std::vector<ad::Var> jacobian_sq;  // 1 x B
  std::vector<std::vector<ad::Var>> Q;
};

Trajectory rollout(ad::Tape& tape, const BoundPsi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                   const Matrix& S0, const std::vector<Matrix>& increments, const RolloutOptions& opts);

/// Plain values of a rollout batch.
struct TrajectoryBatch {
  TimeGrid grid;
  std::vector<Matrix> S;          // N + 1 entries, d x B
  std::vector<Matrix> P;          // N + 1 entries, d x B
  std::vector<Matrix> A;          // N entries, m x B
  std::vector<Matrix> Phi;        // N entries, d x B
  std::vector<Matrix> increments; // N entries, d_M x B
  std::vector<Matrix> jacobian_sq;  // N entries, 1 x B (when requested)

  Eigen::Index batch() const { return S.empty() ? 0 : S.front().cols(); }
};

struct SimulateOptions {
  int workers = 1;
  Eigen::Index chunk_paths = 64;
  bool jacobian_norms = false;
};

/// Values-only rollout of `batch` paths, split into fixed chunks that may be
/// simulated concurrently. Results do not depend on the worker count.
TrajectoryBatch simulate(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                         const InitialStates& initial, Eigen::Index batch, const NoiseStream& noise,
                         const SimulateOptions& opts = {});

/// Runs fn(chunk_index) for chunk_index in [0, chunks) on `workers` threads.
/// Exceptions are rethrown in chunk order after all workers finish.
void parallel_chunks(int chunks, int workers, const std::function<void(int)>& fn);

/// One row per (path, grid point): path,t,s_1..s_d,p_1..p_d.
void write_trajectory_csv(std::ostream& out, const TrajectoryBatch& batch);

}  // namespace nho
