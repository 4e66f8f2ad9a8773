#include "nho/eval.hpp"

#include "nho/losses.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace nho {

using ad::Var;
using Eigen::Index;

namespace {

int eval_steps(const ProblemSpec& spec, const EvalOptions& opts) {
  return opts.steps > 0 ? opts.steps : default_steps(spec.horizon);
}

Estimate mean_and_error(const Matrix& rows) {
  const double n = static_cast<double>(rows.size());
  const double mean = rows.mean();
  if (rows.size() < 2) return {mean, 0.0};
  const double var = (rows.array() - mean).square().sum() / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

/// Runs `fn(first_path, n)` over fixed-size chunks and gathers the 1 x n
/// rows it returns into one 1 x batch row.
Matrix gather_rows(long batch, const EvalOptions& opts,
                   const std::function<Matrix(std::uint64_t, Index)>& fn) {
  if (batch < 1) throw std::invalid_argument("evaluation batch must be >= 1");
  const Index chunk = std::max<Index>(1, opts.chunk_paths);
  const int chunks = static_cast<int>((batch + chunk - 1) / chunk);
  Matrix out(1, batch);
  parallel_chunks(chunks, opts.workers, [&](int c) {
    const Index first = c * chunk;
    const Index n = std::min<Index>(chunk, batch - first);
    out.middleCols(first, n) = fn(static_cast<std::uint64_t>(first), n);
  });
  return out;
}

}  // namespace

Estimate estimate_value(const Psi& psi, const ProblemSpec& spec, const Vector& s0, long batch, std::uint64_t seed,
                        const EvalOptions& opts, double t0) {
  if (s0.size() != spec.d) throw ad::ShapeError("estimate_value: s0 has the wrong dimension");
  if (!(t0 >= 0.0 && t0 < spec.horizon)) throw std::invalid_argument("estimate_value: t0 must be in [0, T)");
  const int full = eval_steps(spec, opts);
  const int steps = std::max(1, static_cast<int>(std::lround(full * (spec.horizon - t0) / spec.horizon)));
  TimeGrid grid = TimeGrid::uniform(spec.horizon - t0, steps);
  for (double& t : grid.times) t += t0;
  const NoiseStream noise(seed, NoiseStream::Eval);

  const Matrix payoff = gather_rows(batch, opts, [&](std::uint64_t first, Index n) {
    const auto dM = sample_increments(spec.quadratic_variation, grid, first, n, noise);
    Matrix S = s0.replicate(1, n);
    Matrix total = Matrix::Zero(1, n);
    ad::Tape tape;
    for (int i = 0; i < steps; ++i) {
      const double t = grid.times[static_cast<std::size_t>(i)];
      const double dt = grid.dt(i);
      tape.clear();
      const BoundNetwork control = bind(tape, psi.control, false);
      const Var Sv = tape.constant(S);
      const Var A = control(t, Sv);
      const Var f = spec.running(t, Sv, A);
      const Var next = Sv + dt * spec.drift(t, Sv, A) +
                       spec.diffusion(t, Sv, A).apply(tape.constant(dM[static_cast<std::size_t>(i)]));
      total += dt * f.value();
      S = next.value();
      if (!S.allFinite()) {
        for (Index j = 0; j < n; ++j)
          if (!S.col(j).allFinite())
            throw NumericalFailure(static_cast<std::int64_t>(first) + j, i + 1, "non-finite state during evaluation");
      }
    }
    tape.clear();
    total += spec.terminal(tape.constant(S)).value();
    return total;
  });
  Estimate e = mean_and_error(payoff);
  if (spec.negated) e.value = -e.value;
  return e;
}

void SliceRequest::validate(int d) const {
  if (axis < 0 || axis >= d) throw std::invalid_argument("slice: axis out of range");
  if (!(lo < hi)) throw std::invalid_argument("slice: lo must be < hi");
  if (points < 2) throw std::invalid_argument("slice: need at least two points");
  if (base.size() != d) throw std::invalid_argument("slice: base state has the wrong dimension");
}

std::vector<SliceRow> value_slice(const Psi& psi, const ProblemSpec& spec, const SliceRequest& req, long batch,
                                  std::uint64_t seed, const SliceReference& reference, const EvalOptions& opts) {
  req.validate(spec.d);
  std::vector<SliceRow> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < req.points; ++i) {
    Vector s = req.base;
    s(req.axis) = req.coordinate(i);
    SliceRow row;
    row.coordinate = s(req.axis);
    const Estimate v = estimate_value(psi, spec, s, batch, seed, opts, req.t);
    row.value = v.value;
    row.std_error = v.std_error;
    row.control = forward(psi.control, req.t, s)(req.axis);
    row.reference_value = nan;
    row.reference_control = nan;
    if (reference) std::tie(row.reference_value, row.reference_control) = reference(s);
    rows.push_back(row);
  }
  return rows;
}

std::vector<PathRow> expected_path(const Psi& psi, const ProblemSpec& spec, int coordinate, long batch,
                                   std::uint64_t seed, const InitialStates& initial, const EvalOptions& opts) {
  if (coordinate < 0 || coordinate >= spec.d) throw std::invalid_argument("expected_path: coordinate out of range");
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, eval_steps(spec, opts));
  SimulateOptions so;
  so.workers = opts.workers;
  so.chunk_paths = opts.chunk_paths;
  const TrajectoryBatch tb = simulate(psi, spec, grid, initial, batch, NoiseStream(seed, NoiseStream::Eval), so);
  std::vector<PathRow> rows;
  for (std::size_t i = 0; i < tb.S.size(); ++i) {
    const Eigen::RowVectorXd x = tb.S[i].row(coordinate);
    const double mean = x.mean();
    const double var = batch > 1 ? (x.array() - mean).square().sum() / (static_cast<double>(batch) - 1.0) : 0.0;
    rows.push_back({grid.times[i], mean, std::sqrt(var)});
  }
  return rows;
}

namespace {

Matrix stationary_rows(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid, const InitialStates& initial,
                       long batch, std::uint64_t seed, const EvalOptions& opts,
                       const std::function<Var(const Trajectory&)>& rows_of) {
  const NoiseStream noise(seed, NoiseStream::Eval);
  return gather_rows(batch, opts, [&](std::uint64_t first, Index n) {
    const Matrix S0 = initial.sample(first, n, noise);
    const auto dM = sample_increments(spec.quadratic_variation, grid, first, n, noise);
    ad::Tape tape;
    const BoundPsi bound = bind(tape, psi, false, false);
    RolloutOptions ro;
    ro.record_q = true;
    ro.first_path = first;
    const Trajectory tr = rollout(tape, bound, spec, grid, S0, dM, ro);
    return Matrix(rows_of(tr).value());
  });
}

}  // namespace

Estimate hamiltonian_time_variance(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                                   const InitialStates& initial, long batch, std::uint64_t seed, int first_step,
                                   const EvalOptions& opts) {
  return mean_and_error(stationary_rows(psi, spec, grid, initial, batch, seed, opts, [&](const Trajectory& tr) {
    return ergodic_rows(tr, spec, grid, first_step);
  }));
}

Estimate lyapunov_drift(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid, const InitialStates& initial,
                        long batch, std::uint64_t seed, int first_step, const EvalOptions& opts) {
  return mean_and_error(stationary_rows(psi, spec, grid, initial, batch, seed, opts, [&](const Trajectory& tr) {
    return lyapunov_rows(tr, spec, grid, first_step);
  }));
}

void write_slice_csv(std::ostream& out, const std::vector<SliceRow>& rows) {
  out << "coordinate,value,std_error,reference_value,control,reference_control\n";
  out.precision(10);
  for (const SliceRow& r : rows)
    out << r.coordinate << ',' << r.value << ',' << r.std_error << ',' << r.reference_value << ',' << r.control << ','
        << r.reference_control << '\n';
}

void write_path_csv(std::ostream& out, const std::vector<PathRow>& rows) {
  out << "t,mean,std\n";
  out.precision(10);
  for (const PathRow& r : rows) out << r.t << ',' << r.mean << ',' << r.std << '\n';
}

}  // namespace nho
