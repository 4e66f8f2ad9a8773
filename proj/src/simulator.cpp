#include "nho/simulator.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace nho {

using ad::Var;
using Eigen::Index;

TimeGrid TimeGrid::uniform(double horizon, int steps) {
  if (!(horizon > 0.0) || steps < 1) throw std::invalid_argument("time grid: need horizon > 0 and steps >= 1");
  TimeGrid g;
  g.times.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) g.times[static_cast<std::size_t>(i)] = horizon * i / steps;
  g.times.back() = horizon;
  return g;
}

void TimeGrid::validate() const {
  if (times.size() < 2) throw std::invalid_argument("time grid: need at least two points");
  if (times.front() != 0.0) throw std::invalid_argument("time grid: must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("time grid: not strictly increasing");
}

int default_steps(double horizon) { return std::max(1, static_cast<int>(std::lround(50.0 * horizon))); }

// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterEngine {
 public:
  using result_type = std::uint64_t;
  explicit CounterEngine(std::uint64_t key) : state_(key) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

 private:
  std::uint64_t state_;
};

}  // namespace

void NoiseStream::fill(std::uint64_t path, std::uint64_t step, double* out, int n) const {
  std::uint64_t key = mix64(seed_ + 0x9E3779B97F4A7C15ULL);
  key = mix64(key ^ stream_);
  key = mix64(key ^ epoch_);
  key = mix64(key ^ path);
  key = mix64(key ^ step);
  CounterEngine engine(key);
  std::normal_distribution<double> normal;
  for (int i = 0; i < n; ++i) out[i] = normal(engine);
}

Vector NoiseStream::normals(std::uint64_t path, std::uint64_t step, int n) const {
  Vector v(n);
  fill(path, step, v.data(), n);
  return v;
}

Matrix sym_sqrt(const Matrix& C) {
  if (C.rows() != C.cols()) throw std::invalid_argument("sym_sqrt: matrix is not square");
  const double asym = (C - C.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) {
    std::ostringstream os;
    os << "quadratic variation matrix is not symmetric (max asymmetry " << asym << ")";
    throw std::invalid_argument(os.str());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(C);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<Matrix> sample_increments(const QuadraticVariation& C, const TimeGrid& grid,
                                      std::uint64_t first_path, Index batch, const NoiseStream& noise) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(grid.steps()));
  Matrix eps, last_c, root;
  for (int i = 0; i < grid.steps(); ++i) {
    const Matrix c = C(grid.times[static_cast<std::size_t>(i)]);
    if (c.rows() != last_c.rows() || c.cols() != last_c.cols() || c != last_c) {
      root = sym_sqrt(c);
      last_c = c;
    }
    const Index dm = root.rows();
    eps.resize(dm, batch);
    for (Index j = 0; j < batch; ++j)
      noise.fill(first_path + static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i),
                 eps.col(j).data(), static_cast<int>(dm));
    out.push_back(std::sqrt(grid.dt(i)) * (root * eps));
  }
  return out;
}

Matrix InitialStates::sample(std::uint64_t first_path, Index batch, const NoiseStream& noise) const {
  Matrix S = center.replicate(1, batch);
  if (std::isnan(std) || std < 0.0) throw std::invalid_argument("initial states: std must be >= 0");
  if (std == 0.0) return S;
  const NoiseStream stream = noise.with_stream(NoiseStream::Initial);
  Vector eps(center.size());
  for (Index j = 0; j < batch; ++j) {
    stream.fill(first_path + static_cast<std::uint64_t>(j), 0, eps.data(), static_cast<int>(eps.size()));
    S.col(j) += std * eps;
  }
  return S;
}

NumericalFailure::NumericalFailure(std::int64_t path, int step, const std::string& what)
    : std::runtime_error(what), path_(path), step_(step) {}

// ---------------------------------------------------------------------------

namespace {

void check_finite(const Matrix& S, const Matrix& P, std::uint64_t first_path, int step) {
  if (S.allFinite() && P.allFinite()) return;
  for (Index j = 0; j < S.cols(); ++j) {
    if (!S.col(j).allFinite() || !P.col(j).allFinite()) {
      const auto path = static_cast<std::int64_t>(first_path) + j;
      std::ostringstream os;
      os << "non-finite state on path " << path << " at step " << step;
      throw NumericalFailure(path, step, os.str());
    }
  }
}

}  // namespace

Trajectory rollout(ad::Tape& tape, const BoundPsi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                   const Matrix& S0, const std::vector<Matrix>& increments, const RolloutOptions& opts) {
  const int N = grid.steps();
  if (static_cast<int>(increments.size()) != N)
    throw std::invalid_argument("rollout: need one increment matrix per step");
  if (S0.rows() != spec.d) throw ad::ShapeError("rollout: initial states must have d rows");
  const Index B = S0.cols();
  const bool need_q = opts.record_q || spec.sigma_depends_on_state;

  Trajectory tr;
  Var S = tape.constant(S0);
  Var P;
  for (int i = 0; i < N; ++i) {
    const double t = grid.times[static_cast<std::size_t>(i)];
    const double dt = grid.dt(i);
    const Var A = psi.control(t, S);
    const Var Phi = psi.field(t, S);
    if (i == 0) P = Phi;
    check_finite(S.value(), P.value(), opts.first_path, i);
    tr.S.push_back(S);
    tr.P.push_back(P);
    tr.A.push_back(A);
    tr.Phi.push_back(Phi);

    const Diffusion sigma = spec.diffusion(t, S, A);
    const Var sdM = sigma.apply(tape.constant(increments[static_cast<std::size_t>(i)]));

    std::vector<Var> Q;
    if (need_q) Q = q_columns(Phi, S, sigma);
    if (opts.record_q) tr.Q.push_back(Q);
    if (opts.jacobian_norms) {
      std::vector<Var> seeds;
      for (int k = 0; k < spec.d; ++k) {
        Matrix e = Matrix::Zero(spec.d, B);
        e.row(k).setOnes();
        seeds.push_back(tape.constant(std::move(e)));
      }
      Var total;
      for (const Var& col : tape.jvp(Phi, S, seeds)) {
        Var sq = ad::colsum(ad::square(col));
        total = total.valid() ? total + sq : sq;
      }
      tr.jacobian_sq.push_back(total);
    }

    const Var gH = grad_s_hamiltonian(spec, t, S, A, Phi, Q);
    Var P_next = P - dt * gH;
    if (!opts.drop_q_increment) {
      const Var qdM = tape.jvp(Phi, S, std::span<const Var>(&sdM, 1)).front();
      P_next = P_next + qdM;
    }
    S = S + dt * spec.drift(t, S, A) + sdM;
    P = P_next;
  }
  check_finite(S.value(), P.value(), opts.first_path, N);
  tr.S.push_back(S);
  tr.P.push_back(P);
  return tr;
}

void parallel_chunks(int chunks, int workers, const std::function<void(int)>& fn) {
  if (chunks <= 0) return;
  workers = std::max(1, std::min(workers, chunks));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  auto run = [&](int w) {
    for (int c = w; c < chunks; c += workers) {
      try {
        fn(c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& th : threads) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrajectoryBatch simulate(const Psi& psi, const ProblemSpec& spec, const TimeGrid& grid,
                         const InitialStates& initial, Index batch, const NoiseStream& noise,
                         const SimulateOptions& opts) {
  grid.validate();
  if (batch < 1) throw std::invalid_argument("simulate: batch must be >= 1");
  const int N = grid.steps();
  const Index chunk = std::max<Index>(1, opts.chunk_paths);
  const int chunks = static_cast<int>((batch + chunk - 1) / chunk);

  TrajectoryBatch out;
  out.grid = grid;
  auto alloc = [](std::vector<Matrix>& v, int n, Index rows, Index cols) {
    v.assign(static_cast<std::size_t>(n), Matrix(rows, cols));
  };
  alloc(out.S, N + 1, spec.d, batch);
  alloc(out.P, N + 1, spec.d, batch);
  alloc(out.A, N, spec.m, batch);
  alloc(out.Phi, N, spec.d, batch);
  alloc(out.increments, N, spec.d_M, batch);
  if (opts.jacobian_norms) alloc(out.jacobian_sq, N, 1, batch);

  parallel_chunks(chunks, opts.workers, [&](int c) {
    const Index first = c * chunk;
    const Index n = std::min(chunk, batch - first);
    const auto first_path = static_cast<std::uint64_t>(first);
    const Matrix S0 = initial.sample(first_path, n, noise);
    const auto dM = sample_increments(spec.quadratic_variation, grid, first_path, n, noise);
    ad::Tape tape;
    const BoundPsi bound = bind(tape, psi, false, false);
    RolloutOptions ro;
    ro.jacobian_norms = opts.jacobian_norms;
    ro.first_path = first_path;
    const Trajectory tr = rollout(tape, bound, spec, grid, S0, dM, ro);
    for (int i = 0; i <= N; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out.S[k].middleCols(first, n) = tr.S[k].value();
      out.P[k].middleCols(first, n) = tr.P[k].value();
      if (i == N) break;
      out.A[k].middleCols(first, n) = tr.A[k].value();
      out.Phi[k].middleCols(first, n) = tr.Phi[k].value();
      out.increments[k].middleCols(first, n) = dM[k];
      if (opts.jacobian_norms) out.jacobian_sq[k].middleCols(first, n) = tr.jacobian_sq[k].value();
    }
  });
  return out;
}

void write_trajectory_csv(std::ostream& out, const TrajectoryBatch& batch) {
  if (batch.S.empty()) return;
  const Index d = batch.S.front().rows();
  out << "path,t";
  for (Index k = 1; k <= d; ++k) out << ",s_" << k;
  for (Index k = 1; k <= d; ++k) out << ",p_" << k;
  out << '\n';
  out.precision(17);
  for (Index j = 0; j < batch.batch(); ++j) {
    for (std::size_t i = 0; i < batch.S.size(); ++i) {
      out << j << ',' << batch.grid.times[i];
      for (Index k = 0; k < d; ++k) out << ',' << batch.S[i](k, j);
      for (Index k = 0; k < d; ++k) out << ',' << batch.P[i](k, j);
      out << '\n';
    }
  }
}

}  // namespace nho
