#include "nho/problems.hpp"
#include "nho/simulator.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace nho;
using nho::testing::numeric_jacobian;
using nho::testing::relative_error;

TEST(Simulator, UniformGridAndValidation) {
  const TimeGrid g = TimeGrid::uniform(2.0, 4);
  EXPECT_EQ(g.steps(), 4);
  EXPECT_DOUBLE_EQ(g.dt(2), 0.5);
  EXPECT_DOUBLE_EQ(g.horizon(), 2.0);
  TimeGrid bad;
  bad.times = {0.0, 0.5, 0.5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_EQ(default_steps(1.0), 50);
  EXPECT_EQ(default_steps(0.5), 25);
  EXPECT_EQ(default_steps(0.001), 1);
}

TEST(Simulator, NoiseIsAddressedNotSequential) {
  const NoiseStream a(3, NoiseStream::Train, 5);
  EXPECT_EQ(a.normals(10, 2, 4), a.normals(10, 2, 4));
  EXPECT_NE(a.normals(10, 2, 4), a.normals(11, 2, 4));
  EXPECT_NE(a.normals(10, 2, 4), a.normals(10, 3, 4));
  EXPECT_NE(a.normals(10, 2, 4), a.with_epoch(6).normals(10, 2, 4));
  EXPECT_NE(a.normals(10, 2, 4), a.with_stream(NoiseStream::Eval).normals(10, 2, 4));
  EXPECT_NE(a.normals(10, 2, 4), NoiseStream(4, NoiseStream::Train, 5).normals(10, 2, 4));
}

TEST(Simulator, NormalsHaveGaussianMoments) {
  const NoiseStream n(1, NoiseStream::Test);
  const int count = 400000;
  Eigen::ArrayXd x(count);
  for (int i = 0; i < count / 4; ++i) x.segment(4 * i, 4) = n.normals(static_cast<std::uint64_t>(i), 0, 4).array();
  const double se = 1.0 / std::sqrt(static_cast<double>(count));
  EXPECT_LT(std::abs(x.mean()), 4 * se);
  EXPECT_LT(std::abs(x.square().mean() - 1.0), 4 * std::sqrt(2.0) * se);
  EXPECT_LT(std::abs(x.pow(4).mean() - 3.0), 4 * std::sqrt(96.0) * se);
  const double tail = (x.abs() > 1.959964).cast<double>().mean();
  EXPECT_LT(std::abs(tail - 0.05), 4 * std::sqrt(0.05 * 0.95) * se);
}

TEST(Simulator, SymmetricSquareRoot) {
  Matrix C(3, 3);
  C << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Matrix R = sym_sqrt(C);
  EXPECT_LT((R * R - C).norm(), 1e-12);
  EXPECT_LT((R - R.transpose()).norm(), 1e-14);
  Matrix indefinite(2, 2);
  indefinite << 1, 0, 0, -1;
  Matrix clipped(2, 2);
  clipped << 1, 0, 0, 0;
  EXPECT_LT((sym_sqrt(indefinite) - clipped).norm(), 1e-14);
  Matrix asym(2, 2);
  asym << 1, 0.1, 0, 1;
  EXPECT_THROW(sym_sqrt(asym), std::invalid_argument);
}

TEST(Simulator, CorrelatedIncrementCovariance) {
  Matrix C(2, 2);
  C << 2.0, 0.6, 0.6, 0.5;
  const TimeGrid grid = TimeGrid::uniform(0.04, 2);
  const long n = 200000;
  const auto inc = sample_increments([&](double) { return C; }, grid, 0, n, NoiseStream(8, NoiseStream::Test));
  ASSERT_EQ(inc.size(), 2u);
  for (const Matrix& X : inc) {
    const Matrix cov = X * X.transpose() / static_cast<double>(n);
    const Matrix target = 0.02 * C;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) / n);
        EXPECT_LT(std::abs(cov(i, j) - target(i, j)), 3.5 * se) << i << j;
      }
  }
}

TEST(Simulator, IncrementsDoNotDependOnChunking) {
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const auto C = [](double) { return Matrix::Identity(2, 2); };
  const NoiseStream noise(2, NoiseStream::Train, 4);
  const auto whole = sample_increments(C, grid, 0, 10, noise);
  const auto tail = sample_increments(C, grid, 6, 4, noise);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(whole[static_cast<std::size_t>(i)].rightCols(4), tail[static_cast<std::size_t>(i)]);
}

TEST(Simulator, InitialAdjointIsTheFieldExactly) {
  const ProblemSpec spec = make_problem({"p3-liquidation", 3, {}});
  const Psi psi = make_psi(spec, {6, 6}, 2);
  const InitialStates init{spec.s0, 0.3};
  const NoiseStream noise(4, NoiseStream::Train);
  const TrajectoryBatch tb = simulate(psi, spec, TimeGrid::uniform(1.0, 4), init, 20, noise);
  EXPECT_TRUE(tb.P[0].cwiseEqual(forward_batch(psi.field, 0.0, init.sample(0, 20, noise))).all());
}

TEST(Simulator, OneStepMatchesHandWrittenUpdate) {
  const ProblemSpec spec = make_problem({"p2-double-well", 2, {}});
  Psi psi = make_psi(spec, {6, 6}, 5);
  psi.field.bias(0).setConstant(0.1);
  const Vector s = Vector::LinSpaced(2, 0.3, -0.6);
  const double h = 0.05;
  const TimeGrid grid = TimeGrid::uniform(h, 1);
  const TrajectoryBatch tb = simulate(psi, spec, grid, {s, 0.0}, 3, NoiseStream(6, NoiseStream::Test));
  const Vector a = forward(psi.control, 0.0, s);
  const Vector phi = forward(psi.field, 0.0, s);
  const Matrix J = numeric_jacobian([&](const Vector& x) { return forward(psi.field, 0.0, x); }, s);
  const Matrix sigma = std::sqrt(2.0) * Matrix::Identity(2, 2);
  const Vector gradU = (s.array().cube() - s.array()).matrix() / 2.0;
  const Vector gH = grad_s_hamiltonian(spec, 0.0, s, a, phi, J * sigma);
  for (int j = 0; j < 3; ++j) {
    const Vector dM = tb.increments[0].col(j);
    const Vector s1 = s + h * (a - gradU) + sigma * dM;
    const Vector p1 = phi - h * gH + J * sigma * dM;
    EXPECT_LT((tb.S[1].col(j) - s1).norm(), 1e-13);
    EXPECT_LT((tb.P[1].col(j) - p1).norm(), 1e-7);
  }
}

TEST(Simulator, AdjointIsAMartingaleWhenTheDriftIgnoresTheState) {
  // terminal-log has grad_s H = 0, so p changes only through q dM
  const ProblemSpec spec = make_problem({"p1-terminal-log", 2, {}});
  const Psi psi = make_psi(spec, {6, 6}, 9);
  const long n = 20000;
  const TrajectoryBatch tb =
      simulate(psi, spec, TimeGrid::uniform(1.0, 10), {spec.s0, 0.0}, n, NoiseStream(1, NoiseStream::Test));
  const Matrix diff = tb.P.back() - tb.P.front();
  for (int k = 0; k < 2; ++k) {
    const Eigen::ArrayXd x = diff.row(k).transpose().array();
    const double se = std::sqrt((x - x.mean()).square().sum() / (n - 1.0) / n);
    EXPECT_LT(std::abs(x.mean()), 4 * se);
  }
}

TEST(Simulator, WorkerCountDoesNotChangeResults) {
  const ProblemSpec spec = make_problem({"p2-double-well", 3, {}});
  const Psi psi = make_psi(spec, {6, 6}, 1);
  const TimeGrid grid = TimeGrid::uniform(0.5, 8);
  const NoiseStream noise(3, NoiseStream::Train, 2);
  const auto a = simulate(psi, spec, grid, {spec.s0, 0.5}, 70, noise, {1, 16, true});
  const auto b = simulate(psi, spec, grid, {spec.s0, 0.5}, 70, noise, {4, 16, true});
  EXPECT_EQ(a.S, b.S);
  EXPECT_EQ(a.P, b.P);
  EXPECT_EQ(a.jacobian_sq, b.jacobian_sq);
}

TEST(Simulator, BlowUpAbortsNamingThePath) {
  const ProblemSpec spec = make_problem({"p2-double-well", 1, {}});
  const Psi psi = make_psi(spec, {4}, 1);
  const TimeGrid grid = TimeGrid::uniform(0.5, 5);
  Matrix S0 = Matrix::Zero(1, 5);
  S0(0, 3) = 1e120;
  const auto dM = sample_increments(spec.quadratic_variation, grid, 0, 5, NoiseStream(1, NoiseStream::Test));
  ad::Tape tape;
  const BoundPsi bound = bind(tape, psi, false, false);
  RolloutOptions ro;
  ro.first_path = 100;
  try {
    rollout(tape, bound, spec, grid, S0, dM, ro);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_EQ(e.path(), 103);
    EXPECT_GE(e.step(), 0);
  }
}

TEST(Simulator, TrajectoryCsvHasOneRowPerPathAndTime) {
  const ProblemSpec spec = make_problem({"p1-terminal-log", 2, {}});
  const Psi psi = make_psi(spec, {4}, 1);
  const TrajectoryBatch tb =
      simulate(psi, spec, TimeGrid::uniform(1.0, 3), {spec.s0, 0.0}, 2, NoiseStream(1, NoiseStream::Test));
  std::ostringstream os;
  write_trajectory_csv(os, tb);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "path,t,s_1,s_2,p_1,p_2");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2 * 4);
}
