#include "nho/losses.hpp"
#include "nho/problems.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nho;
using ad::Var;

namespace {

// A trajectory of fixed values on `tape`: S_i = s_i, P_i = p_i etc. for a
// 1-D problem, one column per path.
Trajectory fixed_trajectory(ad::Tape& tape, const std::vector<Matrix>& S, const std::vector<Matrix>& P,
                            const std::vector<Matrix>& A, const std::vector<Matrix>& Phi,
                            const std::vector<Matrix>& Q = {}) {
  Trajectory tr;
  for (const Matrix& m : S) tr.S.push_back(tape.constant(m));
  for (const Matrix& m : P) tr.P.push_back(tape.constant(m));
  for (const Matrix& m : A) tr.A.push_back(tape.constant(m));
  for (const Matrix& m : Phi) tr.Phi.push_back(tape.constant(m));
  for (const Matrix& m : Q) tr.Q.push_back({tape.constant(m)});
  return tr;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

}  // namespace

TEST(Losses, TerminalLossMatchesHandComputation) {
  const ProblemSpec spec = make_problem({"p1-terminal-log", 2, {}});
  ad::Tape tape;
  Matrix S(2, 2), P(2, 2);
  S << 1, 0, 2, -1;
  P << 0.5, 0, 0, 1;
  Trajectory tr;
  tr.S = {tape.constant(S)};
  tr.P = {tape.constant(P)};
  double want = 0.0;
  for (int j = 0; j < 2; ++j) {
    const Eigen::Vector2d s = S.col(j);
    const Eigen::Vector2d g = 2.0 * s / (1.0 + s.squaredNorm());
    want += (P.col(j) - g).squaredNorm();
  }
  EXPECT_NEAR(terminal_loss(tr, spec, 2.0).scalar(), want / 2.0, 1e-14);
}

TEST(Losses, ChunkContributionsAddUpToTheBatchMean) {
  const ProblemSpec spec = make_problem({"p3-liquidation", 1, {}});
  ad::Tape tape;
  const Matrix S = row({0.1, -0.2, 0.4, 0.05}), P = row({1.0, 2.0, -1.0, 0.5});
  Trajectory all, left, right;
  all.S = {tape.constant(S)};
  all.P = {tape.constant(P)};
  left.S = {tape.constant(Matrix(S.leftCols(1)))};
  left.P = {tape.constant(Matrix(P.leftCols(1)))};
  right.S = {tape.constant(Matrix(S.rightCols(3)))};
  right.P = {tape.constant(Matrix(P.rightCols(3)))};
  EXPECT_NEAR(terminal_loss(all, spec, 4.0).scalar(),
              terminal_loss(left, spec, 4.0).scalar() + terminal_loss(right, spec, 4.0).scalar(), 1e-14);
}

TEST(Losses, GradientRegularizerIsWeightedTimeIntegral) {
  ad::Tape tape;
  const TimeGrid grid = TimeGrid::uniform(1.0, 2);
  Trajectory tr;
  tr.A = {tape.constant(row({0.0, 0.0})), tape.constant(row({0.0, 0.0}))};
  tr.jacobian_sq = {tape.constant(row({1.0, 3.0})), tape.constant(row({2.0, 6.0}))};
  // (0.5 * (1 + 3) + 0.5 * (2 + 6)) / batch of 2
  EXPECT_NEAR(gradient_regularizer(tr, grid, 2.0, 2.0).scalar(), 2.0 * 3.0, 1e-14);
  const Var zero = gradient_regularizer(tr, grid, 0.0, 2.0);
  EXPECT_EQ(zero.scalar(), 0.0);
}

TEST(Losses, TotalReducesToTerminalAtZeroLambda) {
  LossReport r;
  r.terminal = 0.123456789;
  r.grad_reg = 42.0;
  r.lambda = 0.0;
  r.hamiltonian = -7.0;
  EXPECT_EQ(loss_total(LossMode::FiniteHorizon, r), r.terminal);
  r.lambda = 0.5;
  EXPECT_EQ(loss_total(LossMode::FiniteHorizon, r), r.terminal + 21.0);
  r.ergodic = 2.0;
  r.lyapunov = -4.0;
  r.lambda_lyap = 0.25;
  EXPECT_EQ(loss_total(LossMode::Ergodic, r), 1.0);
}

TEST(Losses, ErgodicLossIsTimeVarianceOfHamiltonian) {
  const ProblemSpec spec = make_problem({"ergodic-ou", 1, {}});
  const TimeGrid grid = TimeGrid::uniform(4.0, 4);
  ad::Tape tape;
  const std::vector<Matrix> S = {row({0.0}), row({1.0}), row({-1.0}), row({0.5}), row({0.0})};
  const std::vector<Matrix> A = {row({0.2}), row({-0.4}), row({0.0}), row({0.3})};
  const std::vector<Matrix> Phi = {row({1.0}), row({0.5}), row({-0.5}), row({0.0})};
  const std::vector<Matrix> Q = {row({0.1}), row({0.2}), row({0.3}), row({0.4})};
  const Trajectory tr = fixed_trajectory(tape, S, {}, A, Phi, Q);
  // maximization form: (a - s) p + q - (s^2 + a^2 / 2)
  std::vector<double> H;
  for (int i = 1; i < 4; ++i) {
    const double s = S[i](0), a = A[i](0), p = Phi[i](0), q = Q[i](0);
    H.push_back((a - s) * p + q - (s * s + 0.5 * a * a));
  }
  const double mean = (H[0] + H[1] + H[2]) / 3.0;
  double var = 0.0;
  for (double h : H) var += (h - mean) * (h - mean) / 3.0;
  EXPECT_NEAR(ergodic_loss(tr, spec, grid, 1, 1.0).scalar(), var, 1e-13);
  EXPECT_NEAR(ergodic_rows(tr, spec, grid, 1).value()(0, 0), var, 1e-13);
}

TEST(Losses, ErgodicLossVanishesForConstantHamiltonian) {
  const ProblemSpec spec = make_problem({"ergodic-ou", 1, {}});
  const TimeGrid grid = TimeGrid::uniform(3.0, 3);
  ad::Tape tape;
  const Matrix s = row({0.5, -0.5});
  const Trajectory tr = fixed_trajectory(tape, {s, s, s, s}, {}, {s, s, s}, {s, s, s}, {s, s, s});
  EXPECT_NEAR(ergodic_loss(tr, spec, grid, 0, 2.0).scalar(), 0.0, 1e-15);
}

TEST(Losses, LyapunovDriftForOrnsteinUhlenbeck) {
  const ProblemSpec spec = make_problem({"ergodic-ou", 1, {}});
  const TimeGrid grid = TimeGrid::uniform(2.0, 2);
  ad::Tape tape;
  const Trajectory tr =
      fixed_trajectory(tape, {row({1.0}), row({2.0}), row({0.0})}, {}, {row({0.0}), row({1.0})}, {row({0.0}), row({0.0})});
  // 2 s (a - s) + 1 at (1, 0) and (2, 1): -1 and -3
  EXPECT_NEAR(lyapunov_rows(tr, spec, grid, 0).value()(0, 0), -2.0, 1e-14);
  EXPECT_NEAR(lyapunov_regularizer(tr, spec, grid, 1, 0.5, 1.0).scalar(), -1.5, 1e-14);
}

TEST(Losses, HistoryRowsAreFullPrecision) {
  LossReport r;
  r.terminal = 1.0 / 3.0;
  r.total = r.terminal;
  EXPECT_EQ(LossReport::csv_header(), "iteration,terminal,grad_reg,ergodic,lyapunov,hamiltonian,total,lr");
  const std::string line = r.csv_row(7, 1e-3);
  EXPECT_EQ(line.substr(0, 21), "7,0.33333333333333331");
}
