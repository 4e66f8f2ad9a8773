#include "nho/model.hpp"
#include "nho/problems.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace nho;
using nho::testing::numeric_jacobian;
using nho::testing::relative_error;

namespace {

Vector random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  return Vector::NullaryExpr(n, [&](Eigen::Index) { return d(rng); });
}

Vector interior_control(const ProblemSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  return spec.bounds.center() + spec.bounds.half_width().cwiseProduct(Vector::NullaryExpr(spec.m, [&](Eigen::Index) { return u(rng); }));
}

Psi randomized_psi(const ProblemSpec& spec, std::uint64_t seed) {
  Psi psi = make_psi(spec, {9, 9}, seed);
  std::mt19937_64 rng(seed * 31 + 7);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto* net : {&psi.control, &psi.field})
    for (std::size_t l = 0; l < net->layers(); ++l)
      for (Eigen::Index i = 0; i < net->bias(l).size(); ++i) net->bias(l)(i) = n(rng);
  return psi;
}

}  // namespace

TEST(Model, HamiltonianOfTerminalLogMatchesHandComputation) {
  const ProblemSpec spec = make_problem({"p1-terminal-log", 3, {}});
  const Vector s(Vector::LinSpaced(3, -1, 1)), a(Vector::LinSpaced(3, 0.5, 1.5)), p(Vector::LinSpaced(3, 2, -1));
  Matrix q(3, 3);
  q << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  // mu = a, sigma = I, f = -|a|^2 / 2
  const double want = a.dot(p) + q.trace() - 0.5 * a.squaredNorm();
  EXPECT_NEAR(hamiltonian(spec, 0.2, s, a, p, q), want, 1e-12);
}

TEST(Model, MinimizationProblemsAreNegated) {
  const ProblemSpec spec = make_problem({"p2-double-well", 2, {}});
  EXPECT_TRUE(spec.negated);
  EXPECT_EQ(spec.sense, Sense::Minimize);
  const Vector s(Vector::LinSpaced(2, -0.3, 1.7)), a(Vector::LinSpaced(2, 0.5, -1.5)), p(Vector::LinSpaced(2, 2, -1));
  const Matrix q = Matrix::Identity(2, 2) * 0.7;
  const Vector gradU = (s.array().cube() - s.array()).matrix() / 2.0;
  // maximization form: mu^T p + Tr(sigma^T q) - f with f = |a|^2 / 2
  const double want = (a - gradU).dot(p) + std::sqrt(2.0) * q.trace() - 0.5 * a.squaredNorm();
  EXPECT_NEAR(hamiltonian(spec, 0.0, s, a, p, q), want, 1e-12);

  ad::Tape tape;
  const ad::Var S = tape.constant(Matrix(s));
  const double U = ((s.array().square() - 1.0).square().sum()) / (4.0 * 2.0);
  EXPECT_NEAR(spec.terminal(S).scalar(), -U, 1e-12);
  EXPECT_LT((spec.terminal_grad(S).value() + gradU).norm(), 1e-12);
}

TEST(Model, MaximizationSpecsPassThroughUnchanged) {
  const ProblemSpec spec = make_problem({"p1-terminal-log", 2, {}});
  EXPECT_FALSE(spec.negated);
  const ProblemSpec again = to_maximization(spec);
  ad::Tape tape;
  const ad::Var S = tape.constant(Matrix(Vector::LinSpaced(2, 1, 2)));
  EXPECT_EQ(again.terminal(S).scalar(), spec.terminal(S).scalar());
}

TEST(Model, StateGradientOfHamiltonianMatchesDifferences) {
  for (const std::string& name : benchmark_names()) {
    const int d = name == "ergodic-ou" ? 1 : 4;
    const ProblemSpec spec = make_problem({name, d, {}});
    std::mt19937_64 rng(5);
    for (int k = 0; k < 25; ++k) {
      const Vector s = random_vector(d, rng), p = random_vector(d, rng);
      const Vector a = interior_control(spec, rng);
      const Matrix q = Matrix::NullaryExpr(d, spec.d_M, [&](Eigen::Index, Eigen::Index) { return random_vector(1, rng)(0); });
      const Vector g = grad_s_hamiltonian(spec, 0.3, s, a, p, q);
      const Matrix fd = numeric_jacobian(
          [&](const Vector& x) { return Vector::Constant(1, hamiltonian(spec, 0.3, x, a, p, q)); }, s);
      EXPECT_LT((g - fd.transpose()).norm(), 1e-6 * std::max(1.0, g.norm())) << name;
    }
  }
}

TEST(Model, BatchedHamiltonianAgreesWithSinglePoints) {
  const ProblemSpec spec = make_problem({"p2-double-well", 3, {}});
  std::mt19937_64 rng(9);
  const int B = 6;
  Matrix S(3, B), A(3, B), P(3, B);
  for (int j = 0; j < B; ++j) {
    S.col(j) = random_vector(3, rng);
    A.col(j) = interior_control(spec, rng);
    P.col(j) = random_vector(3, rng);
  }
  ad::Tape tape;
  const ad::Var Sv = tape.constant(S), Av = tape.constant(A), Pv = tape.constant(P);
  const Matrix H = hamiltonian(spec, 0.1, Sv, Av, Pv, {}).value();
  const Matrix G = grad_s_hamiltonian(spec, 0.1, Sv, Av, Pv, {}).value();
  for (int j = 0; j < B; ++j) {
    EXPECT_NEAR(H(0, j), hamiltonian(spec, 0.1, S.col(j), A.col(j), P.col(j), Matrix::Zero(3, 3)), 1e-12);
    EXPECT_LT((G.col(j) - grad_s_hamiltonian(spec, 0.1, S.col(j), A.col(j), P.col(j), Matrix::Zero(3, 3))).norm(),
              1e-12);
  }
}

TEST(Model, CoefficientsAssembleFromNetworks) {
  const ProblemSpec spec = make_problem({"p2-double-well", 3, {}});
  const Psi psi = randomized_psi(spec, 3);
  const Vector s = Vector::LinSpaced(3, -0.8, 1.2);
  const double t = 0.25;
  const NhoCoefficients c = nho_coefficients(psi, spec, t, s);

  const Vector a = forward(psi.control, t, s);
  const Vector phi = forward(psi.field, t, s);
  const Matrix J = numeric_jacobian([&](const Vector& x) { return forward(psi.field, t, x); }, s);
  const Matrix sigma = std::sqrt(2.0) * Matrix::Identity(3, 3);
  const Matrix q = J * sigma;
  const Vector gradU = (s.array().cube() - s.array()).matrix() / 3.0;

  EXPECT_LT((c.b_s - (a - gradU)).norm(), 1e-12);
  EXPECT_LT((c.b_p + grad_s_hamiltonian(spec, t, s, a, phi, q)).norm(), 1e-7);
  EXPECT_LT((c.sigma_block - sigma).norm(), 1e-12);
  EXPECT_LT(relative_error(c.q_block, q), 1e-7);
  EXPECT_LT(relative_error(q_field(psi, spec, t, s), q), 1e-7);
  EXPECT_EQ(c.diffusion().rows(), 6);
  EXPECT_EQ(c.diffusion().cols(), 3);
}

TEST(Model, GeneratorMatrixHasRankAtMostDriverDimension) {
  for (const char* name : {"p1-terminal-log", "p2-double-well", "p3-liquidation"}) {
    const ProblemSpec spec = make_problem({name, 3, {}});
    for (std::uint64_t k = 0; k < 10; ++k) {
      const Psi psi = randomized_psi(spec, 40 + k);
      const Vector s = Vector::LinSpaced(3, -1.0, 1.0) * (0.3 + 0.2 * static_cast<double>(k));
      const Matrix D = nho_coefficients(psi, spec, 0.1, s).generator_matrix(spec.quadratic_variation(0.1));
      EXPECT_LT((D - D.transpose()).norm(), 1e-12);
      Eigen::JacobiSVD<Matrix> svd(D);
      const Vector sv = svd.singularValues();
      EXPECT_LE(sv.tail(6 - spec.d_M).maxCoeff(), 1e-10 * sv(0)) << name;
    }
  }
}

TEST(Model, GeneratorOnQuadraticsMatchesDirectFormula) {
  const ProblemSpec spec = make_problem({"p2-double-well", 2, {}});
  const Psi psi = randomized_psi(spec, 11);
  const Vector s = Vector::LinSpaced(2, 0.4, -0.9);
  const double t = 0.1;
  Matrix A(4, 4);
  A << 2, 1, 0, 0.5, 1, 3, -1, 0, 0, -1, 1, 0.2, 0.5, 0, 0.2, -2;
  const Vector c = Vector::LinSpaced(4, 1.0, -1.0);
  const Vector x = (Vector(4) << s, forward(psi.field, t, s)).finished();
  const TestFunction g{[&](const Vector& y) { return Vector(A * y + c); }, [&](const Vector&) { return A; }};

  const Vector a = forward(psi.control, t, s);
  const Matrix J = numeric_jacobian([&](const Vector& y) { return forward(psi.field, t, y); }, s);
  Matrix Sigma(4, 2);
  Sigma << std::sqrt(2.0) * Matrix::Identity(2, 2), std::sqrt(2.0) * J;
  const Vector gradU = (s.array().cube() - s.array()).matrix() / 2.0;
  Vector b(4);
  b << a - gradU, -grad_s_hamiltonian(spec, t, s, a, x.tail(2), std::sqrt(2.0) * J);
  const double want = (A * x + c).dot(b) + 0.5 * (Sigma * Sigma.transpose() * A).trace();
  EXPECT_NEAR(nho_apply(psi, spec, t, x, g), want, 1e-6);
}

TEST(Model, PsiSeedsAndSerializes) {
  const ProblemSpec spec = make_problem({"p3-liquidation", 2, {}});
  const Psi psi = make_psi(spec, {5}, 17);
  EXPECT_EQ(psi.control.seed, 17u);
  EXPECT_EQ(psi.field.seed, 18u);
  EXPECT_EQ(psi.control.spec.output_map, OutputMap::BoxBounded);
  EXPECT_EQ(psi.field.spec.output_map, OutputMap::Identity);
  const Psi back = psi_from_json(nlohmann::json::parse(to_json(psi).dump()));
  EXPECT_EQ(back.control.tensors, psi.control.tensors);
  EXPECT_EQ(back.field.tensors, psi.field.tensors);
}

TEST(Model, FieldOutputScaleFollowsTerminalGradientAtInitialState) {
  // grad G(s0): p1 and p2 vanish at s0 = 0; p3 is 2 * lambda * s0 = 200.
  EXPECT_EQ(field_output_scale(make_problem({"p1-terminal-log", 4, {}})), 1.0);
  EXPECT_EQ(field_output_scale(make_problem({"p2-double-well", 4, {}})), 1.0);
  EXPECT_EQ(field_output_scale(make_problem({"p3-liquidation", 4, {}})), 200.0);
  EXPECT_EQ(field_output_scale(make_problem({"p3-liquidation", 2, {{"lambda", 3.0}, {"s0", 0.5}}})), 3.0);
  EXPECT_EQ(field_output_scale(make_problem({"ergodic-ou", 1, {}})), 1.0);
  const ProblemSpec spec = make_problem({"p3-liquidation", 3, {}});
  EXPECT_EQ(make_psi(spec, {4}, 1).field.spec.output_scale, 200.0);
  EXPECT_EQ(make_psi(spec, {4}, 1).control.spec.output_scale, 1.0);
  // same initial field outputs as an unscaled network
  Psi unscaled = make_psi(spec, {4}, 1);
  unscaled.field = init_network([&] {
    NetworkSpec f = unscaled.field.spec;
    f.output_scale = 1.0;
    return f;
  }(), 2);
  const Vector s = Vector::LinSpaced(3, -0.5, 1.5);
  EXPECT_LT(relative_error(forward(make_psi(spec, {4}, 1).field, 0.3, s), forward(unscaled.field, 0.3, s)), 1e-14);
}

TEST(Model, DiffusionAppliesDiagonalAndColumnForms) {
  ad::Tape tape;
  Diffusion diag;
  diag.diagonal = tape.constant(Matrix(Vector::LinSpaced(2, 1.0, 2.0)));
  Matrix dM(2, 3);
  dM << 1, 2, 3, 4, 5, 6;
  Matrix want(2, 3);
  want << 1, 2, 3, 8, 10, 12;
  EXPECT_EQ(diag.apply(tape.constant(dM)).value(), want);

  Diffusion cols;
  cols.columns = {tape.constant(Matrix(Vector::LinSpaced(2, 1.0, 0.0))), tape.constant(Matrix(Vector::LinSpaced(2, 1.0, 1.0)))};
  Matrix want2(2, 3);
  want2 << 5, 7, 9, 4, 5, 6;
  EXPECT_EQ(cols.apply(tape.constant(dM)).value(), want2);
  EXPECT_EQ(cols.driver_dim(), 2);
}

TEST(Model, ProblemValidationCatchesMissingCallables) {
  ProblemSpec spec = make_problem({"p1-terminal-log", 2, {}});
  EXPECT_NO_THROW(spec.validate());
  spec.drift = nullptr;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}
