#pragma once

// Independent oracles shared by the unit tests.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <utility>

namespace nho::testing {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Central differences of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector function (m x n).
inline Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector a = x, b = x;
    a(j) += h;
    b(j) -= h;
    J.col(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return J;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Probabilists' Gauss-Hermite rule (weight exp(-x^2/2)/sqrt(2 pi)) from the
/// eigen-decomposition of the Jacobi matrix.
inline std::pair<Vector, Vector> gauss_hermite(int n) {
  Matrix J = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  const Vector nodes = es.eigenvalues();
  const Vector weights = es.eigenvectors().row(0).transpose().array().square();
  return {nodes, weights};
}

/// E[f(mean + std Z)] for standard normal Z.
inline double gaussian_expectation(const std::function<double(double)>& f, double mean, double std, int n = 80) {
  const auto [x, w] = gauss_hermite(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += w(i) * f(mean + std * x(i));
  return sum;
}

}  // namespace nho::testing
