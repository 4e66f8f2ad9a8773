#pragma once

// Reverse-mode differentiation over a recorded trace of dense matrix
// primitives. Values are Eigen matrices; a batch of points is laid out one
// point per column. Forward-mode tangents (jvp / jacobian) are recorded back
// onto the same tape as ordinary primitives, so objectives that contain
// input-Jacobians can themselves be differentiated.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nho::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Shift,
  Pow,
  Tanh,
  TanhTangent,
  Log,
  Exp,
  MatMul,
  Affine,
  VStack,
  Rows,
  ColSum,
  Sum,
  SquaredNorm,
  Trace,
  Bounded,
  Opaque,
};

std::string_view op_name(Op op);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedPrimitive : public std::runtime_error {
 public:
  explicit UnsupportedPrimitive(std::string primitive);
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

class NonScalarObjective : public std::invalid_argument {
 public:
  NonScalarObjective(Eigen::Index rows, Eigen::Index cols);
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Var variable(Matrix value);
  Var constant(Matrix value);
  Var constant(double value);
  /// A value computed outside the closed primitive set. Recording is allowed;
  /// differentiating through it raises UnsupportedPrimitive naming `name`.
  Var opaque(std::string name, Matrix value, std::initializer_list<Var> inputs);

  /// Accumulates d(objective)/d(node) for every node the objective reaches.
  void backward(const Var& objective);
  /// Adjoint of `v` after backward(); zeros of v's shape when unreached.
  Matrix gradient(const Var& v) const;

  /// Multiple forward-mode tangents of `output` w.r.t. `input`, recorded as
  /// new nodes. Each tangent either has input's shape (one direction per
  /// column of a batch) or, for a column-vector input, any number of columns
  /// (one direction per column).
  std::vector<Var> jvp(const Var& output, const Var& input,
                       std::span<const Var> tangents);

  /// Recomputes every node from the leaves and reports whether all values
  /// match the recorded ones bit for bit.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  const Matrix& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Used by the free-function primitives below.
  Var record(Op op, int a, int b = -1, double k = 0.0, Matrix aux = {},
             int c = -1);

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    int c = -1;
    double k = 0.0;
    Matrix aux;
    bool requires_grad = false;
    std::string name;
  };

  Matrix compute(const Node& node) const;
  void propagate(std::size_t id, std::vector<Matrix>& adj) const;
  Var tangent_rule(int id, std::span<const int> tangent, int lo,
                   Eigen::Index directions);

  std::vector<Node> nodes_;
  std::vector<Matrix> values_;
  std::vector<Matrix> adjoints_;
};

// Elementwise arithmetic broadcasts size-1 rows/columns.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double k, const Var& a);
Var operator*(const Var& a, double k);
Var operator+(const Var& a, double k);
Var operator+(double k, const Var& a);
Var operator-(const Var& a, double k);
Var operator-(double k, const Var& a);
Var operator/(const Var& a, const Var& b);

Var tanh(const Var& x);
/// (1 - y^2) * u, the tangent of tanh given its output y.
Var tanh_tangent(const Var& y, const Var& u);
Var log(const Var& x);
Var exp(const Var& x);
Var pow(const Var& x, double exponent);
Var square(const Var& x);
Var matmul(const Var& a, const Var& b);
/// w * x + b with b a column broadcast over x's columns.
Var affine(const Var& w, const Var& x, const Var& b);
Var vstack(const Var& top, const Var& bottom);
Var rows(const Var& x, Eigen::Index start, Eigen::Index count);
/// Sum over rows, one entry per column.
Var colsum(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var squared_norm(const Var& x);
Var trace(const Var& x);
/// center + half * tanh(x) per row; maps every finite input strictly inside
/// (center - half, center + half).
Var bounded(const Var& x, const Vector& center, const Vector& half);

using Objective = std::function<Var(Tape&, std::span<const Var>)>;

/// Gradient of a scalar objective with respect to each parameter tensor.
std::vector<Matrix> grad(const Objective& objective,
                         std::span<const Matrix> params);

/// m x d Jacobian of a column-vector function at `input`, recorded on the
/// input's tape and therefore differentiable in any parameters inside `fn`.
Var jacobian(const std::function<Var(const Var&)>& fn, const Var& input);

/// Plain-value convenience: Jacobian of `fn` at x on a scratch tape.
Matrix jacobian(const std::function<Var(const Var&)>& fn, const Vector& x);

}  // namespace nho::ad
