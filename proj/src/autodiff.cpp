#include "nho/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace nho::ad {

using Eigen::Index;

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Pow: return "pow";
    case Op::Tanh: return "tanh";
    case Op::TanhTangent: return "tanh_tangent";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::MatMul: return "matmul";
    case Op::Affine: return "affine";
    case Op::VStack: return "vstack";
    case Op::Rows: return "rows";
    case Op::ColSum: return "colsum";
    case Op::Sum: return "sum";
    case Op::SquaredNorm: return "squared_norm";
    case Op::Trace: return "trace";
    case Op::Bounded: return "bounded";
    case Op::Opaque: return "opaque";
  }
  return "unknown";
}

UnsupportedPrimitive::UnsupportedPrimitive(std::string primitive)
    : std::runtime_error("no derivative rule for primitive '" + primitive + "'"),
      primitive_(std::move(primitive)) {}

NonScalarObjective::NonScalarObjective(Index rows, Index cols)
    : std::invalid_argument([&] {
        std::ostringstream os;
        os << "objective must be 1x1, got " << rows << "x" << cols;
        return os.str();
      }()) {}

namespace {

// Vectorized through exp; a short series keeps relative accuracy near zero.
Matrix tanh_of(const Matrix& x) {
  const auto a = x.array();
  const Eigen::ArrayXXd e = (-2.0 * a.abs()).exp();
  const Eigen::ArrayXXd x2 = a.square();
  const Eigen::ArrayXXd series = a * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 - x2 * (17.0 / 315.0))));
  return (a.abs() < 1e-2).select(series, a.sign() * (1.0 - e) / (1.0 + e)).matrix();
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Index broadcast_dim(Index x, Index y, Op op, const Matrix& a, const Matrix& b) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " +
                   shape_str(a) + " with " + shape_str(b));
}

Matrix expand(const Matrix& x, Index r, Index c) {
  if (x.rows() == r && x.cols() == c) return x;
  return x.replicate(r / x.rows(), c / x.cols());
}

Matrix reduce_to(Matrix g, Index r, Index c) {
  if (g.rows() != r) g = g.colwise().sum().eval();
  if (g.cols() != c) g = g.rowwise().sum().eval();
  return g;
}

Matrix elementwise(Op op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    switch (op) {
      case Op::Add: return a + b;
      case Op::Sub: return a - b;
      case Op::Mul: return a.cwiseProduct(b);
      case Op::TanhTangent:
        return (1.0 - a.array().square()).matrix().cwiseProduct(b);
      default: break;
    }
  }
  const Index r = broadcast_dim(a.rows(), b.rows(), op, a, b);
  const Index c = broadcast_dim(a.cols(), b.cols(), op, a, b);
  const Matrix ea = expand(a, r, c);
  const Matrix eb = expand(b, r, c);
  switch (op) {
    case Op::Add: return ea + eb;
    case Op::Sub: return ea - eb;
    case Op::Mul: return ea.cwiseProduct(eb);
    case Op::TanhTangent:
      return (1.0 - ea.array().square()).matrix().cwiseProduct(eb);
    default: break;
  }
  throw ShapeError("not an elementwise primitive");
}

Matrix power(const Matrix& x, double k) {
  if (k == 1.0) return x;
  if (k == 2.0) return x.array().square().matrix();
  if (k == -1.0) return x.array().inverse().matrix();
  if (k == 0.5) return x.array().sqrt().matrix();
  return x.array().pow(k).matrix();
}

Tape* common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("operation on an empty Var");
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

Tape* tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return a.tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw NonScalarObjective(v.rows(), v.cols());
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::variable(Matrix value) {
  Node node;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  nodes_.emplace_back();
  values_.push_back(std::move(value));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::opaque(std::string name, Matrix value, std::initializer_list<Var> inputs) {
  if (inputs.size() > 3) throw std::invalid_argument("opaque: at most three inputs");
  Node node;
  node.op = Op::Opaque;
  node.name = std::move(name);
  int* slots[3] = {&node.a, &node.b, &node.c};
  std::size_t i = 0;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument("opaque: input from another tape");
    *slots[i++] = in.id();
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  adjoints_.clear();
}

Var Tape::record(Op op, int a, int b, double k, Matrix aux, int c) {
  Node node;
  node.op = op;
  node.a = a;
  node.b = b;
  node.c = c;
  node.k = k;
  node.aux = std::move(aux);
  for (int p : {a, b, c}) {
    if (p >= 0) node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  Matrix value = compute(node);
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Tape::compute(const Node& n) const {
  auto val = [this](int id) -> const Matrix& { return values_[static_cast<std::size_t>(id)]; };
  switch (n.op) {
    case Op::Leaf:
    case Op::Opaque:
      throw std::logic_error("leaf values are not computed");
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::TanhTangent:
      return elementwise(n.op, val(n.a), val(n.b));
    case Op::Scale: return n.k * val(n.a);
    case Op::Shift: return (val(n.a).array() + n.k).matrix();
    case Op::Pow: return power(val(n.a), n.k);
    case Op::Tanh: return tanh_of(val(n.a));
    case Op::Log: return val(n.a).array().log().matrix();
    case Op::Exp: return val(n.a).array().exp().matrix();
    case Op::MatMul: {
      const Matrix& a = val(n.a);
      const Matrix& b = val(n.b);
      if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
      return a * b;
    }
    case Op::Affine: {
      const Matrix& w = val(n.a);
      const Matrix& x = val(n.b);
      const Matrix& bias = val(n.c);
      if (w.cols() != x.rows() || bias.rows() != w.rows() || bias.cols() != 1)
        throw ShapeError("affine: weight " + shape_str(w) + ", input " + shape_str(x) +
                         ", bias " + shape_str(bias));
      Matrix out = w * x;
      out.colwise() += bias.col(0);
      return out;
    }
    case Op::VStack: {
      const Matrix& top = val(n.a);
      const Matrix& bottom = val(n.b);
      if (top.cols() != bottom.cols())
        throw ShapeError("vstack: " + shape_str(top) + " over " + shape_str(bottom));
      Matrix out(top.rows() + bottom.rows(), top.cols());
      out << top, bottom;
      return out;
    }
    case Op::Rows: {
      const Matrix& x = val(n.a);
      const auto start = static_cast<Index>(n.k);
      const Index count = n.aux.rows();
      if (start < 0 || start + count > x.rows())
        throw ShapeError("rows: block out of range for " + shape_str(x));
      return x.middleRows(start, count);
    }
    case Op::ColSum: return val(n.a).colwise().sum();
    case Op::Sum: return Matrix::Constant(1, 1, val(n.a).sum());
    case Op::SquaredNorm: return Matrix::Constant(1, 1, val(n.a).squaredNorm());
    case Op::Trace: {
      const Matrix& x = val(n.a);
      if (x.rows() != x.cols()) throw ShapeError("trace of non-square " + shape_str(x));
      return Matrix::Constant(1, 1, x.trace());
    }
    case Op::Bounded: {
      const Matrix& x = val(n.a);
      if (n.aux.rows() != x.rows())
        throw ShapeError("bounded: " + shape_str(x) + " against " +
                         std::to_string(n.aux.rows()) + " bounds");
      Matrix out = tanh_of(x);
      for (Index j = 0; j < out.cols(); ++j) {
        for (Index i = 0; i < out.rows(); ++i) {
          const double c = n.aux(i, 0), h = n.aux(i, 1);
          const double v = c + h * out(i, j);
          // saturated values stay inside the open box
          out(i, j) = std::clamp(v, std::nextafter(c - h, c), std::nextafter(c + h, c));
        }
      }
      return out;
    }
  }
  throw std::logic_error("unhandled primitive");
}

void Tape::propagate(std::size_t id, std::vector<Matrix>& adj) const {
  const Node& n = nodes_[id];
  const Matrix& g = adj[id];
  auto val = [this](int i) -> const Matrix& { return values_[static_cast<std::size_t>(i)]; };
  auto acc = [&](int target, Matrix contribution) {
    if (target < 0 || !nodes_[static_cast<std::size_t>(target)].requires_grad) return;
    Matrix& slot = adj[static_cast<std::size_t>(target)];
    if (slot.size() == 0) slot = std::move(contribution);
    else slot += contribution;
  };
  auto wants = [&](int target) {
    return target >= 0 && nodes_[static_cast<std::size_t>(target)].requires_grad;
  };

  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::Opaque:
      throw UnsupportedPrimitive(n.name);
    case Op::Add:
      if (wants(n.a)) acc(n.a, reduce_to(g, val(n.a).rows(), val(n.a).cols()));
      if (wants(n.b)) acc(n.b, reduce_to(g, val(n.b).rows(), val(n.b).cols()));
      return;
    case Op::Sub:
      if (wants(n.a)) acc(n.a, reduce_to(g, val(n.a).rows(), val(n.a).cols()));
      if (wants(n.b)) acc(n.b, -reduce_to(g, val(n.b).rows(), val(n.b).cols()));
      return;
    case Op::Mul: {
      const Matrix& a = val(n.a);
      const Matrix& b = val(n.b);
      if (wants(n.a))
        acc(n.a, reduce_to(g.cwiseProduct(expand(b, g.rows(), g.cols())), a.rows(), a.cols()));
      if (wants(n.b))
        acc(n.b, reduce_to(g.cwiseProduct(expand(a, g.rows(), g.cols())), b.rows(), b.cols()));
      return;
    }
    case Op::TanhTangent: {
      const Matrix& y = val(n.a);
      const Matrix& u = val(n.b);
      const Matrix ey = expand(y, g.rows(), g.cols());
      if (wants(n.b)) {
        Matrix d = (1.0 - ey.array().square()).matrix().cwiseProduct(g);
        acc(n.b, reduce_to(std::move(d), u.rows(), u.cols()));
      }
      if (wants(n.a)) {
        Matrix d = (-2.0 * ey.array() * expand(u, g.rows(), g.cols()).array() * g.array()).matrix();
        acc(n.a, reduce_to(std::move(d), y.rows(), y.cols()));
      }
      return;
    }
    case Op::Scale: acc(n.a, n.k * g); return;
    case Op::Shift: acc(n.a, g); return;
    case Op::Pow: {
      const Matrix& x = val(n.a);
      if (n.k == 2.0) acc(n.a, 2.0 * x.cwiseProduct(g));
      else acc(n.a, (n.k * power(x, n.k - 1.0).array() * g.array()).matrix());
      return;
    }
    case Op::Tanh: {
      const Matrix& y = values_[id];
      acc(n.a, ((1.0 - y.array().square()) * g.array()).matrix());
      return;
    }
    case Op::Log: acc(n.a, g.cwiseQuotient(val(n.a))); return;
    case Op::Exp: acc(n.a, g.cwiseProduct(values_[id])); return;
    case Op::MatMul:
      if (wants(n.a)) acc(n.a, g * val(n.b).transpose());
      if (wants(n.b)) acc(n.b, val(n.a).transpose() * g);
      return;
    case Op::Affine:
      if (wants(n.a)) acc(n.a, g * val(n.b).transpose());
      if (wants(n.b)) acc(n.b, val(n.a).transpose() * g);
      if (wants(n.c)) acc(n.c, g.rowwise().sum());
      return;
    case Op::VStack: {
      const Index top = val(n.a).rows();
      if (wants(n.a)) acc(n.a, g.topRows(top));
      if (wants(n.b)) acc(n.b, g.bottomRows(g.rows() - top));
      return;
    }
    case Op::Rows: {
      const Matrix& x = val(n.a);
      Matrix d = Matrix::Zero(x.rows(), x.cols());
      d.middleRows(static_cast<Index>(n.k), g.rows()) = g;
      acc(n.a, std::move(d));
      return;
    }
    case Op::ColSum:
      acc(n.a, g.replicate(val(n.a).rows(), 1));
      return;
    case Op::Sum: {
      const Matrix& x = val(n.a);
      acc(n.a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
      return;
    }
    case Op::SquaredNorm: acc(n.a, (2.0 * g(0, 0)) * val(n.a)); return;
    case Op::Trace: {
      const Matrix& x = val(n.a);
      acc(n.a, g(0, 0) * Matrix::Identity(x.rows(), x.cols()));
      return;
    }
    case Op::Bounded: {
      const Matrix& x = val(n.a);
      Matrix d = (1.0 - tanh_of(x).array().square()).matrix().cwiseProduct(g);
      for (Index j = 0; j < d.cols(); ++j) d.col(j) = d.col(j).cwiseProduct(n.aux.col(1));
      acc(n.a, std::move(d));
      return;
    }
  }
}

void Tape::backward(const Var& objective) {
  if (objective.tape() != this) throw std::invalid_argument("backward: objective from another tape");
  const Matrix& out = objective.value();
  if (out.rows() != 1 || out.cols() != 1) throw NonScalarObjective(out.rows(), out.cols());

  adjoints_.assign(nodes_.size(), Matrix());
  const auto root = static_cast<std::size_t>(objective.id());
  if (!nodes_[root].requires_grad) return;
  adjoints_[root] = Matrix::Ones(1, 1);
  for (std::size_t i = root + 1; i-- > 0;) {
    if (adjoints_[i].size() == 0 || !nodes_[i].requires_grad) continue;
    propagate(i, adjoints_);
  }
}

Matrix Tape::gradient(const Var& v) const {
  const auto i = static_cast<std::size_t>(v.id());
  if (i < adjoints_.size() && adjoints_[i].size() != 0) return adjoints_[i];
  return Matrix::Zero(v.rows(), v.cols());
}

bool Tape::replay_matches() const {
  // Recompute into a copy so parents are read from replayed values.
  Tape copy;
  copy.nodes_ = nodes_;
  copy.values_.reserve(values_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::Leaf || n.op == Op::Opaque) copy.values_.push_back(values_[i]);
    else copy.values_.push_back(copy.compute(n));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const Matrix& a = values_[i];
    const Matrix& b = copy.values_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Index k = 0; k < a.size(); ++k) {
      const double x = a.data()[k];
      const double y = b.data()[k];
      if (!(x == y) && !(std::isnan(x) && std::isnan(y))) return false;
    }
  }
  return true;
}

Var Tape::tangent_rule(int id, std::span<const int> tangent, int lo, Index directions) {
  const Node n = nodes_[static_cast<std::size_t>(id)];
  const Index out_rows = value(id).rows();
  const Index out_cols = directions > 1 ? directions : value(id).cols();

  auto tan = [&](int p) -> Var {
    if (p < lo) return {};
    const int t = tangent[static_cast<std::size_t>(p - lo)];
    return t >= 0 ? Var(this, t) : Var{};
  };
  auto node = [&](int p) { return Var(this, p); };
  auto fit = [&](Var v) -> Var {
    if (!v.valid() || (v.rows() == out_rows && v.cols() == out_cols)) return v;
    return v + constant(Matrix::Zero(out_rows, out_cols));
  };
  auto plus = [](Var x, Var y) -> Var {
    if (!x.valid()) return y;
    if (!y.valid()) return x;
    return x + y;
  };
  auto no_left_dependence = [&](const Var& t) {
    if (t.valid() && directions > 1)
      throw ShapeError(std::string(op_name(n.op)) +
                       ": jacobian through an input-dependent left factor");
  };

  const Var ta = tan(n.a);
  const Var tb = tan(n.b);
  switch (n.op) {
    case Op::Leaf:
      return {};
    case Op::Opaque:
      throw UnsupportedPrimitive(n.name);
    case Op::Add:
      return fit(plus(ta, tb));
    case Op::Sub:
      return fit(plus(ta, tb.valid() ? -tb : Var{}));
    case Op::Mul: {
      Var left = ta.valid() ? ta * node(n.b) : Var{};
      Var right = tb.valid() ? node(n.a) * tb : Var{};
      return fit(plus(left, right));
    }
    case Op::TanhTangent: {
      Var dy = ta.valid() ? (-2.0 * (node(n.a) * ta)) * node(n.b) : Var{};
      Var du = tb.valid() ? tanh_tangent(node(n.a), tb) : Var{};
      return fit(plus(dy, du));
    }
    case Op::Scale: return n.k * ta;
    case Op::Shift: return ta;
    case Op::Pow:
      if (n.k == 1.0) return ta;
      if (n.k == 2.0) return fit((2.0 * node(n.a)) * ta);
      return fit((n.k * pow(node(n.a), n.k - 1.0)) * ta);
    case Op::Tanh: return fit(tanh_tangent(node(id), ta));
    case Op::Log: return fit(ta * pow(node(n.a), -1.0));
    case Op::Exp: return fit(node(id) * ta);
    case Op::MatMul: {
      no_left_dependence(ta);
      Var left = ta.valid() ? matmul(ta, node(n.b)) : Var{};
      Var right = tb.valid() ? matmul(node(n.a), tb) : Var{};
      return fit(plus(left, right));
    }
    case Op::Affine: {
      no_left_dependence(ta);
      Var t = tb.valid() ? matmul(node(n.a), tb) : Var{};
      if (ta.valid()) t = plus(t, matmul(ta, node(n.b)));
      if (Var tc = tan(n.c); tc.valid()) t = plus(t, tc);
      return fit(t);
    }
    case Op::VStack: {
      const Index top_rows = value(n.a).rows();
      Var top = ta.valid() ? ta : constant(Matrix::Zero(top_rows, out_cols));
      Var bottom = tb.valid() ? tb : constant(Matrix::Zero(out_rows - top_rows, out_cols));
      if (top.cols() != out_cols) top = top + constant(Matrix::Zero(top_rows, out_cols));
      if (bottom.cols() != out_cols)
        bottom = bottom + constant(Matrix::Zero(out_rows - top_rows, out_cols));
      return vstack(top, bottom);
    }
    case Op::Rows:
      return rows(ta, static_cast<Index>(n.k), out_rows);
    case Op::ColSum:
      return colsum(ta);
    case Op::Sum:
      return directions > 1 ? colsum(ta) : sum(ta);
    case Op::SquaredNorm:
      return 2.0 * (directions > 1 ? colsum(node(n.a) * ta) : sum(node(n.a) * ta));
    case Op::Trace:
      if (directions > 1) {
        if (value(n.a).size() != 1) throw ShapeError("trace: jacobian needs a 1x1 argument");
        return ta;
      }
      return trace(ta);
    case Op::Bounded: {
      Var th = tanh(node(n.a));
      Var half = constant(Matrix(n.aux.col(1)));
      return fit(half * tanh_tangent(th, ta));
    }
  }
  throw std::logic_error("unhandled primitive");
}

std::vector<Var> Tape::jvp(const Var& output, const Var& input, std::span<const Var> tangents) {
  if (output.tape() != this || input.tape() != this)
    throw std::invalid_argument("jvp: operands from another tape");
  const int lo = input.id();
  const int hi = output.id();
  std::vector<Var> result;
  result.reserve(tangents.size());
  if (hi < lo) {
    for (const Var& t : tangents) {
      const Index dirs = (input.cols() == 1) ? t.cols() : output.cols();
      result.push_back(constant(Matrix::Zero(output.rows(), dirs)));
    }
    return result;
  }

  const auto n = static_cast<std::size_t>(hi - lo + 1);
  std::vector<char> dep(n, 0);
  std::vector<char> anc(n, 0);
  dep[0] = 1;
  for (int i = lo + 1; i <= hi; ++i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    for (int p : {node.a, node.b, node.c})
      if (p >= lo && dep[static_cast<std::size_t>(p - lo)]) dep[static_cast<std::size_t>(i - lo)] = 1;
  }
  anc[n - 1] = 1;
  for (int i = hi; i >= lo; --i) {
    if (!anc[static_cast<std::size_t>(i - lo)]) continue;
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    for (int p : {node.a, node.b, node.c})
      if (p >= lo) anc[static_cast<std::size_t>(p - lo)] = 1;
  }

  for (const Var& seed : tangents) {
    if (seed.tape() != this) throw std::invalid_argument("jvp: tangent from another tape");
    Index directions = 1;
    if (seed.rows() == input.rows() && seed.cols() == input.cols()) {
      directions = input.cols() == 1 ? seed.cols() : 1;
    } else if (input.cols() == 1 && seed.rows() == input.rows()) {
      directions = seed.cols();
    } else {
      throw ShapeError("jvp: tangent " + shape_str(seed.value()) + " for input " +
                       shape_str(input.value()));
    }

    std::vector<int> tan(n, -1);
    tan[0] = seed.id();
    for (int i = lo + 1; i <= hi; ++i) {
      const auto k = static_cast<std::size_t>(i - lo);
      if (!dep[k] || !anc[k]) continue;
      if (directions > 1 && value(i).cols() != 1)
        throw ShapeError("jacobian: intermediate " + std::string(op_name(nodes_[static_cast<std::size_t>(i)].op)) +
                         " is " + shape_str(value(i)) + ", expected a column");
      const Var t = tangent_rule(i, tan, lo, directions);
      tan[k] = t.valid() ? t.id() : -1;
    }
    const Index out_cols = directions > 1 ? directions : output.cols();
    if (tan[n - 1] >= 0) result.push_back(Var(this, tan[n - 1]));
    else result.push_back(constant(Matrix::Zero(output.rows(), out_cols)));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Primitives

Var operator+(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Add, a.id(), b.id()); }
Var operator-(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Sub, a.id(), b.id()); }
Var operator*(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Mul, a.id(), b.id()); }
Var operator-(const Var& a) { return tape_of(a)->record(Op::Scale, a.id(), -1, -1.0); }
Var operator*(double k, const Var& a) { return tape_of(a)->record(Op::Scale, a.id(), -1, k); }
Var operator*(const Var& a, double k) { return k * a; }
Var operator+(const Var& a, double k) { return tape_of(a)->record(Op::Shift, a.id(), -1, k); }
Var operator+(double k, const Var& a) { return a + k; }
Var operator-(const Var& a, double k) { return a + (-k); }
Var operator-(double k, const Var& a) { return (-a) + k; }
Var operator/(const Var& a, const Var& b) { return a * pow(b, -1.0); }

Var tanh(const Var& x) { return tape_of(x)->record(Op::Tanh, x.id()); }
Var tanh_tangent(const Var& y, const Var& u) {
  return common_tape(y, u)->record(Op::TanhTangent, y.id(), u.id());
}
Var log(const Var& x) { return tape_of(x)->record(Op::Log, x.id()); }
Var exp(const Var& x) { return tape_of(x)->record(Op::Exp, x.id()); }
Var pow(const Var& x, double exponent) { return tape_of(x)->record(Op::Pow, x.id(), -1, exponent); }
Var square(const Var& x) { return pow(x, 2.0); }
Var matmul(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::MatMul, a.id(), b.id()); }

Var affine(const Var& w, const Var& x, const Var& b) {
  Tape* t = common_tape(w, x);
  common_tape(w, b);
  return t->record(Op::Affine, w.id(), x.id(), 0.0, {}, b.id());
}

Var vstack(const Var& top, const Var& bottom) {
  return common_tape(top, bottom)->record(Op::VStack, top.id(), bottom.id());
}

Var rows(const Var& x, Index start, Index count) {
  if (count <= 0) throw ShapeError("rows: empty block");
  return tape_of(x)->record(Op::Rows, x.id(), -1, static_cast<double>(start), Matrix(count, 0));
}

Var colsum(const Var& x) { return tape_of(x)->record(Op::ColSum, x.id()); }
Var sum(const Var& x) { return tape_of(x)->record(Op::Sum, x.id()); }
Var mean(const Var& x) { return (1.0 / static_cast<double>(x.value().size())) * sum(x); }
Var squared_norm(const Var& x) { return tape_of(x)->record(Op::SquaredNorm, x.id()); }
Var trace(const Var& x) { return tape_of(x)->record(Op::Trace, x.id()); }

Var bounded(const Var& x, const Vector& center, const Vector& half) {
  if (center.size() != half.size()) throw ShapeError("bounded: center/half size mismatch");
  Matrix aux(center.size(), 2);
  aux.col(0) = center;
  aux.col(1) = half;
  return tape_of(x)->record(Op::Bounded, x.id(), -1, 0.0, std::move(aux));
}

// ---------------------------------------------------------------------------
// Drivers

std::vector<Matrix> grad(const Objective& objective, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.variable(p));
  const Var out = objective(tape, vars);
  tape.backward(out);
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(tape.gradient(v));
  return grads;
}

Var jacobian(const std::function<Var(const Var&)>& fn, const Var& input) {
  if (input.cols() != 1) throw ShapeError("jacobian: input must be a column vector");
  Tape& tape = *input.tape();
  const Var out = fn(input);
  if (out.cols() != 1) throw ShapeError("jacobian: output must be a column vector");
  const Var seed = tape.constant(Matrix::Identity(input.rows(), input.rows()));
  return tape.jvp(out, input, std::span<const Var>(&seed, 1)).front();
}

Matrix jacobian(const std::function<Var(const Var&)>& fn, const Vector& x) {
  Tape tape;
  return jacobian(fn, tape.constant(Matrix(x))).value();
}

}  // namespace nho::ad
