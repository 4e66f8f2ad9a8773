#include "nho/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace nho {

ControlBounds ControlBounds::box(int m, double lo, double hi) {
  ControlBounds b{Vector::Constant(m, lo), Vector::Constant(m, hi)};
  b.validate();
  return b;
}

bool ControlBounds::contains_strictly(const Vector& a) const {
  if (a.size() != lower.size()) return false;
  return ((a - lower).array() > 0.0).all() && ((upper - a).array() > 0.0).all();
}

void ControlBounds::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw std::invalid_argument("control bounds: lower/upper sizes differ or are empty");
  if (!lower.allFinite() || !upper.allFinite())
    throw std::invalid_argument("control bounds must be finite");
  if (!((upper - lower).array() > 0.0).all())
    throw std::invalid_argument("control bounds: lower must be < upper componentwise");
}

void NetworkSpec::validate() const {
  if (state_dim < 1 || output_dim < 1) throw std::invalid_argument("network: dimensions must be >= 1");
  for (int w : hidden_widths)
    if (w < 1) throw std::invalid_argument("network: hidden widths must be >= 1");
  if (!stationary && !(horizon > 0.0)) throw std::invalid_argument("network: horizon must be > 0");
  if (!(std::isfinite(output_scale) && output_scale > 0.0))
    throw std::invalid_argument("network: output_scale must be finite and > 0");
  if (output_map == OutputMap::BoxBounded) {
    bounds.validate();
    if (bounds.dim() != output_dim)
      throw std::invalid_argument("network: bounds dimension differs from output_dim");
  }
}

std::vector<int> default_hidden_widths(int d) {
  const int w = std::max(64, 2 * d);
  return {w, w};
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

bool NetworkParams::finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const Matrix& t) { return t.allFinite(); });
}

void NetworkParams::validate() const {
  spec.validate();
  const std::size_t expected = 2 * (spec.hidden_widths.size() + 1);
  if (tensors.size() != expected)
    throw std::invalid_argument("network: expected " + std::to_string(expected) + " tensors, got " +
                                std::to_string(tensors.size()));
  Eigen::Index fan_in = spec.input_dim();
  for (std::size_t l = 0; l < layers(); ++l) {
    const Eigen::Index fan_out =
        l < spec.hidden_widths.size() ? spec.hidden_widths[l] : spec.output_dim;
    if (weight(l).rows() != fan_out || weight(l).cols() != fan_in || bias(l).rows() != fan_out ||
        bias(l).cols() != 1)
      throw std::invalid_argument("network: layer " + std::to_string(l) + " has inconsistent shape");
    fan_in = fan_out;
  }
  if (!finite()) throw std::invalid_argument("network: non-finite parameter");
}

NetworkParams init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkParams p;
  p.spec = spec;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  int fan_in = spec.input_dim();
  const std::size_t n_layers = spec.hidden_widths.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int fan_out = l < spec.hidden_widths.size() ? spec.hidden_widths[l] : spec.output_dim;
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-r, r);
    Matrix w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    p.tensors.push_back(std::move(w));
    p.tensors.push_back(Matrix::Zero(fan_out, 1));
    fan_in = fan_out;
  }
  return p;
}

Matrix input_features(const NetworkSpec& spec, double t, const Matrix& states) {
  if (states.rows() != spec.state_dim)
    throw ad::ShapeError("network: state has " + std::to_string(states.rows()) + " rows, expected " +
                         std::to_string(spec.state_dim));
  if (spec.stationary) return states;
  Matrix x(states.rows() + 1, states.cols());
  x.row(0).setConstant(t / spec.horizon);
  x.bottomRows(states.rows()) = states;
  return x;
}

// ---------------------------------------------------------------------------

ad::Var BoundNetwork::raw(double t, const ad::Var& states) const {
  const NetworkSpec& sp = spec();
  if (states.rows() != sp.state_dim)
    throw ad::ShapeError("network: state has " + std::to_string(states.rows()) + " rows, expected " +
                         std::to_string(sp.state_dim));
  ad::Tape& tape = *states.tape();
  ad::Var h = states;
  if (!sp.stationary)
    h = ad::vstack(tape.constant(Matrix::Constant(1, states.cols(), t / sp.horizon)), states);
  const std::size_t n_layers = tensors_.size() / 2;
  for (std::size_t l = 0; l + 1 < n_layers; ++l)
    h = ad::tanh(ad::affine(tensors_[2 * l], h, tensors_[2 * l + 1]));
  return ad::affine(tensors_[2 * n_layers - 2], h, tensors_[2 * n_layers - 1]);
}

ad::Var BoundNetwork::operator()(double t, const ad::Var& states) const {
  ad::Var out = raw(t, states);
  const NetworkSpec& sp = spec();
  if (sp.output_map == OutputMap::BoxBounded)
    out = ad::bounded(out, sp.bounds.center(), sp.bounds.half_width());
  else if (sp.output_scale != 1.0)
    out = sp.output_scale * out;
  return out;
}

BoundNetwork bind(ad::Tape& tape, const NetworkParams& params, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(params.tensors.size());
  for (const Matrix& t : params.tensors)
    vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  return BoundNetwork(&params, std::move(vars));
}

Matrix forward_batch(const NetworkParams& params, double t, const Matrix& states) {
  // Same primitives as the differentiable path, so values agree bit for bit.
  ad::Tape tape;
  const BoundNetwork net = bind(tape, params, false);
  return net(t, tape.constant(states)).value();
}

Vector forward(const NetworkParams& params, double t, const Vector& s) {
  return forward_batch(params, t, Matrix(s)).col(0);
}

Vector control_forward(const NetworkParams& omega, const ControlBounds& bounds, double t,
                       const Vector& s) {
  bounds.validate();
  if (bounds.dim() != omega.spec.output_dim)
    throw ad::ShapeError("control_forward: bounds dimension differs from network output");
  ad::Tape tape;
  const BoundNetwork net = bind(tape, omega, false);
  const ad::Var raw = net.raw(t, tape.constant(Matrix(s)));
  return ad::bounded(raw, bounds.center(), bounds.half_width()).value().col(0);
}

ad::Var input_jacobian(const BoundNetwork& net, double t, const ad::Var& s) {
  return ad::jacobian([&](const ad::Var& x) { return net(t, x); }, s);
}

Matrix input_jacobian(const NetworkParams& xi, double t, const Vector& s) {
  ad::Tape tape;
  const BoundNetwork net = bind(tape, xi, false);
  return input_jacobian(net, t, tape.constant(Matrix(s))).value();
}

// ---------------------------------------------------------------------------
// Checkpoint documents

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw std::invalid_argument("checkpoint: matrix row count mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw std::invalid_argument("checkpoint: matrix column count mismatch");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const ControlBounds& bounds) {
  return {{"lower", std::vector<double>(bounds.lower.data(), bounds.lower.data() + bounds.lower.size())},
          {"upper", std::vector<double>(bounds.upper.data(), bounds.upper.data() + bounds.upper.size())}};
}

ControlBounds bounds_from_json(const nlohmann::json& j) {
  ControlBounds b{vector_from_json(j.at("lower")), vector_from_json(j.at("upper"))};
  b.validate();
  return b;
}

nlohmann::json to_json(const NetworkParams& params) {
  const NetworkSpec& sp = params.spec;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < params.layers(); ++l) {
    layers.push_back({{"weight", matrix_to_json(params.weight(l))},
                      {"bias", std::vector<double>(params.bias(l).data(),
                                                   params.bias(l).data() + params.bias(l).size())}});
  }
  nlohmann::json j = {
      {"state_dim", sp.state_dim},
      {"hidden_widths", sp.hidden_widths},
      {"output_dim", sp.output_dim},
      {"activation", "tanh"},
      {"output_map", sp.output_map == OutputMap::BoxBounded ? "box-bounded" : "identity"},
      {"stationary", sp.stationary},
      {"horizon", sp.horizon},
      {"seed", params.seed},
      {"layers", std::move(layers)},
  };
  if (sp.output_map == OutputMap::BoxBounded) j["bounds"] = to_json(sp.bounds);
  else j["output_scale"] = sp.output_scale;
  return j;
}

NetworkParams network_from_json(const nlohmann::json& j) {
  NetworkParams p;
  NetworkSpec& sp = p.spec;
  sp.state_dim = j.at("state_dim").get<int>();
  sp.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  sp.output_dim = j.at("output_dim").get<int>();
  const auto map = j.at("output_map").get<std::string>();
  if (map == "box-bounded") sp.output_map = OutputMap::BoxBounded;
  else if (map == "identity") sp.output_map = OutputMap::Identity;
  else throw std::invalid_argument("checkpoint: unknown output_map '" + map + "'");
  sp.stationary = j.at("stationary").get<bool>();
  sp.horizon = j.at("horizon").get<double>();
  if (sp.output_map == OutputMap::BoxBounded) sp.bounds = bounds_from_json(j.at("bounds"));
  else sp.output_scale = j.value("output_scale", 1.0);
  p.seed = j.at("seed").get<std::uint64_t>();

  const auto& layers = j.at("layers");
  Eigen::Index fan_in = sp.input_dim();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::Index fan_out =
        l < sp.hidden_widths.size() ? sp.hidden_widths[l] : static_cast<Eigen::Index>(sp.output_dim);
    p.tensors.push_back(matrix_from_json(layers[l].at("weight"), fan_out, fan_in));
    Vector b = vector_from_json(layers[l].at("bias"));
    if (b.size() != fan_out) throw std::invalid_argument("checkpoint: bias length mismatch");
    p.tensors.push_back(Matrix(b));
    fan_in = fan_out;
  }
  p.validate();
  return p;
}

}  // namespace nho
