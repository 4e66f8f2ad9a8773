#pragma once

// Tanh multilayer perceptrons for the feedback control and the decoupling
// field. A network reads (t / horizon, s) or, in the stationary variant, s
// alone.

#include "nho/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace nho {

using ad::Matrix;
using ad::Vector;

enum class OutputMap { Identity, BoxBounded };

/// Componentwise box lower < upper.
struct ControlBounds {
  Vector lower;
  Vector upper;

  static ControlBounds box(int m, double lo, double hi);
  Vector center() const { return 0.5 * (lower + upper); }
  Vector half_width() const { return 0.5 * (upper - lower); }
  int dim() const { return static_cast<int>(lower.size()); }
  bool contains_strictly(const Vector& a) const;
  void validate() const;
};

struct NetworkSpec {
  int state_dim = 1;
  std::vector<int> hidden_widths;
  int output_dim = 1;
  OutputMap output_map = OutputMap::Identity;
  bool stationary = false;
  double horizon = 1.0;
  ControlBounds bounds;  // used when output_map is BoxBounded
  /// Multiplies identity outputs, so the trained layers work in O(1) units.
  double output_scale = 1.0;

  int input_dim() const { return stationary ? state_dim : state_dim + 1; }
  void validate() const;
};

/// Two hidden layers of width max(64, 2d).
std::vector<int> default_hidden_widths(int d);

struct NetworkParams {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  /// weight_0, bias_0, weight_1, bias_1, ... with biases stored as columns.
  std::vector<Matrix> tensors;

  std::size_t layers() const { return tensors.size() / 2; }
  const Matrix& weight(std::size_t l) const { return tensors[2 * l]; }
  const Matrix& bias(std::size_t l) const { return tensors[2 * l + 1]; }
  Matrix& weight(std::size_t l) { return tensors[2 * l]; }
  Matrix& bias(std::size_t l) { return tensors[2 * l + 1]; }
  std::size_t parameter_count() const;
  bool finite() const;
  void validate() const;
};

/// Glorot-uniform weights, zero biases; deterministic in seed.
NetworkParams init_network(const NetworkSpec& spec, std::uint64_t seed);

/// Network input features for a batch: (t / horizon) row stacked over the
/// states, or the states alone for stationary networks.
Matrix input_features(const NetworkSpec& spec, double t, const Matrix& states);

/// Plain evaluation at one point; applies the spec's output map.
Vector forward(const NetworkParams& params, double t, const Vector& s);
/// Plain batched evaluation, one state per column.
Matrix forward_batch(const NetworkParams& params, double t, const Matrix& states);

/// center + half * tanh(raw) with the supplied box.
Vector control_forward(const NetworkParams& omega, const ControlBounds& bounds,
                       double t, const Vector& s);

/// d_out x d Jacobian with respect to s (not t).
Matrix input_jacobian(const NetworkParams& xi, double t, const Vector& s);

/// A network whose tensors live on a tape.
class BoundNetwork {
 public:
  BoundNetwork() = default;
  BoundNetwork(const NetworkParams* params, std::vector<ad::Var> tensors)
      : params_(params), tensors_(std::move(tensors)) {}

  /// Output for states (d x B) at a common time t.
  ad::Var operator()(double t, const ad::Var& states) const;
  /// Output before the output map.
  ad::Var raw(double t, const ad::Var& states) const;

  const NetworkSpec& spec() const { return params_->spec; }
  const std::vector<ad::Var>& tensors() const { return tensors_; }

 private:
  const NetworkParams* params_ = nullptr;
  std::vector<ad::Var> tensors_;
};

/// Records params on `tape` as variables (trainable) or constants.
BoundNetwork bind(ad::Tape& tape, const NetworkParams& params, bool trainable);

/// Jacobian of a bound network in s at a single column state, on its tape.
ad::Var input_jacobian(const BoundNetwork& net, double t, const ad::Var& s);

nlohmann::json to_json(const NetworkParams& params);
NetworkParams network_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ControlBounds& bounds);
ControlBounds bounds_from_json(const nlohmann::json& j);

}  // namespace nho
