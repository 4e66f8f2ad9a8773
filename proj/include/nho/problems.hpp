#pragma once

// Benchmark problem specs and Monte-Carlo reference oracles.

#include "nho/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nho {

struct BenchmarkId {
  /// p1-terminal-log, p2-double-well, p3-liquidation or ergodic-ou.
  std::string name;
  int d = 10;
  /// Problem parameters by name; missing entries take the documented
  /// defaults (see benchmark_parameters).
  std::map<std::string, double> params;
};

const std::vector<std::string>& benchmark_names();

/// Documented parameters of a benchmark with their default values.
std::map<std::string, double> benchmark_parameters(const std::string& name);

/// The benchmark's spec, already in maximization form (sense records the
/// original direction). Throws std::invalid_argument for unknown ids or
/// parameters out of range.
ProblemSpec make_problem(const BenchmarkId& id);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

struct VectorEstimate {
  Vector value;
  Vector std_error;
};

/// ln E[exp(G(s + W))] with W ~ N(0, (T - t) I) for the terminal-log
/// problem (T = 1), estimated from `samples` draws.
Estimate p1_reference_value(int d, double t, const Vector& s, std::int64_t samples, std::uint64_t seed);

/// E[exp(G) grad G (s + W)] / E[exp(G)(s + W)], componentwise with
/// delta-method standard errors.
VectorEstimate p1_reference_control(int d, double t, const Vector& s, std::int64_t samples,
                                    std::uint64_t seed);

}  // namespace nho
