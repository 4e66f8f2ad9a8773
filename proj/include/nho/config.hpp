#pragma once

// Run configuration: a flat JSON document with explicit keys. Parsing rejects
// unknown keys and type mismatches; serialization materializes every default
// so an echoed config reproduces the run on its own.

#include "nho/losses.hpp"
#include "nho/problems.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nho {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Optimizer { AdaptiveMoment, PlainSgd };

/// How the control network is updated. Hamiltonian: the control ascends the
/// Hamiltonian along detached rollout states and adjoints while the field network fits
/// the training loss. Coupled: both networks descend the training loss.
enum class ControlObjective { Hamiltonian, Coupled };

struct TrainConfig {
  BenchmarkId benchmark;
  int steps = 0;  // 0 selects default_steps(horizon)
  int batch = 256;
  long iterations = 2000;
  Optimizer optimizer = Optimizer::AdaptiveMoment;
  double lr0 = 1e-3;
  double lr_decay_steps = 1000.0;
  double lambda = 0.0;
  double lambda_lyap = 0.1;
  std::uint64_t init_seed = 1;
  std::uint64_t noise_seed = 2;
  LossMode mode = LossMode::FiniteHorizon;
  double burn_in = 0.2;
  ControlObjective control_objective = ControlObjective::Hamiltonian;
  double hamiltonian_weight = 1.0;
  double grad_clip = 10.0;  // 0 disables clipping
  std::vector<int> hidden_widths;
  double s0_std = 0.1;
  int chunk_paths = 64;
  int workers = 1;
  long eval_every = 0;  // 0 disables periodic value estimates
  long eval_batch = 10000;
  long checkpoint_every = 500;
  long progress_every = 100;
  std::string output_dir;

  /// Number of grid steps excluded from stationary statistics.
  int burn_in_steps() const;
  int grid_steps() const;
};

struct SliceDefaults {
  int axis = 1;  // 1-based coordinate
  double lo = -3.0;
  double hi = 3.0;
  int points = 101;
};

struct RunConfig {
  TrainConfig train;
  SliceDefaults slice;
  int path_coordinate = 1;
};

/// Parses and validates a config document, filling defaults.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Applies "key=value" (dotted keys reach into objects; values are parsed
/// as JSON when possible, else taken as strings).
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

std::string to_string(Optimizer o);
std::string to_string(LossMode m);
std::string to_string(ControlObjective c);

/// Writes config.json into cfg.train.output_dir (created if needed).
void echo_config(const RunConfig& cfg);

}  // namespace nho
