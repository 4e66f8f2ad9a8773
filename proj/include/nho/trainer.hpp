#pragma once

// Stochastic-gradient training of the control and field networks.

#include "nho/config.hpp"
#include "nho/losses.hpp"
#include "nho/model.hpp"
#include "nho/simulator.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace nho {

/// gamma0 / (1 + k / k0).
double lr_schedule(long k, double gamma0, double k0);

struct OptimizerState {
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One update of `params` in place. Adaptive-moment uses decay rates
/// 0.9 / 0.999, stabilizer 1e-8 and bias correction.
void optimizer_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, OptimizerState& state,
                    Optimizer optimizer, double lr);

/// Scales grads so their global norm is at most max_norm; returns the norm
/// before scaling.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

/// Control tensors followed by field tensors.
std::vector<Matrix> flatten(const Psi& psi);
void unflatten(const std::vector<Matrix>& tensors, Psi& psi);

struct Gradients {
  LossReport report;
  std::vector<Matrix> grads;  // same layout as flatten()
};

/// Loss parts and gradients for one iteration's batch (noise epoch
/// `iteration`).
Gradients compute_gradients(const Psi& psi, const ProblemSpec& spec, const TrainConfig& cfg, long iteration);

/// Variant with explicit initial states and increments for one chunk; the
/// batch mean uses `normalizer`. `ablate_q` drops the q dM term from the
/// adjoint update.
Gradients chunk_gradients(const Psi& psi, const ProblemSpec& spec, const TrainConfig& cfg, const Matrix& S0,
                          const std::vector<Matrix>& increments, double normalizer, std::uint64_t first_path,
                          bool ablate_q = false);

struct TrainResult {
  Psi psi;
  std::vector<LossReport> history;
  std::vector<std::string> checkpoints;
};

/// Runs cfg.iterations updates from `initial` (or a fresh init from
/// cfg.init_seed). When cfg.output_dir is set, writes history.csv and
/// checkpoints there. Progress lines go to `log` when non-null.
TrainResult train(const TrainConfig& cfg, const ProblemSpec& spec, const Psi* initial = nullptr,
                  std::ostream* log = nullptr);

/// The checkpoint document for psi after `iteration` updates.
nlohmann::json checkpoint_json(const TrainConfig& cfg, const Psi& psi, long iteration);

struct Checkpoint {
  TrainConfig config;
  Psi psi;
  long iteration = 0;
};

/// Reads a checkpoint file; throws ConfigError("no checkpoint found ...")
/// when the path does not exist.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nho
