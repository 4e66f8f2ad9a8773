#include "nho/trainer.hpp"

#include "nho/eval.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace nho {

using ad::Var;
namespace fs = std::filesystem;

double lr_schedule(long k, double gamma0, double k0) {
  if (k < 0) throw std::invalid_argument("lr_schedule: k must be >= 0");
  return gamma0 / (1.0 + static_cast<double>(k) / k0);
}

void optimizer_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, OptimizerState& state,
                    Optimizer optimizer, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer_step: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw ad::ShapeError("optimizer_step: gradient shape differs from parameter shape");
    if (!grads[i].allFinite())
      throw NonFiniteGradient("non-finite gradient in parameter tensor " + std::to_string(i));
  }
  ++state.step;
  if (optimizer == Optimizer::PlainSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const Matrix& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = beta1 * m + (1.0 - beta1) * grads[i];
    v = beta2 * v + (1.0 - beta2) * grads[i].cwiseAbs2();
    params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm)
    for (Matrix& g : grads) g *= max_norm / norm;
  return norm;
}

std::vector<Matrix> flatten(const Psi& psi) {
  std::vector<Matrix> out = psi.control.tensors;
  out.insert(out.end(), psi.field.tensors.begin(), psi.field.tensors.end());
  return out;
}

void unflatten(const std::vector<Matrix>& tensors, Psi& psi) {
  const std::size_t nc = psi.control.tensors.size();
  if (tensors.size() != nc + psi.field.tensors.size()) throw std::invalid_argument("unflatten: tensor count mismatch");
  for (std::size_t i = 0; i < nc; ++i) psi.control.tensors[i] = tensors[i];
  for (std::size_t i = nc; i < tensors.size(); ++i) psi.field.tensors[i - nc] = tensors[i];
}

// ---------------------------------------------------------------------------

Gradients chunk_gradients(const Psi& psi, const ProblemSpec& spec, const TrainConfig& cfg, const Matrix& S0,
                          const std::vector<Matrix>& increments, double normalizer, std::uint64_t first_path,
                          bool ablate_q) {
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps());
  const bool coupled = cfg.control_objective == ControlObjective::Coupled;
  const bool ergodic = cfg.mode == LossMode::Ergodic;
  const int first_step = cfg.burn_in_steps();

  ad::Tape tape;
  const BoundPsi bound = bind(tape, psi, coupled, true);
  RolloutOptions ro;
  ro.jacobian_norms = !ergodic && cfg.lambda > 0.0;
  ro.record_q = ergodic || spec.sigma_depends_on_control;
  ro.drop_q_increment = ablate_q;
  ro.first_path = first_path;
  const Trajectory tr = rollout(tape, bound, spec, grid, S0, increments, ro);

  Gradients out;
  LossReport& rep = out.report;
  rep.lambda = cfg.lambda;
  rep.lambda_lyap = cfg.lambda_lyap;
  Var objective;
  if (!ergodic) {
    const Var term = terminal_loss(tr, spec, normalizer);
    rep.terminal = term.scalar();
    objective = term;
    if (cfg.lambda > 0.0) {
      const Var reg = gradient_regularizer(tr, grid, 1.0, normalizer);
      rep.grad_reg = reg.scalar();
      objective = objective + cfg.lambda * reg;
    }
  } else {
    const Var erg = ergodic_loss(tr, spec, grid, first_step, normalizer);
    const Var lyap = lyapunov_regularizer(tr, spec, grid, first_step, 1.0, normalizer);
    rep.ergodic = erg.scalar();
    rep.lyapunov = lyap.scalar();
    objective = erg;
    if (coupled && cfg.lambda_lyap > 0.0) objective = objective + cfg.lambda_lyap * lyap;
  }
  rep.total = loss_total(cfg.mode, rep);

  BoundNetwork control = bound.control;
  if (coupled) {
    rep.hamiltonian = mean_hamiltonian(tr, spec, grid, 0, normalizer).scalar();
  } else {
    // Control update: ascend H(t, S, alpha_omega(t, S), p, q) with the
    // rollout's states and adjoints held fixed. Finite-horizon runs use the
    // simulated adjoint p~_t: H is affine in p, so the ascent targets
    // E[p~_t | S_t], which the terminal loss pins down even where Phi is
    // only determined up to a state-independent offset.
    control = bind(tape, psi.control, true);
    Trajectory fixed;
    for (int i = 0; i < grid.steps(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Var S = tape.constant(tr.S[k].value());
      fixed.S.push_back(S);
      fixed.A.push_back(control(grid.times[k], S));
      fixed.Phi.push_back(tape.constant(ergodic ? tr.Phi[k].value() : tr.P[k].value()));
      if (spec.sigma_depends_on_control) {
        std::vector<Var> Q;
        for (const Var& q : tr.Q[k]) Q.push_back(tape.constant(q.value()));
        fixed.Q.push_back(std::move(Q));
      }
    }
    fixed.S.push_back(tape.constant(tr.S.back().value()));
    const Var H = mean_hamiltonian(fixed, spec, grid, 0, normalizer);
    rep.hamiltonian = H.scalar();
    Var control_objective = -cfg.hamiltonian_weight * H;
    if (ergodic && cfg.lambda_lyap > 0.0)
      control_objective =
          control_objective + lyapunov_regularizer(fixed, spec, grid, first_step, cfg.lambda_lyap, normalizer);
    objective = objective + control_objective;
  }

  tape.backward(objective);
  for (const Var& v : control.tensors()) out.grads.push_back(tape.gradient(v));
  for (const Var& v : bound.field.tensors()) out.grads.push_back(tape.gradient(v));
  return out;
}

Gradients compute_gradients(const Psi& psi, const ProblemSpec& spec, const TrainConfig& cfg, long iteration) {
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps());
  const NoiseStream noise = NoiseStream(cfg.noise_seed, NoiseStream::Train).with_epoch(static_cast<std::uint64_t>(iteration));
  const InitialStates initial{spec.s0, cfg.s0_std};
  const int chunk = cfg.chunk_paths;
  const int chunks = (cfg.batch + chunk - 1) / chunk;
  std::vector<Gradients> parts(static_cast<std::size_t>(chunks));

  parallel_chunks(chunks, cfg.workers, [&](int c) {
    const int first = c * chunk;
    const int n = std::min(chunk, cfg.batch - first);
    const auto first_path = static_cast<std::uint64_t>(first);
    const Matrix S0 = initial.sample(first_path, n, noise);
    const auto dM = sample_increments(spec.quadratic_variation, grid, first_path, n, noise);
    parts[static_cast<std::size_t>(c)] =
        chunk_gradients(psi, spec, cfg, S0, dM, static_cast<double>(cfg.batch), first_path);
  });

  Gradients total = std::move(parts.front());
  for (std::size_t c = 1; c < parts.size(); ++c) {
    const Gradients& p = parts[c];
    for (std::size_t i = 0; i < total.grads.size(); ++i) total.grads[i] += p.grads[i];
    total.report.terminal += p.report.terminal;
    total.report.grad_reg += p.report.grad_reg;
    total.report.ergodic += p.report.ergodic;
    total.report.lyapunov += p.report.lyapunov;
    total.report.hamiltonian += p.report.hamiltonian;
  }
  total.report.total = loss_total(cfg.mode, total.report);
  return total;
}

// ---------------------------------------------------------------------------

nlohmann::json checkpoint_json(const TrainConfig& cfg, const Psi& psi, long iteration) {
  nlohmann::json config = to_json(cfg);
  // Keys that do not affect results stay out so checkpoints compare equal
  // across worker counts and output locations.
  config.erase("workers");
  config.erase("output_dir");
  config.erase("progress_every");
  return {{"format", "nho-checkpoint"}, {"version", 1}, {"iteration", iteration}, {"config", config},
          {"psi", to_json(psi)}};
}

Checkpoint load_checkpoint(const std::string& path) {
  if (path.empty() || !fs::exists(path)) throw ConfigError("no checkpoint found at '" + path + "'");
  fs::path file = path;
  if (fs::is_directory(file)) {
    file /= "checkpoint_final.json";
    if (!fs::exists(file)) throw ConfigError("no checkpoint found in '" + path + "'");
  }
  std::ifstream in(file);
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "nho-checkpoint")
    throw ConfigError("'" + file.string() + "' is not a checkpoint file");
  Checkpoint ck;
  ck.config = parse_config(j.at("config")).train;
  ck.psi = psi_from_json(j.at("psi"));
  ck.iteration = j.at("iteration").get<long>();
  return ck;
}

namespace {

void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ProblemSpec& spec, const Psi* initial, std::ostream* log) {
  spec.validate();
  TrainResult result;
  result.psi = initial ? *initial : make_psi(spec, cfg.hidden_widths, cfg.init_seed);

  const bool to_disk = !cfg.output_dir.empty();
  std::ofstream history;
  std::ofstream eval_log;
  fs::path dir;
  if (to_disk) {
    dir = cfg.output_dir;
    fs::create_directories(dir);
    history.open(dir / "history.csv");
    history << LossReport::csv_header() << '\n';
    if (cfg.eval_every > 0) {
      eval_log.open(dir / "eval.csv");
      eval_log << "iteration,value,std_error\n";
    }
  }
  auto save = [&](long iteration, const std::string& name) {
    if (!to_disk) return;
    const fs::path file = dir / name;
    write_json(file, checkpoint_json(cfg, result.psi, iteration));
    result.checkpoints.push_back(file.string());
  };

  std::vector<Matrix> params = flatten(result.psi);
  OptimizerState state;
  for (long k = 0; k < cfg.iterations; ++k) {
    const double lr = lr_schedule(k, cfg.lr0, cfg.lr_decay_steps);
    Gradients g = compute_gradients(result.psi, spec, cfg, k);
    result.history.push_back(g.report);
    if (to_disk) history << g.report.csv_row(k, lr) << '\n' << std::flush;

    const double norm = clip_global_norm(g.grads, cfg.grad_clip);
    optimizer_step(params, g.grads, state, cfg.optimizer, lr);
    unflatten(params, result.psi);

    if (log && cfg.progress_every > 0 && (k % cfg.progress_every == 0 || k + 1 == cfg.iterations)) {
      char line[256];
      std::snprintf(line, sizeof line, "iter %6ld  total %.6e  terminal %.6e  ergodic %.6e  H %.5f  |g| %.3e  lr %.3e",
                    k, g.report.total, g.report.terminal, g.report.ergodic, g.report.hamiltonian, norm, lr);
      *log << line << std::endl;
    }
    if (cfg.eval_every > 0 && (k + 1) % cfg.eval_every == 0) {
      const Estimate v = estimate_value(result.psi, spec, spec.s0, cfg.eval_batch, cfg.noise_seed,
                                        {cfg.grid_steps(), cfg.workers, 4096});
      if (eval_log.is_open()) eval_log << (k + 1) << ',' << v.value << ',' << v.std_error << '\n' << std::flush;
      if (log) *log << "eval after " << (k + 1) << " iterations: V(0, s0) = " << v.value << " +- " << v.std_error
                    << std::endl;
    }
    if (cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 && k + 1 != cfg.iterations) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%07ld.json", k + 1);
      save(k + 1, name);
    }
  }
  save(cfg.iterations, "checkpoint_final.json");
  return result;
}

}  // namespace nho
