// nho: train, evaluate and check Hamiltonian-operator FBSDE solvers.

#include "nho/checks.hpp"
#include "nho/config.hpp"
#include "nho/eval.hpp"
#include "nho/problems.hpp"
#include "nho/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace nho;

namespace {

enum Exit { Ok = 0, Validation = 1, Numerical = 2 };

int fail(Exit code, const std::string& kind, const std::string& message, nlohmann::json extra = {}) {
  nlohmann::json j = {{"status", "error"}, {"kind", kind}, {"message", message}};
  if (!extra.is_null()) j.update(extra);
  std::cerr << j.dump() << '\n';
  return code;
}

// "axis=1,lo=-3,hi=3,n=101"
SliceDefaults parse_slice(const std::string& text, SliceDefaults out) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("slice: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "axis")
        out.axis = std::stoi(value);
      else if (key == "lo")
        out.lo = std::stod(value);
      else if (key == "hi")
        out.hi = std::stod(value);
      else if (key == "n")
        out.points = std::stoi(value);
      else
        throw ConfigError("slice: unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("slice: bad value for '" + key + "': " + value);
    }
  }
  return out;
}

long parse_count(const std::string& text, const std::string& what) {
  double v = 0.0;
  try {
    v = std::stod(text);
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a number: " + text);
  }
  if (!(v >= 1.0) || v != std::floor(v) || v > 1e12) throw ConfigError(what + ": expected a positive integer");
  return static_cast<long>(v);
}

std::string benchmark_alias(const std::string& name) {
  static const std::map<std::string, std::string> alias = {
      {"p1", "p1-terminal-log"}, {"p2", "p2-double-well"}, {"p3", "p3-liquidation"}, {"ou", "ergodic-ou"}};
  const auto it = alias.find(name);
  return it == alias.end() ? name : it->second;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  int workers = 0;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config, a.overrides);
  if (a.workers > 0) cfg.train.workers = a.workers;
  if (cfg.train.output_dir.empty()) throw ConfigError("train needs output_dir (set it in the config or with --set)");
  echo_config(cfg);
  const ProblemSpec spec = make_problem(cfg.train.benchmark);
  const TrainResult r = train(cfg.train, spec, nullptr, &std::cout);
  const LossReport& last = r.history.back();
  std::cout << nlohmann::json{{"status", "ok"},
                              {"iterations", r.history.size()},
                              {"terminal", last.terminal},
                              {"total", last.total},
                              {"output_dir", cfg.train.output_dir}}
                   .dump()
            << '\n';
  return Ok;
}

struct EvalArgs {
  std::string checkpoint;
  std::string slice;
  bool path = false;
  std::string batch = "10000";
  std::uint64_t seed = 7;
  double t = 0.0;
  std::string reference_samples = "100000";
  std::string out;
  int workers = 1;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ProblemSpec spec = make_problem(ck.config.benchmark);
  const long batch = parse_count(a.batch, "--batch");
  fs::path out = a.out.empty() ? fs::path(a.checkpoint) : fs::path(a.out);
  if (a.out.empty() && !fs::is_directory(out)) out = out.parent_path();
  if (out.empty()) out = ".";
  fs::create_directories(out);
  EvalOptions opts;
  opts.workers = a.workers;
  opts.steps = ck.config.steps;

  nlohmann::json summary = {{"status", "ok"}, {"benchmark", spec.name}, {"iteration", ck.iteration}};
  const Estimate v0 = estimate_value(ck.psi, spec, spec.s0, batch, a.seed, opts, a.t);
  summary["value"] = v0.value;
  summary["std_error"] = v0.std_error;

  if (!a.slice.empty()) {
    const SliceDefaults sd = parse_slice(a.slice, {});
    SliceRequest req;
    req.axis = sd.axis - 1;
    req.lo = sd.lo;
    req.hi = sd.hi;
    req.points = sd.points;
    req.base = spec.s0;
    req.t = a.t;
    SliceReference reference;
    if (spec.name == "p1-terminal-log") {
      const long samples = parse_count(a.reference_samples, "--reference-samples");
      reference = [d = spec.d, t = a.t, seed = a.seed, axis = req.axis, samples](const Vector& s) {
        const Estimate v = p1_reference_value(d, t, s, samples, seed);
        const VectorEstimate c = p1_reference_control(d, t, s, samples, seed);
        return std::make_pair(v.value, c.value(axis));
      };
    }
    const auto rows = value_slice(ck.psi, spec, req, batch, a.seed, reference, opts);
    std::ofstream f(out / "slice.csv");
    write_slice_csv(f, rows);
    summary["slice"] = (out / "slice.csv").string();
  }
  if (a.path) {
    const auto rows = expected_path(ck.psi, spec, 0, batch, a.seed, {spec.s0, 0.0}, opts);
    std::ofstream f(out / "path.csv");
    write_path_csv(f, rows);
    summary["path"] = (out / "path.csv").string();
    summary["terminal_mean"] = rows.back().mean;
  }
  std::cout << summary.dump() << '\n';
  return Ok;
}

struct ReferenceArgs {
  std::string benchmark;
  int d = 10;
  std::string samples = "1e6";
  std::uint64_t seed = 11;
  double t = 0.0;
  std::string slice;
  std::string out;
};

int run_reference(const ReferenceArgs& a) {
  if (benchmark_alias(a.benchmark) != "p1-terminal-log")
    throw ConfigError("reference: only p1-terminal-log has a closed-form oracle");
  if (a.d < 1) throw ConfigError("reference: --d must be >= 1");
  if (!(a.t >= 0.0 && a.t <= 1.0)) throw ConfigError("reference: --t must be in [0, 1]");
  const long samples = parse_count(a.samples, "--samples");
  const SliceDefaults sd = a.slice.empty() ? SliceDefaults{1, 0.0, 0.0, 1} : parse_slice(a.slice, {});
  if (sd.axis < 1 || sd.axis > a.d) throw ConfigError("reference: slice axis out of range");
  std::ofstream file;
  if (!a.out.empty()) file.open(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << "coordinate,value,std_error,control,control_std_error\n";
  out.precision(10);
  for (int i = 0; i < sd.points; ++i) {
    const double x = sd.points == 1 ? sd.lo : sd.lo + (sd.hi - sd.lo) * i / (sd.points - 1);
    Vector s = Vector::Zero(a.d);
    s(sd.axis - 1) = x;
    const Estimate v = p1_reference_value(a.d, a.t, s, samples, a.seed);
    const VectorEstimate c = p1_reference_control(a.d, a.t, s, samples, a.seed);
    out << x << ',' << v.value << ',' << v.std_error << ',' << c.value(sd.axis - 1) << ','
        << c.std_error(sd.axis - 1) << '\n';
  }
  return Ok;
}

int run_check(const std::string& filter) {
  const auto results = run_checks(filter);
  int failed = 0;
  nlohmann::json names = nlohmann::json::array();
  for (const CheckResult& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n';
    if (!r.passed) {
      ++failed;
      names.push_back(r.name);
    }
  }
  if (results.empty()) return fail(Validation, "validation", "no check matches filter '" + filter + "'");
  std::cout << nlohmann::json{{"status", failed ? "fail" : "ok"},
                              {"checks", results.size()},
                              {"failed", names}}
                   .dump()
            << '\n';
  return failed ? Validation : Ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Hamiltonian operator FBSDE solver"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a control and decoupling field");
  train_cmd->add_option("--config", ta.config, "config file (JSON)")->required();
  train_cmd->add_option("--set", ta.overrides, "override key=value (repeatable)");
  train_cmd->add_option("--workers", ta.workers, "worker threads (does not change results)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "checkpoint file or run directory")->required();
  eval_cmd->add_option("--slice", ea.slice, "axis=1,lo=-3,hi=3,n=101 (axis is 1-based)");
  eval_cmd->add_flag("--path", ea.path, "write the expected path of the first coordinate");
  eval_cmd->add_option("--batch", ea.batch, "Monte-Carlo paths per estimate");
  eval_cmd->add_option("--seed", ea.seed, "evaluation noise seed");
  eval_cmd->add_option("--t", ea.t, "start time");
  eval_cmd->add_option("--reference-samples", ea.reference_samples, "oracle samples per slice point (p1)");
  eval_cmd->add_option("--out", ea.out, "output directory (default: the checkpoint's directory)");
  eval_cmd->add_option("--workers", ea.workers, "worker threads");

  ReferenceArgs ra;
  auto* ref_cmd = app.add_subcommand("reference", "closed-form Monte-Carlo oracle");
  ref_cmd->add_option("--benchmark", ra.benchmark, "benchmark id (p1)")->required();
  ref_cmd->add_option("--d", ra.d, "dimension");
  ref_cmd->add_option("--samples", ra.samples, "Monte-Carlo samples, e.g. 1e6");
  ref_cmd->add_option("--seed", ra.seed, "sampling seed");
  ref_cmd->add_option("--t", ra.t, "time");
  ref_cmd->add_option("--slice", ra.slice, "axis=1,lo=-2,hi=2,n=9");
  ref_cmd->add_option("--out", ra.out, "write the table here instead of stdout");

  std::string filter;
  auto* check_cmd = app.add_subcommand("check", "run the property suite");
  check_cmd->add_option("--filter", filter, "run checks whose name contains this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : Validation;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*ref_cmd) return run_reference(ra);
    if (*check_cmd) return run_check(filter);
  } catch (const NumericalFailure& e) {
    return fail(Numerical, "numerical", e.what(), {{"path", e.path()}, {"step", e.step()}});
  } catch (const NonFiniteGradient& e) {
    return fail(Numerical, "numerical", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(Validation, "validation", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(Validation, "validation", e.what());
  } catch (const std::exception& e) {
    return fail(Validation, "error", e.what());
  }
  return Ok;
}
