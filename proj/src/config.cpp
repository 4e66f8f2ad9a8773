#include "nho/config.hpp"

#include "nho/network.hpp"
#include "nho/simulator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace nho {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  long integer(const std::string& key, long fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (v->is_number_integer()) return v->get<long>();
    if (v->is_number_float() && std::floor(v->get<double>()) == v->get<double>() &&
        std::abs(v->get<double>()) < 9e15)
      return static_cast<long>(v->get<double>());
    throw ConfigError(at(key) + ": expected an integer");
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<long long>() >= 0) return static_cast<std::uint64_t>(v->get<long long>());
    throw ConfigError(at(key) + ": expected a non-negative integer");
  }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(at(key) + ": expected a number");
    return v->get<double>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(at(key) + ": expected an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number_integer())
        throw ConfigError(at(key) + "[" + std::to_string(i) + "]: expected an integer");
      out.push_back((*v)[i].get<int>());
    }
    return out;
  }

  void finish() const {
    for (const auto& item : obj_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + at(item.key()) + "'");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <class E>
E parse_enum(const std::string& where, const std::string& text,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (text == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(where + ": '" + text + "' is not one of {" + names + "}");
}

}  // namespace

int TrainConfig::grid_steps() const {
  if (steps > 0) return steps;
  const auto params = benchmark_parameters(benchmark.name);
  double horizon = 1.0;
  if (auto it = benchmark.params.find("horizon"); it != benchmark.params.end()) horizon = it->second;
  else if (auto jt = params.find("horizon"); jt != params.end()) horizon = jt->second;
  return default_steps(horizon);
}

int TrainConfig::burn_in_steps() const {
  if (mode != LossMode::Ergodic) return 0;
  return static_cast<int>(std::floor(burn_in * grid_steps()));
}

std::string to_string(Optimizer o) { return o == Optimizer::PlainSgd ? "plain-sgd" : "adaptive-moment"; }
std::string to_string(LossMode m) { return m == LossMode::Ergodic ? "ergodic" : "finite-horizon"; }
std::string to_string(ControlObjective c) {
  return c == ControlObjective::Coupled ? "coupled" : "hamiltonian";
}

RunConfig parse_config(const json& doc) {
  Reader r(doc, "$");
  RunConfig run;
  TrainConfig& c = run.train;

  if (!r.has("benchmark")) throw ConfigError("missing required config key 'benchmark'");
  c.benchmark.name = r.string("benchmark", "");
  const auto& names = benchmark_names();
  if (std::find(names.begin(), names.end(), c.benchmark.name) == names.end())
    throw ConfigError(r.at("benchmark") + ": unknown benchmark '" + c.benchmark.name + "'");
  const bool ergodic = c.benchmark.name == "ergodic-ou";

  c.benchmark.d = static_cast<int>(r.integer("d", ergodic ? 1 : 10));
  check(c.benchmark.d >= 1, r.at("d") + ": must be >= 1");

  const auto defaults = benchmark_parameters(c.benchmark.name);
  c.benchmark.params = defaults;
  if (const json* problem = r.find("problem")) {
    Reader pr(*problem, r.at("problem"));
    for (const auto& [key, value] : defaults) c.benchmark.params[key] = pr.number(key, value);
    pr.finish();
  }

  c.mode = parse_enum<LossMode>(r.at("mode"), r.string("mode", ergodic ? "ergodic" : "finite-horizon"),
                                {{"finite-horizon", LossMode::FiniteHorizon}, {"ergodic", LossMode::Ergodic}});
  c.steps = static_cast<int>(r.integer("steps", 0));
  if (c.steps == 0) c.steps = c.grid_steps();
  c.batch = static_cast<int>(r.integer("batch", c.batch));
  c.iterations = r.integer("iterations", c.iterations);
  c.optimizer = parse_enum<Optimizer>(
      r.at("optimizer"), r.string("optimizer", to_string(c.optimizer)),
      {{"adaptive-moment", Optimizer::AdaptiveMoment}, {"plain-sgd", Optimizer::PlainSgd}});
  c.lr0 = r.number("lr0", c.lr0);
  c.lr_decay_steps = r.number("lr_decay_steps", c.lr_decay_steps);
  c.lambda = r.number("lambda", c.lambda);
  c.lambda_lyap = r.number("lambda_lyap", c.lambda_lyap);
  c.init_seed = r.seed("init_seed", c.init_seed);
  c.noise_seed = r.seed("noise_seed", c.noise_seed);
  c.burn_in = r.number("burn_in", c.burn_in);
  c.control_objective = parse_enum<ControlObjective>(
      r.at("control_objective"), r.string("control_objective", to_string(c.control_objective)),
      {{"hamiltonian", ControlObjective::Hamiltonian}, {"coupled", ControlObjective::Coupled}});
  c.hamiltonian_weight = r.number("hamiltonian_weight", c.hamiltonian_weight);
  c.grad_clip = r.number("grad_clip", c.grad_clip);
  c.hidden_widths = r.int_list("hidden_widths", default_hidden_widths(c.benchmark.d));
  c.s0_std = r.number("s0_std", ergodic ? 1.0 : c.s0_std);
  c.chunk_paths = static_cast<int>(r.integer("chunk_paths", c.chunk_paths));
  c.workers = static_cast<int>(r.integer("workers", c.workers));
  c.eval_every = r.integer("eval_every", c.eval_every);
  c.eval_batch = r.integer("eval_batch", c.eval_batch);
  c.checkpoint_every = r.integer("checkpoint_every", c.checkpoint_every);
  c.progress_every = r.integer("progress_every", c.progress_every);
  c.output_dir = r.string("output_dir", c.output_dir);

  if (const json* slice = r.find("slice")) {
    Reader sr(*slice, r.at("slice"));
    run.slice.axis = static_cast<int>(sr.integer("axis", run.slice.axis));
    run.slice.lo = sr.number("lo", run.slice.lo);
    run.slice.hi = sr.number("hi", run.slice.hi);
    run.slice.points = static_cast<int>(sr.integer("points", run.slice.points));
    sr.finish();
  }
  run.path_coordinate = static_cast<int>(r.integer("path_coordinate", run.path_coordinate));
  r.finish();

  check(c.steps >= 1, "$.steps: must be >= 1");
  check(c.batch >= 1, "$.batch: must be >= 1");
  check(c.iterations >= 1, "$.iterations: must be >= 1");
  check(c.lr0 > 0.0, "$.lr0: must be > 0");
  check(c.lr_decay_steps > 0.0, "$.lr_decay_steps: must be > 0");
  check(c.lambda >= 0.0, "$.lambda: must be >= 0");
  check(c.lambda_lyap >= 0.0, "$.lambda_lyap: must be >= 0");
  check(c.burn_in >= 0.0 && c.burn_in < 1.0, "$.burn_in: must be in [0, 1)");
  check(c.hamiltonian_weight >= 0.0, "$.hamiltonian_weight: must be >= 0");
  check(c.grad_clip >= 0.0, "$.grad_clip: must be >= 0");
  check(c.s0_std >= 0.0, "$.s0_std: must be >= 0");
  check(c.chunk_paths >= 1, "$.chunk_paths: must be >= 1");
  check(c.workers >= 1, "$.workers: must be >= 1");
  check(c.eval_every >= 0, "$.eval_every: must be >= 0");
  check(c.eval_batch >= 1, "$.eval_batch: must be >= 1");
  check(c.checkpoint_every >= 0, "$.checkpoint_every: must be >= 0");
  check(c.progress_every >= 0, "$.progress_every: must be >= 0");
  for (int w : c.hidden_widths) check(w >= 1, "$.hidden_widths: widths must be >= 1");
  check(run.slice.axis >= 1 && run.slice.axis <= c.benchmark.d, "$.slice.axis: must be in [1, d]");
  check(run.slice.lo < run.slice.hi, "$.slice: lo must be < hi");
  check(run.slice.points >= 2, "$.slice.points: must be >= 2");
  check(run.path_coordinate >= 1 && run.path_coordinate <= c.benchmark.d, "$.path_coordinate: must be in [1, d]");
  if (c.mode == LossMode::Ergodic)
    check(c.benchmark.name == "ergodic-ou", "$.mode: ergodic mode needs a stationary benchmark (ergodic-ou)");
  else
    check(c.benchmark.name != "ergodic-ou", "$.mode: ergodic-ou runs in ergodic mode");

  try {
    make_problem(c.benchmark);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("$.problem: ") + e.what());
  }
  return run;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not an object");
    start = dot + 1;
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

json to_json(const TrainConfig& c) {
  json problem = json::object();
  for (const auto& [key, value] : c.benchmark.params) problem[key] = value;
  return {
      {"benchmark", c.benchmark.name},
      {"d", c.benchmark.d},
      {"problem", problem},
      {"mode", to_string(c.mode)},
      {"steps", c.steps},
      {"batch", c.batch},
      {"iterations", c.iterations},
      {"optimizer", to_string(c.optimizer)},
      {"lr0", c.lr0},
      {"lr_decay_steps", c.lr_decay_steps},
      {"lambda", c.lambda},
      {"lambda_lyap", c.lambda_lyap},
      {"init_seed", c.init_seed},
      {"noise_seed", c.noise_seed},
      {"burn_in", c.burn_in},
      {"control_objective", to_string(c.control_objective)},
      {"hamiltonian_weight", c.hamiltonian_weight},
      {"grad_clip", c.grad_clip},
      {"hidden_widths", c.hidden_widths},
      {"s0_std", c.s0_std},
      {"chunk_paths", c.chunk_paths},
      {"workers", c.workers},
      {"eval_every", c.eval_every},
      {"eval_batch", c.eval_batch},
      {"checkpoint_every", c.checkpoint_every},
      {"progress_every", c.progress_every},
      {"output_dir", c.output_dir},
  };
}

json to_json(const RunConfig& cfg) {
  json j = to_json(cfg.train);
  j["slice"] = {{"axis", cfg.slice.axis}, {"lo", cfg.slice.lo}, {"hi", cfg.slice.hi}, {"points", cfg.slice.points}};
  j["path_coordinate"] = cfg.path_coordinate;
  return j;
}

void echo_config(const RunConfig& cfg) {
  if (cfg.train.output_dir.empty()) return;
  std::filesystem::create_directories(cfg.train.output_dir);
  std::ofstream out(std::filesystem::path(cfg.train.output_dir) / "config.json");
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace nho
