#ifndef NEUMANN_SCENARIO_HPP
#define NEUMANN_SCENARIO_HPP

// Scenario files: one JSON object naming a phase space, a system, an action model and an
// experiment. Parsing is strict; every error carries the line of the offending key.

#include "neumann/flow.hpp"
#include "neumann/neumann.hpp"
#include "neumann/phase.hpp"
#include "neumann/solver.hpp"
#include "neumann/system.hpp"
#include "neumann/types.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace neumann {

using Json = nlohmann::json;

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& msg, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

enum class Experiment { CheckIdentities, CriticalSearch, Continuation, TaylorStudy, FuzzyStudy, Flow, StretchSweep };

inline constexpr std::array<Experiment, 7> kExperiments = {
    Experiment::CheckIdentities, Experiment::CriticalSearch, Experiment::Continuation, Experiment::TaylorStudy,
    Experiment::FuzzyStudy,      Experiment::Flow,           Experiment::StretchSweep};

inline const char* experiment_name(Experiment e) {
  switch (e) {
    case Experiment::CheckIdentities: return "check-identities";
    case Experiment::CriticalSearch: return "critical-search";
    case Experiment::Continuation: return "continuation";
    case Experiment::TaylorStudy: return "taylor-study";
    case Experiment::FuzzyStudy: return "fuzzy-study";
    case Experiment::Flow: return "flow";
    case Experiment::StretchSweep: return "stretch-sweep";
  }
  return "?";
}

struct BuiltinSystem {
  std::string name;
  std::string description;
  int dim_half = 1;
  Model model = Model::EuclideanExact;
  std::string H;
  std::string F;
};

inline const std::vector<BuiltinSystem>& builtin_systems() {
  static const std::vector<BuiltinSystem> list = {
      {"harmonic", "harmonic oscillator, every orbit has period one", 1, Model::EuclideanExact,
       "pi*(q1^2+p1^2)", "q1"},
      {"harmonic-nonautonomous", "time-modulated oscillator", 1, Model::EuclideanExact,
       "(1+0.5*sin(2*pi*t))*(q1^2+p1^2)", "q1"},
      {"harmonic-cubic", "oscillator with a cubic term, no half-period symmetry", 1, Model::EuclideanExact,
       "pi*(q1^2+p1^2)+q1^3", "q1"},
      {"morse-harmonic", "inverted oscillator with a cosine perturbation", 1, Model::EuclideanExact,
       "-pi*(q1^2+p1^2)-0.3*cos(2*pi*q1)", "q1"},
      {"torus-morse", "Morse function with four critical points on the torus", 1, Model::FlatTorus,
       "cos(2*pi*q1)+cos(2*pi*p1)", "sin(2*pi*q1)"},
      {"paper-coulomb-smoothed", "softened Coulomb potential, retardation -|q| smoothed", 1, Model::EuclideanExact,
       "p1^2/2-1/sqrt(q1^2+1)", "-smoothabs(q1)"},
  };
  return list;
}

struct BuiltinKernel {
  std::string name;
  double sigma = 0.0;
};

inline const std::vector<BuiltinKernel>& builtin_kernels() {
  static const std::vector<BuiltinKernel> list = {{"wrapped-gaussian-0.2", 0.2},
                                                   {"wrapped-gaussian-0.1", 0.1},
                                                   {"wrapped-gaussian-0.05", 0.05},
                                                   {"wrapped-gaussian-0.025", 0.025}};
  return list;
}

inline const BuiltinSystem* find_builtin(const std::string& name) {
  for (const auto& b : builtin_systems())
    if (b.name == name) return &b;
  return nullptr;
}

inline std::string list_builtins() {
  std::ostringstream os;
  os << "systems:\n";
  for (const auto& b : builtin_systems()) {
    os << "  " << b.name << " (" << model_name(b.model) << ", n=" << b.dim_half << "): " << b.description << "\n"
       << "    H = \"" << b.H << "\"\n"
       << "    F = \"" << b.F << "\"\n";
  }
  os << "kernels:\n";
  for (const auto& k : builtin_kernels())
    os << "  " << k.name << ": periodic Gaussian, sigma = " << detail::format_number(k.sigma) << ", unit mass\n";
  return os.str();
}

struct Scenario {
  std::string name;
  Experiment experiment = Experiment::CheckIdentities;
  std::uint64_t rng_seed = 1;
  std::string output;

  int dim_half = 1;
  Model space_model = Model::EuclideanExact;
  Primitive primitive = Primitive::PdQ;
  int N = 64;

  std::string system_name = "custom";
  std::string H;
  std::string F;
  std::string parallel_f;
  std::optional<double> kernel_sigma;
  std::string kernel_expr;
  double smoothabs_eps = 1e-3;

  Variant variant = Variant::Exact;
  int taylor_order = 1;
  double alpha = 0.0;
  std::vector<double> alpha_grid;

  SolverOptions solver;
  FlowOptions flow;
  Json params = Json::object();  // experiment parameters with defaults filled in

  PhaseSpace space() const { return PhaseSpace::standard(dim_half, space_model, primitive); }

  SystemSpec system() const {
    SystemSpec s = parallel_f.empty() ? SystemSpec::make(dim_half, H, F, smoothabs_eps)
                                      : SystemSpec::make_parallel(dim_half, H, parallel_f, smoothabs_eps);
    if (kernel_sigma) return s.with_kernel(Kernel::wrapped_gaussian(*kernel_sigma));
    if (!kernel_expr.empty()) return s.with_kernel(Kernel::expression(kernel_expr));
    return s;
  }

  ActionModel action_model() const {
    return ActionModel::make(variant, system(), space(), alpha, taylor_order);
  }
};

namespace detail {

inline int line_at(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line of the first occurrence of "key" as a JSON member name; 0 when absent.
inline int key_line(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  std::size_t pos = 0;
  while ((pos = text.find(quoted, pos)) != std::string::npos) {
    std::size_t k = pos + quoted.size();
    while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
    if (k < text.size() && text[k] == ':') return line_at(text, pos);
    pos += quoted.size();
  }
  return 0;
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ScenarioError(key + ": " + msg, key_line(text_, key));
  }

  void allow_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) fail(where, "expected an object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) fail(k, "unknown key in " + where);
  }

  double number(const Json& obj, const std::string& key, double def) const {
    if (!obj.contains(key)) return def;
    const Json& v = obj.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  double positive(const Json& obj, const std::string& key, double def) const {
    const double x = number(obj, key, def);
    if (!(x > 0.0)) fail(key, "must be positive");
    return x;
  }

  int integer(const Json& obj, const std::string& key, int def, int lo, int hi) const {
    if (!obj.contains(key)) return def;
    const Json& v = obj.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi) fail(key, "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
  }

  std::string string(const Json& obj, const std::string& key, const std::string& def) const {
    if (!obj.contains(key)) return def;
    const Json& v = obj.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const Json& obj, const std::string& key, std::vector<double> def) const {
    if (!obj.contains(key)) return def;
    const Json& v = obj.at(key);
    if (!v.is_array() || v.empty()) fail(key, "expected a non-empty array of numbers");
    std::vector<double> out;
    for (const Json& e : v) {
      if (!e.is_number()) fail(key, "expected a non-empty array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const std::string& text() const { return text_; }

 private:
  const std::string& text_;
};

inline Experiment parse_experiment(const Reader& r, const std::string& s) {
  for (Experiment e : kExperiments)
    if (s == experiment_name(e)) return e;
  r.fail("experiment", "unknown experiment '" + s + "'");
}

inline Variant parse_variant(const Reader& r, const std::string& s) {
  if (s == "exact") return Variant::Exact;
  if (s == "taylor") return Variant::Taylor;
  if (s == "fuzzy") return Variant::Fuzzy;
  if (s == "first-order-deformed") return Variant::FirstOrderDeformed;
  r.fail("variant", "unknown variant '" + s + "' (exact, taylor, fuzzy, first-order-deformed)");
}

inline void check_expression(const Reader& r, const std::string& key, const std::string& src, Slot slot,
                             const ParseOptions& opts) {
  try {
    (void)parse(src, slot, opts);
  } catch (const ParseError& e) {
    r.fail(key, e.what());
  }
}

// Start loop description shared by continuation, flow and stretch-sweep.
inline Json parse_start(const Reader& r, const Json& params, int dim, Json def) {
  if (!params.contains("start")) return def;
  const Json& s = params.at("start");
  if (s.is_string()) {
    if (s.get<std::string>() != "multistart") r.fail("start", "expected \"multistart\" or an object");
    return s;
  }
  r.allow_keys(s, "start", {"constant", "circle", "csv"});
  if (s.size() != 1) r.fail("start", "give exactly one of constant, circle, csv");
  if (s.contains("constant")) {
    const auto x = r.numbers(s, "constant", {});
    if (static_cast<int>(x.size()) != dim) r.fail("constant", "expected " + std::to_string(dim) + " coordinates");
  } else if (s.contains("circle")) {
    const Json& c = s.at("circle");
    r.allow_keys(c, "circle", {"radius", "center"});
    r.positive(c, "radius", 1.0);
    if (c.contains("center") && static_cast<int>(r.numbers(c, "center", {}).size()) != dim)
      r.fail("center", "expected " + std::to_string(dim) + " coordinates");
  } else {
    r.string(s, "csv", "");
  }
  return s;
}

inline Json resolve_params(const Reader& r, const Scenario& sc, const Json& in) {
  Json p = Json::object();
  const int dim = 2 * sc.dim_half;
  auto basepoint = [&] {
    const auto b = r.numbers(in, "basepoint", std::vector<double>(dim, 0.0));
    if (static_cast<int>(b.size()) != dim) r.fail("basepoint", "expected " + std::to_string(dim) + " coordinates");
    return b;
  };
  switch (sc.experiment) {
    case Experiment::CheckIdentities:
      r.allow_keys(in, "params", {"loops", "trials", "amplitude", "modes"});
      p["loops"] = r.integer(in, "loops", 5, 1, 1000);
      p["trials"] = r.integer(in, "trials", 20, 1, 10000);
      p["amplitude"] = r.positive(in, "amplitude", 0.3);
      p["modes"] = r.integer(in, "modes", 3, 0, 64);
      break;
    case Experiment::CriticalSearch:
      r.allow_keys(in, "params", {"action_tol"});
      p["action_tol"] = r.positive(in, "action_tol", 1e-8);
      break;
    case Experiment::Continuation:
      r.allow_keys(in, "params", {"start"});
      p["start"] = parse_start(r, in, dim, "multistart");
      if (sc.alpha_grid.empty()) r.fail("model", "continuation needs alpha_grid");
      break;
    case Experiment::TaylorStudy: {
      r.allow_keys(in, "params", {"orders", "alphas", "loops", "amplitude", "modes"});
      const auto orders = r.numbers(in, "orders", {1.0, 2.0});
      for (double o : orders)
        if (o != std::floor(o) || o < 1 || o > kMaxTaylorOrder) r.fail("orders", "orders must be integers in [1, 4]");
      p["orders"] = orders;
      const auto alphas = r.numbers(in, "alphas", {1e-3, 3e-3, 1e-2, 3e-2, 1e-1});
      if (alphas.size() < 2) r.fail("alphas", "need at least two values");
      for (double a : alphas)
        if (!(a > 0.0)) r.fail("alphas", "values must be positive");
      p["alphas"] = alphas;
      p["loops"] = r.integer(in, "loops", 10, 1, 1000);
      p["amplitude"] = r.positive(in, "amplitude", 0.2);
      p["modes"] = r.integer(in, "modes", 1, 0, 64);
      break;
    }
    case Experiment::FuzzyStudy: {
      r.allow_keys(in, "params", {"sigmas", "loops", "estimate_pairs", "trials", "amplitude", "modes", "sweep_modes",
                                     "sweep_alpha", "sweep_amplitude", "sweep_offset"});
      const auto sig = r.numbers(in, "sigmas", {0.2, 0.1, 0.05, 0.025});
      for (double s : sig)
        if (!(s > 0.0)) r.fail("sigmas", "values must be positive");
      p["sigmas"] = sig;
      p["loops"] = r.integer(in, "loops", 5, 1, 1000);
      p["estimate_pairs"] = r.integer(in, "estimate_pairs", 100, 1, 100000);
      p["trials"] = r.integer(in, "trials", 20, 1, 10000);
      p["amplitude"] = r.positive(in, "amplitude", 0.3);
      p["modes"] = r.integer(in, "modes", 3, 0, 64);
      p["sweep_modes"] = r.integer(in, "sweep_modes", 1, 1, 64);
      p["sweep_alpha"] = r.positive(in, "sweep_alpha", 0.01);
      p["sweep_amplitude"] = r.positive(in, "sweep_amplitude", 0.1);
      p["sweep_offset"] = r.number(in, "sweep_offset", 0.25);
      break;
    }
    case Experiment::Flow: {
      r.allow_keys(in, "params", {"theta", "start", "s_span", "basepoint"});
      const std::string th = r.string(in, "theta", sc.alpha > 0.0 ? "first-order" : "classical");
      if (th != "classical" && th != "first-order") r.fail("theta", "expected classical or first-order");
      p["theta"] = th;
      p["start"] = parse_start(r, in, dim, Json{{"constant", std::vector<double>(dim, 0.0)}});
      if (p["start"].is_string()) r.fail("start", "flow needs an explicit start loop");
      const auto span = r.numbers(in, "s_span", {0.0, 20.0});
      if (span.size() != 2 || !(span[1] > span[0])) r.fail("s_span", "expected [s0, s1] with s1 > s0");
      p["s_span"] = span;
      p["basepoint"] = basepoint();
      break;
    }
    case Experiment::StretchSweep: {
      r.allow_keys(in, "params", {"radii", "margin", "start", "energy_bound", "basepoint"});
      const auto radii = r.numbers(in, "radii", {0.0, 1.0, 2.0, 4.0, 8.0});
      for (double x : radii)
        if (!(x >= 0.0)) r.fail("radii", "values must be non-negative");
      p["radii"] = radii;
      p["margin"] = r.positive(in, "margin", 4.0);
      p["start"] = parse_start(r, in, dim, Json{{"constant", std::vector<double>(dim, 0.0)}});
      if (p["start"].is_string()) r.fail("start", "stretch-sweep needs an explicit start loop");
      if (in.contains("energy_bound")) p["energy_bound"] = r.positive(in, "energy_bound", 1.0);
      p["basepoint"] = basepoint();
      break;
    }
  }
  return p;
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ScenarioError(std::string("malformed JSON: ") + e.what(), detail::line_at(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  const detail::Reader r(text);
  r.allow_keys(doc, "scenario",
               {"name", "experiment", "rng_seed", "output", "space", "system", "model", "solver", "flow", "params"});
  Scenario sc;
  sc.name = r.string(doc, "name", "scenario");
  if (!doc.contains("experiment")) throw ScenarioError("experiment: missing", 0);
  sc.experiment = detail::parse_experiment(r, r.string(doc, "experiment", ""));
  if (doc.contains("rng_seed")) {
    if (!doc["rng_seed"].is_number_unsigned()) r.fail("rng_seed", "expected a non-negative integer");
    sc.rng_seed = doc["rng_seed"].get<std::uint64_t>();
  }
  sc.output = r.string(doc, "output", "");

  // system first: a built-in fixes the default model and dimension
  if (!doc.contains("system")) throw ScenarioError("system: missing", 0);
  const Json& sys = doc["system"];
  r.allow_keys(sys, "system", {"builtin", "H", "F", "parallel_f", "kernel", "smoothabs_eps", "dim_half"});
  const BuiltinSystem* builtin = nullptr;
  if (sys.contains("builtin")) {
    builtin = find_builtin(r.string(sys, "builtin", ""));
    if (!builtin) r.fail("builtin", "unknown built-in system (see list-builtins)");
    if (sys.contains("H") || sys.contains("F") || sys.contains("parallel_f"))
      r.fail("builtin", "a built-in system cannot be combined with H, F or parallel_f");
    sc.system_name = builtin->name;
    sc.dim_half = builtin->dim_half;
    sc.space_model = builtin->model;
    sc.H = builtin->H;
    sc.F = builtin->F;
  } else {
    if (!sys.contains("H")) r.fail("system", "needs builtin or H");
    sc.H = r.string(sys, "H", "");
    sc.F = r.string(sys, "F", "");
    sc.parallel_f = r.string(sys, "parallel_f", "");
    if (sc.F.empty() == sc.parallel_f.empty()) r.fail("system", "give exactly one of F and parallel_f");
  }
  sc.smoothabs_eps = r.positive(sys, "smoothabs_eps", 1e-3);

  const Json space = doc.value("space", Json::object());
  r.allow_keys(space, "space", {"dim_half", "model", "primitive", "N"});
  sc.dim_half = r.integer(space, "dim_half", r.integer(sys, "dim_half", sc.dim_half, 1, 6), 1, 6);
  if (builtin && sc.dim_half != builtin->dim_half) r.fail("dim_half", "built-in system has dim_half 1");
  const std::string model = r.string(space, "model", sc.space_model == Model::FlatTorus ? "torus" : "euclidean");
  if (model == "torus") sc.space_model = Model::FlatTorus;
  else if (model == "euclidean") sc.space_model = Model::EuclideanExact;
  else r.fail("model", "space model must be euclidean or torus");
  const std::string prim = r.string(space, "primitive", "pdq");
  if (prim == "pdq") sc.primitive = Primitive::PdQ;
  else if (prim == "radial") sc.primitive = Primitive::Radial;
  else r.fail("primitive", "expected pdq or radial");
  if (sc.space_model == Model::FlatTorus && sc.primitive != Primitive::PdQ)
    r.fail("primitive", "the torus model uses the pdq primitive");
  sc.N = r.integer(space, "N", 64, 8, 4096);
  if (sc.N % 2 != 0) r.fail("N", "must be even");

  const ParseOptions popts{sc.dim_half, sc.smoothabs_eps};
  detail::check_expression(r, builtin ? "builtin" : "H", sc.H, Slot::Hamiltonian, popts);
  if (!sc.F.empty()) detail::check_expression(r, builtin ? "builtin" : "F", sc.F, Slot::Retardation, popts);
  if (!sc.parallel_f.empty()) detail::check_expression(r, "parallel_f", sc.parallel_f, Slot::ParallelFactor, popts);

  if (sys.contains("kernel")) {
    const Json& k = sys["kernel"];
    if (k.is_string()) {
      const std::string name = k.get<std::string>();
      for (const auto& b : builtin_kernels())
        if (b.name == name) sc.kernel_sigma = b.sigma;
      if (!sc.kernel_sigma) r.fail("kernel", "unknown built-in kernel (see list-builtins)");
    } else {
      r.allow_keys(k, "kernel", {"sigma", "expression"});
      if (k.size() != 1) r.fail("kernel", "give exactly one of sigma and expression");
      if (k.contains("sigma")) sc.kernel_sigma = r.positive(k, "sigma", 0.1);
      else {
        sc.kernel_expr = r.string(k, "expression", "");
        detail::check_expression(r, "expression", sc.kernel_expr, Slot::Kernel, popts);
      }
    }
  }

  const Json mod = doc.value("model", Json::object());
  r.allow_keys(mod, "model", {"variant", "taylor_order", "alpha", "alpha_grid"});
  sc.variant = detail::parse_variant(r, r.string(mod, "variant", "exact"));
  sc.taylor_order = r.integer(mod, "taylor_order", 1, 0, kMaxTaylorOrder);
  sc.alpha = r.number(mod, "alpha", 0.0);
  if (!(sc.alpha >= 0.0)) r.fail("alpha", "must be non-negative");
  sc.alpha_grid = r.numbers(mod, "alpha_grid", {});
  for (std::size_t i = 0; i < sc.alpha_grid.size(); ++i) {
    if (!(sc.alpha_grid[i] >= 0.0)) r.fail("alpha_grid", "values must be non-negative");
    if (i > 0 && !(sc.alpha_grid[i] > sc.alpha_grid[i - 1])) r.fail("alpha_grid", "must be strictly increasing");
  }
  if (!sc.alpha_grid.empty() && !mod.contains("alpha")) sc.alpha = sc.alpha_grid.front();

  const Json sol = doc.value("solver", Json::object());
  r.allow_keys(sol, "solver",
               {"grad_tol", "newton_tol", "max_descent_steps", "newton_max_iters", "multistart_count",
                "constant_grid", "box", "seed_amplitude", "seed_modes", "dedup_tol", "threads"});
  SolverOptions& so = sc.solver;
  so.grad_tol = r.positive(sol, "grad_tol", so.grad_tol);
  so.newton_tol = r.positive(sol, "newton_tol", so.newton_tol);
  so.max_descent_steps = r.integer(sol, "max_descent_steps", so.max_descent_steps, 0, 10000000);
  so.newton_max_iters = r.integer(sol, "newton_max_iters", so.newton_max_iters, 0, 1000);
  so.multistart_count = r.integer(sol, "multistart_count", so.multistart_count, 0, 100000);
  so.constant_grid = r.integer(sol, "constant_grid", so.constant_grid, 0, 1000);
  so.box = r.positive(sol, "box", so.box);
  so.seed_amplitude = r.positive(sol, "seed_amplitude", so.seed_amplitude);
  so.seed_modes = r.integer(sol, "seed_modes", so.seed_modes, 0, 64);
  so.dedup_tol = r.positive(sol, "dedup_tol", so.dedup_tol);
  so.threads = r.integer(sol, "threads", so.threads, 1, 1024);
  so.rng_seed = sc.rng_seed;

  const Json fl = doc.value("flow", Json::object());
  r.allow_keys(fl, "flow", {"max_step", "min_step", "max_steps", "gradient_tol", "record_every"});
  FlowOptions& fo = sc.flow;
  fo.max_step = r.positive(fl, "max_step", fo.max_step);
  fo.min_step = r.positive(fl, "min_step", fo.min_step);
  fo.max_steps = r.integer(fl, "max_steps", fo.max_steps, 1, 100000000);
  fo.gradient_tol = r.number(fl, "gradient_tol", 1e-9);
  if (!(fo.gradient_tol >= 0.0)) r.fail("gradient_tol", "must be non-negative");
  fo.record_every = r.integer(fl, "record_every", fo.record_every, 1, 1000000);
  fo.record_loops = false;

  sc.params = detail::resolve_params(r, sc, doc.value("params", Json::object()));

  if (sc.experiment == Experiment::FuzzyStudy) {
    if (!(sc.alpha > 0.0)) r.fail("model", "fuzzy-study needs alpha > 0");
    if (!sc.system().autonomous()) r.fail("H", "fuzzy-study needs an autonomous Hamiltonian");
  }
  try {
    sc.action_model().validate();
  } catch (const std::exception& e) {
    r.fail("model", e.what());
  }
  return sc;
}

}  // namespace neumann

#endif
