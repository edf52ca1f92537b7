#ifndef NEUMANN_EXPERIMENTS_HPP
#define NEUMANN_EXPERIMENTS_HPP

// Runs the experiment named by a Scenario. The report is a JSON object; CSV series are
// returned as (file name, contents) pairs for the caller to write.

#include "neumann/delay.hpp"
#include "neumann/flow.hpp"
#include "neumann/loops.hpp"
#include "neumann/neumann.hpp"
#include "neumann/scenario.hpp"
#include "neumann/solver.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace neumann {

struct RunOutcome {
  Json report = Json::object();
  std::vector<std::pair<std::string, std::string>> files;
  bool numerical_failure = false;
  std::string error;
};

namespace detail {

inline std::string num(double x) { return format_number(x); }

inline std::string loop_csv(const Loop& v) {
  std::ostringstream os;
  write_loop_csv(os, v);
  return os.str();
}

inline Json vec_json(const Vec& x) {
  Json a = Json::array();
  for (int i = 0; i < x.size(); ++i) a.push_back(x[i]);
  return a;
}

inline Vec json_vec(const Json& a) {
  Vec x(static_cast<int>(a.size()));
  for (int i = 0; i < x.size(); ++i) x[i] = a[i].get<double>();
  return x;
}

inline Loop start_loop(const Scenario& sc, const PhaseSpace& sp, const Json& start) {
  const int d = sp.dim();
  if (start.contains("constant")) return Loop::constant(sp, sc.N, json_vec(start["constant"]));
  if (start.contains("circle")) {
    const Json& c = start["circle"];
    const double r = c.value("radius", 1.0);
    const Vec center = c.contains("center") ? json_vec(c["center"]) : Vec(Vec::Zero(d));
    const int half = d / 2;
    return Loop::from_function(sp, sc.N, [&](double t) {
      Vec x = center;
      x[0] += r * std::cos(kTwoPi * t);
      x[half] += r * std::sin(kTwoPi * t);
      return x;
    });
  }
  const std::string path = start["csv"].get<std::string>();
  std::ifstream in(path);
  if (!in) throw ScenarioError("csv: cannot open '" + path + "'", 0);
  return read_loop_csv(in, sp);
}

inline Json critical_json(const CriticalPoint& c) {
  return Json{{"action", c.action},
              {"residual", c.residual_norm},
              {"classification", classification_name(c.classification)},
              {"spacelike", c.diagnostics.spacelike},
              {"min_slope", c.diagnostics.min_slope},
              {"near_lightlike", c.near_lightlike},
              {"seed_index", c.seed_index},
              {"kernel_dim", c.kernel_dim},
              {"constant", is_constant_loop(c.loop)},
              {"sample0", vec_json(c.loop.sample(0))}};
}

inline Vec loop_center(const PhaseSpace& sp) {
  return sp.model == Model::FlatTorus ? Vec(Vec::Constant(sp.dim(), 0.5)) : Vec(Vec::Zero(sp.dim()));
}

inline void check_identities(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const ActionModel m = sc.action_model();
  const Json& p = sc.params;
  const int loops = p["loops"], trials = p["trials"], modes = p["modes"];
  const double amp = p["amplitude"];
  std::mt19937_64 rng(sc.rng_seed);
  std::vector<Loop> vs;
  for (int i = 0; i < loops; ++i) vs.push_back(random_loop(sp, sc.N, rng, amp, modes, loop_center(sp)));

  Json& res = out.report["results"];
  std::ostringstream csv;
  csv << "loop,trial,analytic,finite_difference,rel_error\n";
  double worst = 0.0;
  for (int i = 0; i < loops; ++i)
    for (int k = 0; k < trials; ++k) {
      const TangentField w = random_tangent(sc.N, sp.dim(), rng, std::max(modes, 1));
      const DifferentialCheck dc = differential_check(m, vs[i], w);
      worst = std::max(worst, dc.rel_error);
      csv << i << "," << k << "," << num(dc.analytic) << "," << num(dc.finite_difference) << ","
          << num(dc.rel_error) << "\n";
    }
  out.files.emplace_back("gradient_check.csv", csv.str());
  res["gradient_check"] = {{"variant", variant_name(m.variant)}, {"pairs", loops * trials},
                           {"max_rel_error", worst}, {"tolerance", 1e-6}, {"pass", worst < 1e-6}};
  bool all = worst < 1e-6;

  if (!sc.F.empty() || !sc.parallel_f.empty()) {
    const double a = sc.alpha > 0.0 ? sc.alpha : 0.05;
    const ActionModel t1 = ActionModel::make(Variant::Taylor, m.system, sp, a, 1);
    double r = 0.0, lit = 0.0;
    for (int i = 0; i < loops; ++i) {
      r = std::max(r, first_order_identity_residual(t1, vs[i], trials, sc.rng_seed + i));
      lit = std::max(lit, first_order_identity_residual_literal(t1, vs[i], trials, sc.rng_seed + i));
    }
    res["first_order_identity"] = {{"alpha", a}, {"residual", r}, {"residual_without_time_term", lit},
                                   {"tolerance", 1e-8}, {"pass", r < 1e-8}};
    all = all && r < 1e-8;
  }

  if (m.autonomous()) {
    std::uniform_real_distribution<double> ur(0.0, 1.0);
    double drift = 0.0;
    for (const Loop& v : vs) {
      const double a0 = action_value(m, v);
      drift = std::max(drift, std::abs(action_value(m, rotate_loop(v, ur(rng))) - a0));
    }
    res["circle_invariance"] = {{"max_drift", drift}, {"tolerance", 1e-9}, {"pass", drift < 1e-9}};
    all = all && drift < 1e-9;
  }

  if (m.system.beta() && m.autonomous()) {
    const ActionModel fm = ActionModel::make(Variant::Fuzzy, m.system, sp, sc.alpha > 0.0 ? sc.alpha : 0.05);
    double r = 0.0;
    for (int i = 0; i < loops; ++i) r = std::max(r, fuzzy_identity_residual(fm, vs[i], trials, sc.rng_seed + i));
    res["fuzzy_identity"] = {{"residual", r}, {"tolerance", 1e-7}, {"pass", r < 1e-7}};
    all = all && r < 1e-7;
  }
  res["all_pass"] = all;
}

inline void critical_search(const Scenario& sc, RunOutcome& out) {
  const ActionModel m = sc.action_model();
  const MultistartReport rep = multistart(m, sc.N, sc.solver);
  Json& res = out.report["results"];
  res["seeds"] = rep.seeds;
  res["converged_runs"] = rep.converged_runs;
  res["count"] = rep.points.size();
  int spacelike = 0;
  Json pts = Json::array();
  std::ostringstream csv;
  csv << "index,action,residual,classification,spacelike,min_slope,seed_index\n";
  for (std::size_t k = 0; k < rep.points.size(); ++k) {
    const CriticalPoint& c = rep.points[k];
    spacelike += c.diagnostics.spacelike ? 1 : 0;
    pts.push_back(critical_json(c));
    csv << k << "," << num(c.action) << "," << num(c.residual_norm) << "," << classification_name(c.classification)
        << "," << (c.diagnostics.spacelike ? 1 : 0) << "," << num(c.diagnostics.min_slope) << "," << c.seed_index
        << "\n";
    out.files.emplace_back("critical_" + std::to_string(k) + ".csv", loop_csv(c.loop));
  }
  out.files.emplace_back("critical_points.csv", csv.str());
  res["spacelike_count"] = spacelike;
  res["distinct_actions"] = distinct_actions(rep.points, sc.params["action_tol"].get<double>());
  res["points"] = pts;
}

inline void continuation(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const ActionModel m0 = sc.action_model().with_alpha(sc.alpha_grid.front());
  const Json& start = sc.params["start"];
  Json& res = out.report["results"];
  CriticalPoint c;
  if (start.is_string()) {
    const MultistartReport rep = multistart(m0, sc.N, sc.solver);
    if (rep.points.empty()) throw PreconditionError("no critical point found at the first alpha");
    c = rep.points.front();
  } else {
    const SolveResult s = solve_from(m0, start_loop(sc, sp, start), sc.solver);
    res["start_residual"] = s.residual;
    if (!(s.residual < sc.solver.grad_tol)) throw PreconditionError("start loop did not converge at the first alpha");
    c = make_critical_point(m0, s.loop, s.residual, sc.solver);
  }
  const ContinuationResult cr = continue_in_alpha(m0, c, sc.alpha_grid, sc.solver);
  std::ostringstream csv;
  csv << "alpha,action,residual,min_slope,spacelike\n";
  Json branch = Json::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < cr.branch.size(); ++i) {
    const CriticalPoint& b = cr.branch[i];
    worst = std::max(worst, b.residual_norm);
    Json e = critical_json(b);
    e["alpha"] = cr.alphas[i];
    branch.push_back(e);
    csv << num(cr.alphas[i]) << "," << num(b.action) << "," << num(b.residual_norm) << ","
        << num(b.diagnostics.min_slope) << "," << (b.diagnostics.spacelike ? 1 : 0) << "\n";
  }
  out.files.emplace_back("continuation.csv", csv.str());
  out.files.emplace_back("continuation_last.csv", loop_csv(cr.branch.back().loop));
  res["branch"] = branch;
  res["terminated"] = cr.terminated;
  res["reason"] = cr.terminated ? cr.reason : "completed";
  res["last_good_alpha"] = cr.last_good_alpha;
  res["max_residual"] = worst;
}

inline void taylor_study(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const SystemSpec sys = sc.system();
  const Json& p = sc.params;
  const std::vector<double> alphas = p["alphas"];
  const std::vector<double> orders = p["orders"];
  const int loops = p["loops"], modes = p["modes"];
  std::mt19937_64 rng(sc.rng_seed);
  std::vector<Loop> vs;
  for (int i = 0; i < loops; ++i) vs.push_back(random_loop(sp, sc.N, rng, p["amplitude"], modes, loop_center(sp)));
  std::ostringstream csv;
  csv << "loop,order,alpha,remainder\n";
  Json per = Json::array();
  bool all = true;
  for (double od : orders) {
    const int n = static_cast<int>(od);
    double min_slope = std::numeric_limits<double>::infinity();
    Json slopes = Json::array();
    for (int i = 0; i < loops; ++i) {
      const RemainderStudy st = taylor_remainder_study(sys, sp, vs[i], n, alphas);
      slopes.push_back(st.slope);
      min_slope = std::min(min_slope, st.slope);
      for (std::size_t k = 0; k < st.alphas.size(); ++k)
        csv << i << "," << n << "," << num(st.alphas[k]) << "," << num(st.remainders[k]) << "\n";
    }
    const bool pass = min_slope >= n + 0.9;
    all = all && pass;
    per.push_back({{"order", n}, {"slopes", slopes}, {"min_slope", min_slope}, {"required", n + 0.9}, {"pass", pass}});
  }
  out.files.emplace_back("taylor_remainders.csv", csv.str());
  out.report["results"] = {{"orders", per}, {"all_pass", all}};
}

inline void fuzzy_study(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const Json& p = sc.params;
  const int loops = p["loops"], pairs = p["estimate_pairs"], trials = p["trials"], modes = p["modes"];
  const double amp = p["amplitude"];
  const std::vector<double> sigmas = p["sigmas"];
  std::mt19937_64 rng(sc.rng_seed);
  Json& res = out.report["results"];

  // estimate on random loops paired with random kernels: Gaussians and trigonometric polynomials
  std::uniform_real_distribution<double> us(0.02, 0.3), uc(-0.5, 0.5);
  double worst_ratio = 0.0;
  bool holds = true;
  std::ostringstream est;
  est << "pair,kernel,lhs,rhs\n";
  for (int i = 0; i < pairs; ++i) {
    const Loop v = random_loop(sp, sc.N, rng, amp, std::max(modes, 1), loop_center(sp));
    const Kernel k = i % 2 == 0 ? Kernel::wrapped_gaussian(us(rng))
                                : Kernel::expression("1+" + num(uc(rng)) + "*cos(2*pi*tau)+" + num(uc(rng)) +
                                                     "*sin(4*pi*tau)");
    const EstimateSides e = fuzzy_estimate_check(v, k);
    holds = holds && e.lhs <= e.rhs;
    if (e.rhs > 0.0) worst_ratio = std::max(worst_ratio, e.lhs / e.rhs);
    est << i << ",\"" << k.description() << "\"," << num(e.lhs) << "," << num(e.rhs) << "\n";
  }
  out.files.emplace_back("fuzzy_estimate.csv", est.str());
  res["estimate"] = {{"pairs", pairs}, {"holds", holds}, {"max_ratio", worst_ratio}};

  std::vector<Loop> vs;
  for (int i = 0; i < loops; ++i) vs.push_back(random_loop(sp, sc.N, rng, amp, modes, loop_center(sp)));
  const SystemSpec sys = sc.system().beta() ? sc.system() : sc.system().with_kernel(Kernel::wrapped_gaussian(0.1));
  const ActionModel fm = ActionModel::make(Variant::Fuzzy, sys, sp, sc.alpha);
  double ident = 0.0;
  for (int i = 0; i < loops; ++i) ident = std::max(ident, fuzzy_identity_residual(fm, vs[i], trials, sc.rng_seed + i));
  res["identity"] = {{"kernel", sys.kernel().description()}, {"residual", ident}, {"tolerance", 1e-7},
                     {"pass", ident < 1e-7}};

  // single-mode loops by default: each Fourier mode k contributes through 1 - exp(-2 pi^2 sigma^2 k^2).
  // Off-center so F pairs with d/dt H(v) on mode one; small alpha keeps the mean gap near alpha times
  // the Taylor(1) gap, otherwise the signed gap can cross zero near sigma = 0.2.
  const ActionModel sm = ActionModel::make(Variant::Fuzzy, sys, sp, p["sweep_alpha"].get<double>());
  const Vec center = loop_center(sp) + Vec::Constant(sp.dim(), p["sweep_offset"].get<double>());
  std::vector<Loop> sweep;
  for (int i = 0; i < loops; ++i)
    sweep.push_back(random_loop(sp, sc.N, rng, p["sweep_amplitude"].get<double>(), p["sweep_modes"].get<int>(),
                                center));
  std::ostringstream nd;
  nd << "loop,sigma,mean_gap,taylor1_gap\n";
  bool monotone = true;
  std::vector<double> mean_max(sigmas.size(), 0.0), t1_max(sigmas.size(), 0.0);
  for (int i = 0; i < loops; ++i) {
    const std::vector<NearDeltaPoint> sw = near_delta_sweep(sm, sweep[i], sigmas);
    for (std::size_t k = 0; k < sw.size(); ++k) {
      nd << i << "," << num(sw[k].sigma) << "," << num(sw[k].mean_gap) << "," << num(sw[k].taylor1_gap) << "\n";
      mean_max[k] = std::max(mean_max[k], sw[k].mean_gap);
      t1_max[k] = std::max(t1_max[k], sw[k].taylor1_gap);
      if (k > 0 && !(sw[k].mean_gap < sw[k - 1].mean_gap && sw[k].taylor1_gap < sw[k - 1].taylor1_gap))
        monotone = false;
    }
  }
  out.files.emplace_back("near_delta.csv", nd.str());
  res["near_delta"] = {{"alpha", sm.alpha}, {"sigmas", sigmas}, {"max_mean_gap", mean_max}, {"max_taylor1_gap", t1_max},
                       {"monotone", monotone}};
  res["all_pass"] = holds && ident < 1e-7 && monotone;
}

inline ThetaFamily make_theta(const Scenario& sc, bool first_order) {
  const Vec p = json_vec(sc.params["basepoint"]);
  return first_order ? ThetaFamily::first_order(sc.system(), sc.space(), sc.alpha, p)
                     : ThetaFamily::classical(sc.system(), sc.space(), p);
}

inline std::string series_csv(const FlowTrajectory& tr) {
  std::ostringstream os;
  os << "s,action,cum_energy\n";
  for (std::size_t k = 0; k < tr.s_nodes.size(); ++k)
    os << num(tr.s_nodes[k]) << "," << num(tr.actions[k]) << "," << num(tr.cumulative_energy[k]) << "\n";
  return os.str();
}

inline void flow(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const ThetaFamily th = make_theta(sc, sc.params["theta"] == "first-order");
  const Loop v0 = start_loop(sc, sp, sc.params["start"]);
  const std::vector<double> span = sc.params["s_span"];
  FlowOptions fo = sc.flow;
  fo.record_loops = true;
  const FlowTrajectory tr = integrate_flow(th, v0, {span[0], span[1]}, fo);
  Json& res = out.report["results"];
  res["steps"] = tr.steps;
  res["s_end"] = tr.s_nodes.back();
  res["converged"] = tr.converged;
  res["truncated"] = tr.truncated;
  res["terminal_gradient"] = tr.terminal_gradient;
  res["action_start"] = tr.actions.front();
  res["action_end"] = tr.actions.back();
  res["energy"] = tr.cumulative_energy.back();
  res["action_energy_residual"] = action_energy_residual(tr);
  res["limit_residual"] = theta_oneform(th, tr.loops.back()).max_abs();
  res["limit_sample0"] = vec_json(tr.loops.back().sample(0));
  res["twisted_periodicity_residual"] = th.twisted_periodicity_residual(v0.sample(0), 0.37);
  out.files.emplace_back("flow.csv", series_csv(tr));
  out.files.emplace_back("flow_limit.csv", loop_csv(tr.loops.back()));
}

inline void stretch_sweep(const Scenario& sc, RunOutcome& out) {
  const PhaseSpace sp = sc.space();
  const ThetaFamily th = make_theta(sc, sc.alpha > 0.0);
  const Loop v0 = start_loop(sc, sp, sc.params["start"]);
  Json& res = out.report["results"];
  std::vector<Vec> pts;
  for (int j = 0; j < v0.N(); ++j) pts.push_back(v0.sample(j));
  const bool h2 = h2_plus_holds(th, pts);
  res["h2_plus"] = h2;
  if (!h2) throw DegenerateFormError("omega + tau d theta degenerate at the start loop");
  const std::vector<double> radii = sc.params["radii"];
  const double margin = sc.params["margin"];
  std::ostringstream csv;
  csv << "r,energy,partial_s,action_energy_residual,truncated\n";
  Json runs = Json::array();
  double emax = 0.0;
  bool finite = true;
  for (double r : radii) {
    const FlowTrajectory tr = stretched_flow(th, r, v0, {-r - margin, r + margin}, sc.flow);
    const double e = tr.cumulative_energy.back();
    finite = finite && std::isfinite(e) && !tr.truncated;
    emax = std::max(emax, e);
    runs.push_back({{"r", r},
                    {"energy", e},
                    {"partial_s", tr.cumulative_partial_s.back()},
                    {"action_energy_residual", action_energy_residual(tr)},
                    {"truncated", tr.truncated},
                    {"steps", tr.steps}});
    csv << num(r) << "," << num(e) << "," << num(tr.cumulative_partial_s.back()) << ","
        << num(action_energy_residual(tr)) << "," << (tr.truncated ? 1 : 0) << "\n";
    out.files.emplace_back("stretch_r" + num(r) + ".csv", series_csv(tr));
  }
  out.files.emplace_back("stretch_sweep.csv", csv.str());
  res["runs"] = runs;
  res["max_energy"] = emax;
  res["all_finite"] = finite;
  if (sc.params.contains("energy_bound")) {
    const double c = sc.params["energy_bound"];
    res["energy_bound"] = c;
    res["bounded"] = finite && emax <= c;
  }
}

}  // namespace detail

inline Json scenario_json(const Scenario& sc) {
  Json sys = {{"name", sc.system_name}, {"H", sc.H}, {"smoothabs_eps", sc.smoothabs_eps}};
  if (!sc.F.empty()) sys["F"] = sc.F;
  if (!sc.parallel_f.empty()) sys["parallel_f"] = sc.parallel_f;
  if (sc.kernel_sigma) sys["kernel"] = Kernel::wrapped_gaussian(*sc.kernel_sigma).description();
  if (!sc.kernel_expr.empty()) sys["kernel"] = sc.kernel_expr;
  return Json{{"name", sc.name},
              {"experiment", experiment_name(sc.experiment)},
              {"rng_seed", sc.rng_seed},
              {"space",
               {{"dim_half", sc.dim_half}, {"model", model_name(sc.space_model)},
                {"primitive", primitive_name(sc.primitive)}, {"N", sc.N}}},
              {"system", sys},
              {"model",
               {{"variant", variant_name(sc.variant)}, {"taylor_order", sc.taylor_order}, {"alpha", sc.alpha},
                {"alpha_grid", sc.alpha_grid}}},
              {"params", sc.params}};
}

// Numerical failures (degenerate forms, lost spacelike-ness, evaluation errors, failed starts)
// are caught and reported with whatever results were produced before them.
inline RunOutcome run_scenario(const Scenario& sc) {
  RunOutcome out;
  out.report["scenario"] = scenario_json(sc);
  out.report["results"] = Json::object();
  try {
    switch (sc.experiment) {
      case Experiment::CheckIdentities: detail::check_identities(sc, out); break;
      case Experiment::CriticalSearch: detail::critical_search(sc, out); break;
      case Experiment::Continuation: detail::continuation(sc, out); break;
      case Experiment::TaylorStudy: detail::taylor_study(sc, out); break;
      case Experiment::FuzzyStudy: detail::fuzzy_study(sc, out); break;
      case Experiment::Flow: detail::flow(sc, out); break;
      case Experiment::StretchSweep: detail::stretch_sweep(sc, out); break;
    }
    out.report["status"] = "ok";
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::runtime_error& e) {
    out.numerical_failure = true;
    out.error = e.what();
    out.report["status"] = "numerical-failure";
    out.report["error"] = e.what();
  }
  return out;
}

}  // namespace neumann

#endif
