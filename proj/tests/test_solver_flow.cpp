#include "neumann/all.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace neumann;
using Catch::Approx;

namespace {

Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}

Loop circle(const PhaseSpace& sp, int n, double r) {
  return Loop::from_function(sp, n, [r](double t) { return v2(r * std::cos(kTwoPi * t), r * std::sin(kTwoPi * t)); });
}

const char* kHarm = "pi*(q1^2+p1^2)";
const char* kTorus = "cos(2*pi*q1)+cos(2*pi*p1)";

}  // namespace

TEST_CASE("descend and newton on the harmonic oscillator", "[solver]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const ActionModel m = ActionModel::make(Variant::Exact, SystemSpec::make(1, kHarm, "q1"), sp, 0.0);
  SolverOptions so;

  const Loop crit = circle(sp, 32, 1.0);
  const DescendResult same = descend(m, crit, so);
  CHECK(same.accepted_steps == 0);
  CHECK(same.loop.samples() == crit.samples());

  std::mt19937_64 rng(1);
  const Loop seed = crit.with_samples(crit.samples() + 1e-2 * random_tangent(32, 2, rng, 3).samples);
  so.grad_tol = 1e-9;
  so.max_descent_steps = 5000;  // preconditioned condition number is about 160 here
  const DescendResult d = descend(m, seed, so);
  CHECK(d.converged);
  CHECK(d.residual < 1e-9);
  for (std::size_t i = 1; i < d.merit.size(); ++i) CHECK(d.merit[i] <= d.merit[i - 1]);

  const NewtonResult nr = newton_refine(m, d.loop, so);
  CHECK(nr.residual < 1e-12);
  CHECK(nr.iterations <= 3);
  // still on the circle family
  double rmin = 1e9, rmax = 0.0;
  for (int j = 0; j < 32; ++j) {
    rmin = std::min(rmin, nr.loop.sample(j).norm());
    rmax = std::max(rmax, nr.loop.sample(j).norm());
  }
  CHECK(rmax - rmin < 1e-8);
}

TEST_CASE("descend reaches the minimizer of a convex hamiltonian", "[solver]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const ActionModel m =
      ActionModel::make(Variant::Exact, SystemSpec::make(1, "0.5*((q1-0.1)^2+(p1+0.2)^2)", "q1"), sp, 0.0);
  std::mt19937_64 rng(2);
  const SolveResult r = solve_from(m, random_loop(sp, 16, rng, 0.05, 2, v2(0.05, -0.1)), SolverOptions{});
  CHECK(r.converged);
  CHECK(is_constant_loop(r.loop, 1e-8));
  CHECK((r.loop.sample(0) - v2(0.1, -0.2)).norm() < 1e-8);
}

TEST_CASE("newton divergence is flagged", "[solver]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const ActionModel m = ActionModel::make(Variant::Exact, SystemSpec::make(1, "q1^4+p1^4", "q1"), sp, 0.0);
  std::mt19937_64 rng(3);
  SolverOptions so;
  so.newton_max_iters = 4;
  const NewtonResult nr = newton_refine(m, random_loop(sp, 16, rng, 40.0, 4, Vec::Zero(2)), so);
  CHECK(!nr.converged);
  const NewtonResult ok = newton_refine(m, Loop::constant(sp, 16, Vec::Zero(2)), so);
  CHECK(ok.converged);
  CHECK(ok.iterations == 0);
}

TEST_CASE("classification", "[solver]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  SolverOptions so;
  const ActionModel harm = ActionModel::make(Variant::Exact, SystemSpec::make(1, kHarm, "q1"), sp, 0.0);
  CHECK(make_critical_point(harm, Loop::constant(sp, 16, Vec::Zero(2)), 0.0, so).classification ==
        Classification::Constant);
  const Loop c = circle(sp, 32, 1.0);
  CHECK(make_critical_point(harm, c, max_residual(harm, c), so).classification == Classification::CircleFamily);

  // non-resonant forcing: the unique one-periodic orbit is isolated
  const ActionModel na =
      ActionModel::make(Variant::Exact, SystemSpec::make(1, "0.5*pi*(q1^2+p1^2)+0.1*q1*cos(2*pi*t)", "q1"), sp, 0.0);
  const SolveResult r = solve_from(na, c, so);
  REQUIRE(r.converged);
  CHECK(make_critical_point(na, r.loop, r.residual, so).classification == Classification::Isolated);
}

TEST_CASE("multistart", "[solver]") {
  const PhaseSpace tor = PhaseSpace::standard(1, Model::FlatTorus);
  SolverOptions so;
  const ActionModel m0 = ActionModel::make(Variant::Exact, SystemSpec::make(1, kTorus, "sin(2*pi*q1)"), tor, 0.0);
  const MultistartReport rep = multistart(m0, 16, so);
  int constants = 0;
  for (const auto& c : rep.points) constants += c.classification == Classification::Constant ? 1 : 0;
  CHECK(constants >= 4);

  const PhaseSpace sp = PhaseSpace::standard(1);
  SolverOptions zs;
  zs.constant_grid = 3;
  zs.multistart_count = 2;
  const ActionModel zero = ActionModel::make(Variant::Exact, SystemSpec::make(1, "0", "q1"), sp, 0.1);
  const MultistartReport zr = multistart(zero, 8, zs);
  CHECK(zr.points.size() >= 9);
  for (const auto& c : zr.points) {
    CHECK(std::abs(c.action) < 1e-12);
    CHECK(c.classification == Classification::Constant);
  }
}

TEST_CASE("continuation in alpha", "[solver]") {
  const PhaseSpace tor = PhaseSpace::standard(1, Model::FlatTorus);
  SolverOptions so;
  const ActionModel m = ActionModel::make(Variant::Taylor, SystemSpec::make(1, kTorus, "sin(2*pi*q1)"), tor, 0.0, 1);
  const CriticalPoint c = make_critical_point(m, Loop::constant(tor, 16, v2(0.5, 0.0)), 0.0, so);
  const ContinuationResult one = continue_in_alpha(m, c, {0.0}, so);
  REQUIRE(one.branch.size() == 1);
  CHECK(one.branch[0].loop.samples() == c.loop.samples());
  const ContinuationResult r = continue_in_alpha(m, c, {0.0, 0.01, 0.02, 0.05}, so);
  CHECK(!r.terminated);
  CHECK(r.last_good_alpha == 0.05);
  for (const auto& p : r.branch) CHECK((p.loop.samples() - c.loop.samples()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(continue_in_alpha(m, c, {0.0, 0.02, 0.01}, so));
}

TEST_CASE("distinct actions", "[solver]") {
  CHECK(distinct_actions({}, 1e-8).empty());
  const PhaseSpace sp = PhaseSpace::standard(1);
  CriticalPoint a;
  a.loop = Loop::constant(sp, 8, Vec::Zero(2));
  a.action = 0.5;
  CHECK(distinct_actions({a, a, a}, 1e-8).size() == 1);
  CriticalPoint b = a;
  b.action = 0.7;
  CHECK(distinct_actions({a, b, a}, 1e-8).size() == 2);
}

TEST_CASE("theta families", "[flow]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const SystemSpec na = SystemSpec::make(1, "(1+0.5*sin(2*pi*t))*(q1^2+p1^2)+0.2*q1*cos(2*pi*t)", "q1+0.3*p1^2");
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ut(-1.0, 2.0);
  for (const ThetaFamily& th : {ThetaFamily::classical(na, sp), ThetaFamily::first_order(na, sp, 0.05),
                                ThetaFamily::first_order(na, sp, 0.05, v2(0.3, -0.1))}) {
    for (int k = 0; k < 100; ++k) {
      const Vec x = v2(0.5 * nd(rng), 0.5 * nd(rng));
      const double t = ut(rng);
      CHECK(th.twisted_periodicity_residual(x, t) < 1e-8);
      const Vec y = th.super_field(x, t);
      CHECK((th.omega_t(x, t) * y - th.dt_theta(x, t)).norm() < 1e-10);
    }
  }
  const ThetaFamily zero = ThetaFamily::first_order(SystemSpec::make(1, "0", "q1"), sp, 0.1);
  CHECK(zero.super_field(v2(0.3, 0.4), 0.2).norm() == 0.0);
}

TEST_CASE("theta action", "[flow]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  std::mt19937_64 rng(5);
  const Loop v = random_loop(sp, 32, rng, 0.4, 3, Vec::Zero(2));
  const SystemSpec sys = SystemSpec::make(1, kHarm, "q1");
  const ThetaFamily cl = ThetaFamily::classical(sys, sp);
  const ActionModel m = ActionModel::make(Variant::Exact, sys, sp, 0.0);
  CHECK(a_theta(cl, v) == Approx(action_value(m, v) + cl.Hbar(cl.basepoint(), 1.0)).epsilon(1e-12));
  const ThetaFamily z = ThetaFamily::classical(SystemSpec::make(1, "0", "q1"), sp);
  CHECK(a_theta(z, v) == Approx(liouville_integral(v)).epsilon(1e-12));
  // the limiting loop of a classical flow is critical, so the gradient vanishes at critical loops
  CHECK(flow_gradient(cl, circle(sp, 32, 0.6)).max_abs() < 1e-8);
}

TEST_CASE("bump family", "[flow]") {
  for (double s = -10.0; s <= 10.0; s += 0.01) CHECK(bump_family(0.0, s) == 0.0);
  CHECK(bump_family(3.0, 0.0) == 1.0);
  CHECK(bump_family(3.0, 4.0) == 1.0);
  CHECK(bump_family(3.0, 4.5) > 0.0);
  CHECK(bump_family(3.0, 4.5) < 1.0);
  CHECK(bump_family(3.0, 4.6) == Approx(base_bump(1.6)).epsilon(1e-12));
  CHECK(bump_family(3.0, -4.6) == Approx(base_bump(-1.6)).epsilon(1e-12));
  CHECK(bump_family(3.0, 4.5) == bump_family(3.0, -4.5));
  CHECK(bump_family(3.0, 5.0) == 0.0);
  CHECK(bump_family(3.0, 6.0) == 0.0);
  CHECK(bump_family(3.0, -6.5) == 0.0);
  CHECK(base_bump(0.5) == 1.0);
  CHECK(base_bump(2.5) == 0.0);
  // shoulders are monotone
  for (double s = 1.0; s < 2.0; s += 0.001) CHECK(base_bump(s + 0.001) <= base_bump(s));
  // bridge on (0, 1) scales the base bump
  CHECK(bump_family(0.5, 0.0) == Approx(0.5));
  CHECK(bump_family(0.5, 1.5) == Approx(0.5 * base_bump(1.5)));
}

TEST_CASE("flow from a critical loop is stationary", "[flow]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const ThetaFamily th = ThetaFamily::classical(SystemSpec::make(1, "-pi*(q1^2+p1^2)-0.3*cos(2*pi*q1)", "q1"), sp);
  FlowOptions fo;
  fo.max_steps = 50;
  const FlowTrajectory tr = integrate_flow(th, Loop::constant(sp, 16, Vec::Zero(2)), {0.0, 1.0}, fo);
  CHECK(tr.cumulative_energy.back() == 0.0);
  CHECK(action_energy_residual(tr) == 0.0);
  CHECK((tr.loops.back().samples() - tr.loops.front().samples()).norm() == 0.0);
}

TEST_CASE("flow energy identity", "[flow]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const ThetaFamily th = ThetaFamily::first_order(SystemSpec::make(1, "-pi*(q1^2+p1^2)-0.3*cos(2*pi*q1)", "q1"), sp, 0.02);
  // nonconstant modes grow like exp(2 pi |k| s), so the flow starts at a non-critical constant
  const FlowTrajectory tr = integrate_flow(th, Loop::constant(sp, 16, v2(0.1, 0.05)), {0.0, 2.0}, FlowOptions{});
  CHECK(!tr.truncated);
  CHECK(action_energy_residual(tr) < 1e-6);
  for (std::size_t i = 1; i < tr.actions.size(); ++i) CHECK(tr.actions[i] <= tr.actions[i - 1] + 1e-12);
}

TEST_CASE("stretched flow", "[flow]") {
  const PhaseSpace tor = PhaseSpace::standard(1, Model::FlatTorus);
  const ThetaFamily th = ThetaFamily::first_order(SystemSpec::make(1, kTorus, "sin(2*pi*q1)"), tor, 0.02);
  const Loop c = Loop::constant(tor, 16, v2(0.3, 0.2));
  CHECK(h2_plus_holds(th, {c.sample(0)}));
  const FlowTrajectory r0 = stretched_flow(th, 0.0, c, {-4.0, 4.0}, FlowOptions{});
  CHECK(r0.cumulative_energy.back() == 0.0);
  const FlowTrajectory r2 = stretched_flow(th, 2.0, c, {-6.0, 6.0}, FlowOptions{});
  CHECK(std::isfinite(r2.cumulative_energy.back()));
  CHECK(r2.cumulative_energy.back() > 0.0);
  CHECK(r2.cumulative_energy.back() <= 8.0);

  const ThetaFamily bad = ThetaFamily::first_order(SystemSpec::make(1, "10*p1", "q1"), PhaseSpace::standard(1), 0.1);
  CHECK(!h2_plus_holds(bad, {v2(0.0, 0.0), v2(1.0, 0.0)}));
}
