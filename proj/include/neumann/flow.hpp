#ifndef NEUMANN_FLOW_HPP
#define NEUMANN_FLOW_HPP

// Twisted periodic families theta_t = zeta_t + d Hbar_t, the functional A_theta, its
// gradient flow with energy bookkeeping, and the stretched family beta_r.
//
// Conventions: zeta_t = -alpha F dH_t, so omega_t = omega + d theta_t = omega - alpha d(F dH_t).
// Y_t solves d/dt theta_t = omega_t(., Y_t). With g_t = omega_t(., J_t .) the L2 gradient of
// A_theta is G = -J_t (v' - Y_t), and the flow is d/ds v = -G.

#include "neumann/loops.hpp"
#include "neumann/neumann.hpp"
#include "neumann/phase.hpp"
#include "neumann/system.hpp"
#include "neumann/types.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace neumann {

class ThetaFamily {
 public:
  // theta_t = d Hbar_t (classical mechanics), twist K = Hbar_1.
  static ThetaFamily classical(const SystemSpec& sys, const PhaseSpace& space, Vec basepoint = {}) {
    return ThetaFamily(sys, space, 0.0, false, std::move(basepoint));
  }

  // theta_t = -alpha F dH_t + d Hbar_t.
  static ThetaFamily first_order(const SystemSpec& sys, const PhaseSpace& space, double alpha,
                                 Vec basepoint = {}) {
    return ThetaFamily(sys, space, alpha, true, std::move(basepoint));
  }

  const SystemSpec& system() const { return sys_; }
  const PhaseSpace& space() const { return space_; }
  double alpha() const { return alpha_; }
  bool has_zeta() const { return with_zeta_; }
  const Vec& basepoint() const { return p_; }

  // Hbar_t(x) = int_0^t H(x, r) dr by Gauss-Legendre on unit pieces.
  double Hbar(const Vec& x, double t) const {
    return integrate_time(t, [&](double r) { return Vec::Constant(1, sys_.H(x, r)); })[0];
  }

  Vec Hbar_grad(const Vec& x, double t) const {
    return integrate_time(t, [&](double r) { return sys_.H_jet(x, r, 1).grad; });
  }

  double K(const Vec& x) const { return Hbar(x, 1.0); }
  Vec K_grad(const Vec& x) const { return Hbar_grad(x, 1.0); }

  Vec zeta(const Vec& x, double t) const {
    if (!with_zeta_) return Vec::Zero(space_.dim());
    return -alpha_ * sys_.F(x) * sys_.H_jet(x, t, 1).grad;
  }

  Vec theta(const Vec& x, double t) const { return zeta(x, t) + Hbar_grad(x, t); }

  // d/dt theta_t = -alpha F d(dH/dt) + dH_t.
  Vec dt_theta(const Vec& x, double t) const {
    const HamiltonianJet h = sys_.H_jet(x, t, with_zeta_ ? 2 : 1);
    Vec out = h.grad;
    if (with_zeta_) out -= alpha_ * sys_.F(x) * h.grad_dt;
    return out;
  }

  // omega + tau d theta_t.
  Mat omega_t(const Vec& x, double t, double tau = 1.0) const {
    if (!with_zeta_ || tau == 0.0) return space_.omega;
    return space_.omega - tau * alpha_ * d_zeta(sys_, t, x);
  }

  // Y with tau d/dt theta_t = omega_{tau,t}(., Y).
  Vec super_field(const Vec& x, double t, double tau = 1.0) const {
    const Mat w = omega_t(x, t, tau);
    if (std::abs(w.determinant()) < 1e-12) throw DegenerateFormError("degenerate two-form");
    return w.partialPivLu().solve(tau * dt_theta(x, t));
  }

  // |theta_{t+1} - theta_t - dK| at (x, t).
  double twisted_periodicity_residual(const Vec& x, double t) const {
    return (theta(x, t + 1.0) - theta(x, t) - K_grad(x)).cwiseAbs().maxCoeff();
  }

  bool nondegenerate_at(const Vec& x, double t, double tau = 1.0) const {
    return std::abs(omega_t(x, t, tau).determinant()) > 1e-12;
  }

 private:
  ThetaFamily(SystemSpec sys, PhaseSpace space, double alpha, bool with_zeta, Vec p)
      : sys_(std::move(sys)), space_(std::move(space)), alpha_(alpha), with_zeta_(with_zeta), p_(std::move(p)) {
    if (sys_.dim() != space_.dim()) throw std::invalid_argument("system and phase space dimensions differ");
    if (p_.size() == 0) p_ = Vec::Zero(space_.dim());
    check_dim(space_, p_, "basepoint");
    if (!(alpha_ >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  }

  Vec integrate_time(double t, const std::function<Vec(double)>& f) const {
    using Rule = boost::math::quadrature::gauss<double, 20>;
    const auto& xs = Rule::abscissa();
    const auto& ws = Rule::weights();
    auto piece = [&](double a, double b) {
      const double c = 0.5 * (a + b), h = 0.5 * (b - a);
      Vec acc;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Vec term = ws[i] * (f(c + h * xs[i]) + f(c - h * xs[i]));
        if (acc.size() == 0) acc = std::move(term);
        else acc += term;
      }
      return Vec(h * acc);
    };
    const double sign = t < 0.0 ? -1.0 : 1.0;
    const double span = std::abs(t);
    const double lo = std::min(0.0, t);
    const int whole = static_cast<int>(std::floor(span));
    Vec total = Vec::Zero(f(0.0).size());
    for (int k = 0; k < whole; ++k) total += piece(lo + k, lo + k + 1);
    if (span > whole) total += piece(lo + whole, lo + span);
    return sign * total;
  }

  SystemSpec sys_;
  PhaseSpace space_;
  double alpha_ = 0.0;
  bool with_zeta_ = false;
  Vec p_;
};

inline Vec super_field(const ThetaFamily& th, const Vec& x, double t) { return th.super_field(x, t); }

// omega + tau d theta_t invertible for tau in {0, 1/4, 1/2, 3/4, 1} at the given points and
// time_samples uniform times.
inline bool h2_plus_holds(const ThetaFamily& th, const std::vector<Vec>& points, int time_samples = 8) {
  for (const Vec& x : points)
    for (int i = 0; i < time_samples; ++i)
      for (int k = 0; k <= 4; ++k)
        if (!th.nondegenerate_at(x, static_cast<double>(i) / time_samples, 0.25 * k)) return false;
  return true;
}

// (1/N) sum zeta_{t_j}(v_j) . v'_j.
inline double zeta_pairing(const ThetaFamily& th, const Loop& v) {
  if (!th.has_zeta()) return 0.0;
  const Mat& dv = v.grid_derivative();
  double s = 0.0;
  for (int j = 0; j < v.N(); ++j) s += th.zeta(v.sample(j), v.time(j)).dot(dv.row(j).transpose());
  return s / v.N();
}

// The s-derivative factor of A_{tau theta}: int zeta_t(v') - mean(H) + Hbar_1(p).
inline double theta_bracket(const ThetaFamily& th, const Loop& v) {
  double mean = 0.0;
  for (int j = 0; j < v.N(); ++j) mean += th.system().H(v.sample(j), v.time(j));
  return zeta_pairing(th, v) - mean / v.N() + th.K(th.basepoint());
}

// A_{tau theta}(v) = liouville(v) + tau (int zeta_t(v') - mean(H) + Hbar_1(p)).
inline double a_theta_scaled(const ThetaFamily& th, const Loop& v, double tau) {
  if (v.space().model == Model::FlatTorus && !v.contractible()) throw PreconditionError("loop not contractible");
  return liouville_integral(v) + (tau == 0.0 ? 0.0 : tau * theta_bracket(th, v));
}

inline double a_theta(const ThetaFamily& th, const Loop& v) { return a_theta_scaled(th, v, 1.0); }

struct FlowGradient {
  TangentField G;
  std::vector<Mat> metric;
};

// G_j = -J_{tau,t_j}(v_j) (v'_j - Y_{tau,t_j}(v_j)) with the metric used for the energy.
inline FlowGradient flow_gradient_scaled(const ThetaFamily& th, const Loop& v, double tau) {
  const int n = v.N();
  FlowGradient fg;
  Mat g(n, v.dim());
  fg.metric.resize(n);
  const Mat& dv = v.grid_derivative();
  for (int j = 0; j < n; ++j) {
    const Vec x = v.sample(j);
    const double t = v.time(j);
    const CompatibleStructure cs = compatible_structure(th.omega_t(x, t, tau));
    const Vec y = tau == 0.0 ? Vec::Zero(v.dim()) : th.super_field(x, t, tau);
    g.row(j) = (-cs.J * (dv.row(j).transpose() - y)).transpose();
    fg.metric[j] = cs.g;
  }
  fg.G = TangentField(std::move(g));
  return fg;
}

inline TangentField flow_gradient(const ThetaFamily& th, const Loop& v) {
  return flow_gradient_scaled(th, v, 1.0).G;
}

// Pointwise covector of dA_theta: omega_t(., v' - Y_t) as a row per grid time.
inline CotangentField theta_oneform(const ThetaFamily& th, const Loop& v) {
  const Mat& dv = v.grid_derivative();
  Mat r(v.N(), v.dim());
  for (int j = 0; j < v.N(); ++j) {
    const Vec x = v.sample(j);
    const double t = v.time(j);
    r.row(j) = (th.omega_t(x, t) * (dv.row(j).transpose() - th.super_field(x, t))).transpose();
  }
  return CotangentField(std::move(r));
}

// Base bump: 1 on [-1, 1], 0 off (-2, 2), smooth monotone shoulders.
inline double base_bump(double s) {
  const double a = std::abs(s);
  if (a <= 1.0) return 1.0;
  if (a >= 2.0) return 0.0;
  const double u = std::exp(-1.0 / (2.0 - a));
  const double w = std::exp(-1.0 / (a - 1.0));
  return u / (u + w);
}

inline double base_bump_derivative(double s) {
  const double a = std::abs(s);
  if (a <= 1.0 || a >= 2.0) return 0.0;
  const double x = 2.0 - a, y = a - 1.0;
  const double u = std::exp(-1.0 / x), w = std::exp(-1.0 / y);
  const double du = u / (x * x), dw = w / (y * y);  // psi'(x) = psi(x) / x^2
  const double d = (-du * w - u * dw) / ((u + w) * (u + w));
  return s > 0.0 ? d : -d;
}

// beta_r: zero for r = 0, r * beta on (0, 1), and the stretched bump for r >= 1.
inline double bump_family(double r, double s) {
  if (r < 0.0) throw std::invalid_argument("bump parameter must be non-negative");
  if (r == 0.0) return 0.0;
  if (r < 1.0) return r * base_bump(s);
  if (s <= -r - 1.0) return base_bump(s + r);
  if (s >= r + 1.0) return base_bump(s - r);
  return 1.0;
}

inline double bump_family_derivative(double r, double s) {
  if (r < 0.0) throw std::invalid_argument("bump parameter must be non-negative");
  if (r == 0.0) return 0.0;
  if (r < 1.0) return r * base_bump_derivative(s);
  if (s <= -r - 1.0) return base_bump_derivative(s + r);
  if (s >= r + 1.0) return base_bump_derivative(s - r);
  return 0.0;
}

struct FlowOptions {
  double max_step = 0.05;
  double min_step = 1e-10;
  int max_steps = 200000;
  double gradient_tol = 0.0;  // stop once max |G| falls below this (s-independent flows only)
  int record_every = 1;
  bool record_loops = true;
};

struct FlowTrajectory {
  std::vector<double> s_nodes;
  std::vector<Loop> loops;
  std::vector<double> actions;
  std::vector<double> cumulative_energy;
  std::vector<double> cumulative_partial_s;  // int d/ds A_{beta_r(s) theta} at fixed v
  bool truncated = false;
  bool converged = false;
  double terminal_gradient = 0.0;
  int steps = 0;
};

namespace detail {

struct FlowState {
  Mat x;
  double energy = 0.0;
  double partial = 0.0;
};

// RK4 on (v, E, P) with dv/ds = -G_{tau(s)}(v), dE/ds = |G|^2_g, dP/ds = tau'(s) B(v).
inline FlowTrajectory run_flow(const ThetaFamily& th, const Loop& v0, double s0, double s1,
                               const std::function<double(double)>& tau,
                               const std::function<double(double)>& dtau, bool autonomous_s,
                               const FlowOptions& opts) {
  if (v0.space().model == Model::FlatTorus && !v0.contractible()) throw PreconditionError("loop not contractible");
  if (!(s1 > s0)) throw std::invalid_argument("flow span must be increasing");
  const int n = v0.N();
  struct Deriv {
    Mat dx;
    double de, dp;
    double gmax;
  };
  auto rhs = [&](double s, const Mat& x) {
    const Loop v = v0.with_samples(x);
    const double ts = tau(s);
    const FlowGradient fg = flow_gradient_scaled(th, v, ts);
    Deriv d;
    d.dx = -fg.G.samples;
    d.de = 0.0;
    for (int j = 0; j < n; ++j) d.de += fg.G.at(j).dot(fg.metric[j] * fg.G.at(j));
    d.de /= n;
    const double dt = dtau(s);
    d.dp = dt == 0.0 ? 0.0 : dt * theta_bracket(th, v);
    d.gmax = 0.0;
    for (const Mat& g : fg.metric) d.gmax = std::max(d.gmax, g.norm());
    return d;
  };

  FlowTrajectory tr;
  FlowState st{v0.samples(), 0.0, 0.0};
  double s = s0;
  auto record = [&](const Loop& v, double grad) {
    tr.s_nodes.push_back(s);
    if (opts.record_loops) tr.loops.push_back(v);
    tr.actions.push_back(a_theta_scaled(th, v, tau(s)));
    tr.cumulative_energy.push_back(st.energy);
    tr.cumulative_partial_s.push_back(st.partial);
    tr.terminal_gradient = grad;
  };
  Deriv k1 = rhs(s, st.x);
  record(v0, k1.dx.cwiseAbs().maxCoeff());
  const double bound = 2.0 / (kPi * n * std::max(1.0, k1.gmax));
  double h = std::min(opts.max_step, bound);
  double action = tr.actions.back();
  while (s < s1 - 1e-14) {
    if (tr.steps >= opts.max_steps) {
      tr.truncated = true;
      break;
    }
    const double hh = std::min(h, s1 - s);
    const Deriv a = k1;
    const Deriv b = rhs(s + 0.5 * hh, st.x + 0.5 * hh * a.dx);
    const Deriv c = rhs(s + 0.5 * hh, st.x + 0.5 * hh * b.dx);
    const Deriv d = rhs(s + hh, st.x + hh * c.dx);
    FlowState next;
    next.x = st.x + hh / 6.0 * (a.dx + 2.0 * b.dx + 2.0 * c.dx + d.dx);
    next.energy = st.energy + hh / 6.0 * (a.de + 2.0 * b.de + 2.0 * c.de + d.de);
    next.partial = st.partial + hh / 6.0 * (a.dp + 2.0 * b.dp + 2.0 * c.dp + d.dp);
    const Loop nv = v0.with_samples(next.x);
    const double naction = a_theta_scaled(th, nv, tau(s + hh));
    // A_{tau theta} can only increase through its explicit s-dependence
    const double allowed = next.partial - st.partial;
    if (naction > action + allowed + 1e-12 * (1.0 + std::abs(action))) {
      h *= 0.5;
      if (h < opts.min_step) {
        tr.truncated = true;
        break;
      }
      continue;
    }
    st = std::move(next);
    s += hh;
    action = naction;
    ++tr.steps;
    k1 = rhs(s, st.x);
    const double grad = k1.dx.cwiseAbs().maxCoeff();
    const bool done = autonomous_s && opts.gradient_tol > 0.0 && grad < opts.gradient_tol;
    if (tr.steps % std::max(1, opts.record_every) == 0 || s >= s1 - 1e-14 || done) record(nv, grad);
    if (done) {
      tr.converged = true;
      break;
    }
    h = std::min({h * 1.2, opts.max_step, bound});
  }
  if (tr.s_nodes.back() != s) record(v0.with_samples(st.x), k1.dx.cwiseAbs().maxCoeff());
  if (autonomous_s && opts.gradient_tol > 0.0 && tr.terminal_gradient < opts.gradient_tol) tr.converged = true;
  return tr;
}

}  // namespace detail

inline FlowTrajectory integrate_flow(const ThetaFamily& th, const Loop& v0, std::pair<double, double> s_span,
                                     const FlowOptions& opts) {
  return detail::run_flow(th, v0, s_span.first, s_span.second, [](double) { return 1.0; },
                          [](double) { return 0.0; }, true, opts);
}

// d/ds v = -grad_{beta_r(s)} A_{beta_r(s) theta}(v).
inline FlowTrajectory stretched_flow(const ThetaFamily& th, double r, const Loop& v0,
                                     std::pair<double, double> s_span, const FlowOptions& opts) {
  return detail::run_flow(th, v0, s_span.first, s_span.second, [r](double s) { return bump_family(r, s); },
                          [r](double s) { return bump_family_derivative(r, s); }, r == 0.0, opts);
}

// |(A_first - A_last) + int d/ds A - E_last|; the middle term vanishes for s-independent flows.
inline double action_energy_residual(const FlowTrajectory& tr) {
  if (tr.actions.empty()) return 0.0;
  return std::abs(tr.actions.front() - tr.actions.back() + tr.cumulative_partial_s.back() -
                  tr.cumulative_energy.back());
}

}  // namespace neumann

#endif
