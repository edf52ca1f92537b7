#ifndef NEUMANN_DELAY_HPP
#define NEUMANN_DELAY_HPP

// The circle map tau_v(t) = t + alpha F(v(t)), its inverse, and residuals of the
// delay equations satisfied by spacelike critical loops.

#include "neumann/loops.hpp"
#include "neumann/phase.hpp"
#include "neumann/system.hpp"
#include "neumann/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace neumann {

class NotSpacelikeError : public PreconditionError {
 public:
  NotSpacelikeError() : PreconditionError("not spacelike") {}
};

struct DelayDiagnostics {
  double min_slope = 1.0;
  bool spacelike = true;
  std::vector<double> lightlike_times;
};

// Degree-one lift t + alpha F(v(t)).
inline double tau_lift(const Loop& v, double alpha, const SystemSpec& sys, double t) {
  return t + alpha * sys.F(v.interpolate(t));
}

inline double tau_map(const Loop& v, double alpha, const SystemSpec& sys, double t) {
  const double s = tau_lift(v, alpha, sys, t);
  return s - std::floor(s);
}

// d tau_v / dt = 1 + alpha dF(v(t)) v'(t).
inline double tau_slope(const Loop& v, double alpha, const SystemSpec& sys, double t) {
  if (alpha == 0.0) return 1.0;
  const Vec x = v.interpolate(t);
  return 1.0 + alpha * sys.F_jet(x, 1).grad.dot(v.interpolate_derivative(t));
}

inline DelayDiagnostics diagnostics(const Loop& v, double alpha, const SystemSpec& sys) {
  DelayDiagnostics d;
  const int m = 4 * v.N();
  std::vector<double> slope(m + 1);
  for (int i = 0; i < m; ++i) slope[i] = tau_slope(v, alpha, sys, static_cast<double>(i) / m);
  slope[m] = slope[0];
  d.min_slope = *std::min_element(slope.begin(), slope.end() - 1);
  for (int i = 0; i < m; ++i) {
    double a = static_cast<double>(i) / m, b = static_cast<double>(i + 1) / m;
    double fa = slope[i], fb = slope[i + 1];
    if (fa == 0.0) {
      d.lightlike_times.push_back(a);
      continue;
    }
    if ((fa < 0.0) == (fb < 0.0) || fb == 0.0) continue;
    while (b - a > 1e-10) {
      const double c = 0.5 * (a + b);
      const double fc = tau_slope(v, alpha, sys, c);
      if ((fc < 0.0) == (fa < 0.0)) {
        a = c;
        fa = fc;
      } else {
        b = c;
      }
    }
    d.lightlike_times.push_back(0.5 * (a + b));
  }
  d.spacelike = d.min_slope > 0.0 && d.lightlike_times.empty();
  return d;
}

struct TauInverse {
  double t = 0.0;
  double derivative = 1.0;  // (tau^{-1})'(s) = 1 / tau'(t)
};

namespace detail {

// Solves tau_lift(t) = s for a loop already known to be spacelike.
inline TauInverse invert_tau_unchecked(const Loop& v, double alpha, const SystemSpec& sys, double s) {
  if (alpha == 0.0) return {s, 1.0};
  auto g = [&](double t) { return tau_lift(v, alpha, sys, t) - s; };
  double t = s - alpha * sys.F(v.interpolate(s));
  // bracket: the lift is increasing and differs from t by alpha F
  double lo = t - 0.05, hi = t + 0.05;
  double glo = g(lo), ghi = g(hi);
  for (int k = 0; glo > 0.0 && k < 60; ++k) {
    lo -= 0.1 * (k + 1);
    glo = g(lo);
  }
  for (int k = 0; ghi < 0.0 && k < 60; ++k) {
    hi += 0.1 * (k + 1);
    ghi = g(hi);
  }
  if (glo > 0.0 || ghi < 0.0) throw NotSpacelikeError();
  double gt = g(t);
  for (int it = 0; it < 200; ++it) {
    if (std::abs(gt) < 1e-14) break;
    if (gt < 0.0) lo = t;
    else hi = t;
    const double slope = tau_slope(v, alpha, sys, t);
    double next = t - gt / slope;
    if (!(slope > 0.0) || !(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-16) {
      t = next;
      break;
    }
    t = next;
    gt = g(t);
    if (hi - lo < 1e-15) break;
  }
  return {t, 1.0 / tau_slope(v, alpha, sys, t)};
}

}  // namespace detail

inline TauInverse invert_tau(const Loop& v, double alpha, const SystemSpec& sys, double s) {
  if (!diagnostics(v, alpha, sys).spacelike) throw NotSpacelikeError();
  return detail::invert_tau_unchecked(v, alpha, sys, s);
}

// R(t) = v'(t) - [(tau^{-1})'(t) X_{H_t}(v(t)) + alpha (dH_tau(v(tau)) v'(tau) + dH/dt(v(tau), tau)) X_F(v(t))]
// at the grid times, tau = tau_v(t). The dH/dt term is absent for autonomous H.
inline TangentField delay_residual(const Loop& v, double alpha, const SystemSpec& sys) {
  if (!diagnostics(v, alpha, sys).spacelike) throw NotSpacelikeError();
  const PhaseSpace& sp = v.space();
  const int n = v.N();
  Mat r(n, v.dim());
  for (int j = 0; j < n; ++j) {
    const double t = v.time(j);
    const Vec x = v.sample(j);
    const double inv_slope = detail::invert_tau_unchecked(v, alpha, sys, t).derivative;
    const Vec xh = hamiltonian_vector_field(sp, sys.H_jet(x, t, 1).grad);
    Vec rhs = inv_slope * xh;
    if (alpha != 0.0) {
      const double tau = tau_lift(v, alpha, sys, t);
      const HamiltonianJet hr = sys.H_jet(v.interpolate(tau), tau, 1);
      double factor = hr.grad.dot(v.interpolate_derivative(tau));
      if (!sys.autonomous()) factor += hr.dt;
      rhs += alpha * factor * hamiltonian_vector_field(sp, sys.F_jet(x, 1).grad);
    }
    r.row(j) = (v.derivative_at(j) - rhs).transpose();
  }
  return TangentField(std::move(r));
}

// Residual of the parallel reduction v' = ((tau^{-1})' + alpha dH(v(tau)) v'(tau) G(v)) X_H(v), G = f'(H).
inline TangentField parallel_residual(const Loop& v, double alpha, const SystemSpec& sys) {
  if (!sys.parallel()) throw PreconditionError("parallel_residual requires F = f o H");
  if (!diagnostics(v, alpha, sys).spacelike) throw NotSpacelikeError();
  const PhaseSpace& sp = v.space();
  const int n = v.N();
  Mat r(n, v.dim());
  for (int j = 0; j < n; ++j) {
    const double t = v.time(j);
    const Vec x = v.sample(j);
    double factor = detail::invert_tau_unchecked(v, alpha, sys, t).derivative;
    if (alpha != 0.0) {
      const double tau = tau_lift(v, alpha, sys, t);
      const Vec grad = sys.H_jet(v.interpolate(tau), tau, 1).grad;
      factor += alpha * grad.dot(v.interpolate_derivative(tau)) * sys.G(x);
    }
    const Vec xh = hamiltonian_vector_field(sp, sys.H_jet(x, t, 1).grad);
    r.row(j) = (v.derivative_at(j) - factor * xh).transpose();
  }
  return TangentField(std::move(r));
}

// max_j |obs(v_j) - obs(v_0)|; Hamiltonian-slot observables are evaluated at (v_j, t_j).
inline double conservation_drift(const Loop& v, const Expression& obs) {
  auto eval = [&](int j) {
    std::array<double, kMaxVars> p{};
    const Vec x = v.sample(j);
    for (int i = 0; i < v.dim(); ++i) p[i] = x[i];
    int ar = v.dim();
    if (obs.slot() == Slot::Hamiltonian) p[ar++] = v.time(j);
    if (ar != obs.arity()) throw std::invalid_argument("conservation_drift: observable arity mismatch");
    return obs.eval(std::span<const double>(p.data(), ar));
  };
  const double o0 = eval(0);
  double drift = 0.0;
  for (int j = 1; j < v.N(); ++j) drift = std::max(drift, std::abs(eval(j) - o0));
  return drift;
}

// RK4 integration of x' = f(t) X_H(x) over one period; returns max |x(t) - x0|.
inline double reduced_ode_drift(const PhaseSpace& sp, const SystemSpec& sys, const Vec& x0,
                                const std::function<double(double)>& f, int steps = 1000) {
  auto rhs = [&](double t, const Vec& x) -> Vec {
    return f(t) * hamiltonian_vector_field(sp, sys.H_jet(x, t, 1).grad);
  };
  Vec x = x0;
  const double h = 1.0 / steps;
  double drift = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    const Vec k1 = rhs(t, x);
    const Vec k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
    const Vec k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
    const Vec k4 = rhs(t + h, x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    drift = std::max(drift, (x - x0).cwiseAbs().maxCoeff());
  }
  return drift;
}

}  // namespace neumann

#endif
