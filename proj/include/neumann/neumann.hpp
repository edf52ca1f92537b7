#ifndef NEUMANN_NEUMANN_HPP
#define NEUMANN_NEUMANN_HPP

// Retarded means, their Taylor coefficients, fuzzy variants and the associated one-forms,
// discretized on the uniform loop grid.
//
// Every mean M is a function of the samples v_j. Its covector field c satisfies
// dM(v) w = (1/N) sum_j c_j . w_j exactly for the discrete functional, so c_j = N dM/dv_j.
// The one-form residual of a model is rho_j = Omega v'_j - c_j and the action is
// liouville_integral(v) - M(v); v is critical iff rho vanishes.

#include "neumann/loops.hpp"
#include "neumann/phase.hpp"
#include "neumann/system.hpp"
#include "neumann/types.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

namespace neumann {

enum class Variant { Exact, Taylor, Fuzzy, FirstOrderDeformed };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Exact: return "Exact";
    case Variant::Taylor: return "Taylor";
    case Variant::Fuzzy: return "Fuzzy";
    case Variant::FirstOrderDeformed: return "FirstOrderDeformed";
  }
  return "?";
}

inline constexpr int kMaxTaylorOrder = 4;

struct ActionModel {
  Variant variant = Variant::Exact;
  int taylor_n = 1;
  double alpha = 0.0;
  SystemSpec system;
  PhaseSpace space;

  bool autonomous() const { return system.autonomous(); }

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
    if (variant == Variant::Taylor && (taylor_n < 0 || taylor_n > kMaxTaylorOrder))
      throw std::invalid_argument("Taylor order must be in [0, 4]");
    if (system.dim() != space.dim()) throw std::invalid_argument("system and phase space dimensions differ");
    if (variant == Variant::Fuzzy) {
      if (!system.beta()) throw std::invalid_argument("fuzzy model needs a kernel");
      if (!autonomous()) throw PreconditionError("fuzzy functionals require an autonomous Hamiltonian");
    }
  }

  ActionModel with_alpha(double a) const {
    ActionModel m = *this;
    m.alpha = a;
    return m;
  }

  static ActionModel make(Variant variant, const SystemSpec& sys, const PhaseSpace& space, double alpha,
                          int taylor_n = 1) {
    ActionModel m;
    m.variant = variant;
    m.system = sys;
    m.space = space;
    m.alpha = alpha;
    m.taylor_n = taylor_n;
    m.validate();
    return m;
  }
};

namespace detail {

// Cardinal weights l(s - t_m), m = 0..N-1, sharing one sine evaluation.
inline void cardinal_row(int n, double s, std::vector<double>& w) {
  w.assign(n, 0.0);
  const double u = s - std::floor(s);
  const double pos = u * n;
  if (pos == std::floor(pos)) {
    w[static_cast<int>(pos) % n] = 1.0;
    return;
  }
  const double sn = std::sin(kPi * n * u);
  for (int m = 0; m < n; ++m) {
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    w[m] = sign * sn / (n * std::tan(kPi * (u - static_cast<double>(m) / n)));
  }
}

struct MeanEval {
  double value = 0.0;
  Mat cov;  // N x 2n
};

// Exact retarded mean (1/N) sum_j H(P(s_j), s_j), s_j = t_j + alpha F(v_j), with its covector.
inline MeanEval exact_mean(const SystemSpec& sys, const Loop& v, double alpha, bool want_cov) {
  const int n = v.N(), d = v.dim();
  MeanEval r;
  if (want_cov) r.cov = Mat::Zero(n, d);
  std::vector<double> w;
  for (int j = 0; j < n; ++j) {
    const Vec vj = v.sample(j);
    const RetardationJet fj = sys.F_jet(vj, want_cov ? 1 : 0);
    const double s = v.time(j) + alpha * fj.value;
    const Vec x = v.interpolate(s);
    if (!want_cov) {
      r.value += sys.H(x, s);
      continue;
    }
    const HamiltonianJet hj = sys.H_jet(x, s, 1);
    r.value += hj.value;
    cardinal_row(n, s, w);
    for (int m = 0; m < n; ++m)
      if (w[m] != 0.0) r.cov.row(m) += w[m] * hj.grad.transpose();
    if (alpha != 0.0) {
      const Vec xp = v.interpolate_derivative(s);
      r.cov.row(j) += alpha * (hj.grad.dot(xp) + hj.dt) * fj.grad.transpose();
    }
  }
  r.value /= n;
  return r;
}

inline MeanEval plain_mean(const SystemSpec& sys, const Loop& v, bool want_cov) {
  const int n = v.N(), d = v.dim();
  MeanEval r;
  if (want_cov) r.cov = Mat(n, d);
  for (int j = 0; j < n; ++j) {
    const HamiltonianJet hj = sys.H_jet(v.sample(j), v.time(j), want_cov ? 1 : 0);
    r.value += hj.value;
    if (want_cov) r.cov.row(j) = hj.grad.transpose();
  }
  r.value /= n;
  return r;
}

// First Taylor coefficient (1/N) sum_j F_j (grad H_j . v'_j + dH_j/dt) and its covector
// c_m = grad F_m (..) + F_m (Hess_m v'_m + grad dtH_m) - D(F grad H)_m.
inline MeanEval taylor1_mean(const SystemSpec& sys, const Loop& v, bool want_cov) {
  const int n = v.N(), d = v.dim();
  const Mat& dv = v.grid_derivative();
  MeanEval r;
  Mat fgrad(n, d);
  if (want_cov) r.cov = Mat::Zero(n, d);
  for (int j = 0; j < n; ++j) {
    const Vec vj = v.sample(j);
    const Vec dvj = dv.row(j).transpose();
    const HamiltonianJet hj = sys.H_jet(vj, v.time(j), want_cov ? 2 : 1);
    const RetardationJet fj = sys.F_jet(vj, want_cov ? 1 : 0);
    const double inner = hj.grad.dot(dvj) + hj.dt;
    r.value += fj.value * inner;
    if (want_cov) {
      r.cov.row(j) = (fj.grad * inner + fj.value * (hj.hess * dvj + hj.grad_dt)).transpose();
      fgrad.row(j) = fj.value * hj.grad.transpose();
    }
  }
  r.value /= n;
  if (want_cov) r.cov -= spectral_derivative(fgrad);
  return r;
}

// Weights on alpha nodes for the k-th Taylor coefficient: central differences at
// h = 0.02 and h = 0.01, one Richardson step, divided by k!.
inline std::map<double, double> taylor_stencil(int k) {
  auto stencil = [k](double h) {
    std::vector<std::pair<double, double>> s;
    switch (k) {
      case 2: s = {{-h, 1.0}, {0.0, -2.0}, {h, 1.0}}; for (auto& p : s) p.second /= h * h; break;
      case 3:
        s = {{-2 * h, -1.0}, {-h, 2.0}, {h, -2.0}, {2 * h, 1.0}};
        for (auto& p : s) p.second /= 2.0 * h * h * h;
        break;
      case 4:
        s = {{-2 * h, 1.0}, {-h, -4.0}, {0.0, 6.0}, {h, -4.0}, {2 * h, 1.0}};
        for (auto& p : s) p.second /= h * h * h * h;
        break;
      default: throw std::invalid_argument("Taylor coefficient order must be at most 4");
    }
    return s;
  };
  double fact = 1.0;
  for (int i = 2; i <= k; ++i) fact *= i;
  std::map<double, double> w;
  for (const auto& [a, c] : stencil(0.01)) w[a] += 4.0 / 3.0 * c / fact;
  for (const auto& [a, c] : stencil(0.02)) w[a] -= 1.0 / 3.0 * c / fact;
  return w;
}

inline MeanEval taylor_coefficient_eval(const SystemSpec& sys, const Loop& v, int k, bool want_cov) {
  if (k < 0) throw std::invalid_argument("Taylor coefficient order must be non-negative");
  if (k > kMaxTaylorOrder) throw std::invalid_argument("Taylor coefficient order must be at most 4");
  if (k == 0) return plain_mean(sys, v, want_cov);
  if (k == 1) return taylor1_mean(sys, v, want_cov);
  MeanEval r;
  if (want_cov) r.cov = Mat::Zero(v.N(), v.dim());
  for (const auto& [a, c] : taylor_stencil(k)) {
    const MeanEval e = exact_mean(sys, v, a, want_cov);
    r.value += c * e.value;
    if (want_cov) r.cov += c * e.cov;
  }
  return r;
}

// beta_i = beta(i / N).
inline Vec kernel_samples(const Kernel& k, int n) {
  Vec b(n);
  for (int i = 0; i < n; ++i) b[i] = k.value(static_cast<double>(i) / n);
  return b;
}

// (1/N^2) sum_{j,i} beta_i H(P(t_j + alpha F(v_{j+i}))).
inline MeanEval fuzzy_mean_eval(const SystemSpec& sys, const Loop& v, double alpha, bool want_cov) {
  const int n = v.N(), d = v.dim();
  const Vec beta = kernel_samples(sys.kernel(), n);
  std::vector<RetardationJet> fj(n);
  for (int j = 0; j < n; ++j) fj[j] = sys.F_jet(v.sample(j), want_cov ? 1 : 0);
  MeanEval r;
  if (want_cov) r.cov = Mat::Zero(n, d);
  std::vector<double> w;
  const double inv2 = 1.0 / (static_cast<double>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (beta[i] == 0.0) continue;
      const int src = (j + i) % n;
      const double s = v.time(j) + alpha * fj[src].value;
      const Vec x = v.interpolate(s);
      if (!want_cov) {
        r.value += beta[i] * sys.H(x, s);
        continue;
      }
      const HamiltonianJet hj = sys.H_jet(x, s, 1);
      r.value += beta[i] * hj.value;
      cardinal_row(n, s, w);
      const double wb = beta[i] / n;
      for (int m = 0; m < n; ++m)
        if (w[m] != 0.0) r.cov.row(m) += wb * w[m] * hj.grad.transpose();
      if (alpha != 0.0) {
        const Vec xp = v.interpolate_derivative(s);
        r.cov.row(src) += wb * alpha * hj.grad.dot(xp) * fj[src].grad.transpose();
      }
    }
  }
  r.value *= inv2;
  return r;
}

// Fb_j = (1/N) sum_i beta_i F(v_{j+i}).
inline Vec fuzzy_retardation(const SystemSpec& sys, const Loop& v, const Vec& beta) {
  const int n = v.N();
  Vec f(n), fb = Vec::Zero(n);
  for (int j = 0; j < n; ++j) f[j] = sys.F(v.sample(j));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) fb[j] += beta[i] * f[(j + i) % n];
  return fb / n;
}

// (1/N) sum_j Fb_j grad H_j . v'_j with covector
// c_m = grad F_m (1/N) sum_j beta_{m-j} (grad H_j . v'_j) + Fb_m Hess_m v'_m - D(Fb grad H)_m.
inline MeanEval fuzzy_taylor1_eval(const SystemSpec& sys, const Loop& v, bool want_cov) {
  const int n = v.N(), d = v.dim();
  const Vec beta = kernel_samples(sys.kernel(), n);
  const Vec fb = fuzzy_retardation(sys, v, beta);
  const Mat& dv = v.grid_derivative();
  MeanEval r;
  Vec hv(n);
  std::vector<HamiltonianJet> hj(n);
  for (int j = 0; j < n; ++j) {
    hj[j] = sys.H_jet(v.sample(j), v.time(j), want_cov ? 2 : 1);
    hv[j] = hj[j].grad.dot(dv.row(j).transpose());
    r.value += fb[j] * hv[j];
  }
  r.value /= n;
  if (!want_cov) return r;
  r.cov = Mat::Zero(n, d);
  Mat fbgrad(n, d);
  for (int m = 0; m < n; ++m) {
    double bm = 0.0;
    for (int i = 0; i < n; ++i) bm += beta[i] * hv[((m - i) % n + n) % n];
    bm /= n;
    const RetardationJet fm = sys.F_jet(v.sample(m), 1);
    r.cov.row(m) = (fm.grad * bm + fb[m] * hj[m].hess * dv.row(m).transpose()).transpose();
    fbgrad.row(m) = fb[m] * hj[m].grad.transpose();
  }
  r.cov -= spectral_derivative(fbgrad);
  return r;
}

inline void require_autonomous(const SystemSpec& sys) {
  if (!sys.autonomous()) throw PreconditionError("fuzzy functionals require an autonomous Hamiltonian");
}

}  // namespace detail

// The retarded mean at the model's alpha.
inline double retarded_mean(const ActionModel& m, const Loop& v) {
  return detail::exact_mean(m.system, v, m.alpha, false).value;
}

// Covector field of the exact retarded mean, using the adjoint of the interpolation.
inline CotangentField mean_differential(const ActionModel& m, const Loop& v) {
  return CotangentField(detail::exact_mean(m.system, v, m.alpha, true).cov);
}

inline double taylor_coefficient(const ActionModel& m, int k, const Loop& v) {
  return detail::taylor_coefficient_eval(m.system, v, k, false).value;
}

inline CotangentField taylor_coefficient_differential(const ActionModel& m, int k, const Loop& v) {
  return CotangentField(detail::taylor_coefficient_eval(m.system, v, k, true).cov);
}

inline double taylor_mean(const ActionModel& m, const Loop& v) {
  if (m.taylor_n < 0 || m.taylor_n > kMaxTaylorOrder) throw std::invalid_argument("Taylor order must be in [0, 4]");
  double s = 0.0, ak = 1.0;
  for (int k = 0; k <= m.taylor_n; ++k) {
    s += ak * taylor_coefficient(m, k, v);
    ak *= m.alpha;
  }
  return s;
}

inline double fuzzy_mean(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  return detail::fuzzy_mean_eval(m.system, v, m.alpha, false).value;
}

inline CotangentField fuzzy_mean_differential(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  return CotangentField(detail::fuzzy_mean_eval(m.system, v, m.alpha, true).cov);
}

inline double fuzzy_taylor1(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  return detail::fuzzy_taylor1_eval(m.system, v, false).value;
}

inline CotangentField fuzzy_taylor1_differential(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  return CotangentField(detail::fuzzy_taylor1_eval(m.system, v, true).cov);
}

// zeta_t = F dH_t.
inline Vec zeta_form(const ActionModel& m, double t, const Vec& x) {
  return m.system.F(x) * m.system.H_jet(x, t, 1).grad;
}

// (d zeta_t)_ij = d_i(F d_j H_t) - d_j(F d_i H_t), assembled from second derivatives.
inline Mat d_zeta(const SystemSpec& sys, double t, const Vec& x) {
  const HamiltonianJet h = sys.H_jet(x, t, 2);
  const RetardationJet f = sys.F_jet(x, 1);
  const Mat di = f.grad * h.grad.transpose() + f.value * h.hess;  // d_i (F d_j H)
  return di - di.transpose();
}

inline Mat deformed_two_form(const ActionModel& m, double t, const Vec& x) {
  return m.space.omega - m.alpha * d_zeta(m.system, t, x);
}

// H^alpha = H + alpha dH/dt F.
inline double adjusted_hamiltonian(const ActionModel& m, const Vec& x, double t) {
  const HamiltonianJet h = m.system.H_jet(x, t, 1);
  return h.value + m.alpha * h.dt * m.system.F(x);
}

inline Vec adjusted_hamiltonian_gradient(const ActionModel& m, const Vec& x, double t) {
  const HamiltonianJet h = m.system.H_jet(x, t, 2);
  const RetardationJet f = m.system.F_jet(x, 1);
  return h.grad + m.alpha * (h.grad_dt * f.value + h.dt * f.grad);
}

// d/dt zeta_t = F d(dH/dt).
inline Vec zeta_time_derivative(const ActionModel& m, double t, const Vec& x) {
  return m.system.F(x) * m.system.H_jet(x, t, 2).grad_dt;
}

// Mean functional of the model's variant.
inline double mean_value(const ActionModel& m, const Loop& v) {
  switch (m.variant) {
    case Variant::Exact: return retarded_mean(m, v);
    case Variant::Taylor: return taylor_mean(m, v);
    case Variant::Fuzzy: return fuzzy_mean(m, v);
    case Variant::FirstOrderDeformed: {
      const ActionModel t1 = [&] { ActionModel c = m; c.variant = Variant::Taylor; c.taylor_n = 1; return c; }();
      return taylor_mean(t1, v);
    }
  }
  return 0.0;
}

inline double action_value(const ActionModel& m, const Loop& v) {
  return liouville_integral(v) - mean_value(m, v);
}

// The model's two-form at (x, t): omega, or omega - alpha d zeta_t for FirstOrderDeformed.
inline Mat model_two_form(const ActionModel& m, double t, const Vec& x) {
  if (m.variant == Variant::FirstOrderDeformed) return deformed_two_form(m, t, x);
  return m.space.omega;
}

// Covector rho with (a_omega - dM)(v) w = (1/N) sum rho_j . w_j.
inline CotangentField oneform_residual(const ActionModel& m, const Loop& v) {
  const int n = v.N();
  const Mat& dv = v.grid_derivative();
  Mat rho = dv * m.space.omega.transpose();
  switch (m.variant) {
    case Variant::Exact: rho -= mean_differential(m, v).samples; break;
    case Variant::Fuzzy: rho -= fuzzy_mean_differential(m, v).samples; break;
    case Variant::Taylor: {
      double ak = 1.0;
      for (int k = 0; k <= m.taylor_n; ++k) {
        if (ak != 0.0) rho -= ak * taylor_coefficient_differential(m, k, v).samples;
        ak *= m.alpha;
      }
      break;
    }
    case Variant::FirstOrderDeformed:
      // (omega - alpha d zeta_t) v' - dH^alpha + alpha d/dt zeta_t, pointwise
      for (int j = 0; j < n; ++j) {
        const Vec x = v.sample(j);
        const double t = v.time(j);
        const Vec r = deformed_two_form(m, t, x) * dv.row(j).transpose() -
                      adjusted_hamiltonian_gradient(m, x, t) + m.alpha * zeta_time_derivative(m, t, x);
        rho.row(j) = r.transpose();
      }
      break;
  }
  return CotangentField(std::move(rho));
}

// Metric g_j of the model along v, from compatible_structure of its two-form.
inline std::vector<Mat> model_metric(const ActionModel& m, const Loop& v) {
  std::vector<Mat> g(v.N());
  if (m.variant != Variant::FirstOrderDeformed) {
    const Mat g0 = compatible_structure(m.space.omega).g;
    for (auto& gj : g) gj = g0;
    return g;
  }
  for (int j = 0; j < v.N(); ++j) g[j] = compatible_structure(model_two_form(m, v.time(j), v.sample(j))).g;
  return g;
}

// Tangent field G with l2_inner(G, w; g) = (1/N) sum rho_j . w_j.
inline TangentField l2_gradient(const ActionModel& m, const Loop& v) {
  const CotangentField rho = oneform_residual(m, v);
  const std::vector<Mat> g = model_metric(m, v);
  Mat out(v.N(), v.dim());
  for (int j = 0; j < v.N(); ++j) out.row(j) = g[j].ldlt().solve(rho.at(j)).transpose();
  return TangentField(std::move(out));
}

// Covector sides of the first-order identity for the Taylor(1) model.
//   lhs:        omega v' - dH - alpha dH^1                      (Taylor machinery)
//   rhs:        (omega - alpha d zeta_t) v' - dH^alpha          (deformed data, pointwise)
//   correction: alpha d/dt zeta_t, which closes lhs = rhs + correction when H depends on t
struct FirstOrderIdentitySides {
  CotangentField lhs;
  CotangentField rhs;
  CotangentField correction;
};

inline FirstOrderIdentitySides first_order_identity_sides(const ActionModel& m, const Loop& v) {
  ActionModel t1 = m;
  t1.variant = Variant::Taylor;
  t1.taylor_n = 1;
  const int n = v.N();
  const Mat& dv = v.grid_derivative();
  FirstOrderIdentitySides s;
  s.lhs = oneform_residual(t1, v);
  Mat rhs(n, v.dim()), corr(n, v.dim());
  for (int j = 0; j < n; ++j) {
    const Vec x = v.sample(j);
    const double t = v.time(j);
    rhs.row(j) = (deformed_two_form(m, t, x) * dv.row(j).transpose() - adjusted_hamiltonian_gradient(m, x, t)).transpose();
    corr.row(j) = (m.alpha * zeta_time_derivative(m, t, x)).transpose();
  }
  s.rhs = CotangentField(std::move(rhs));
  s.correction = CotangentField(std::move(corr));
  return s;
}

namespace detail {

inline double max_pairing(const CotangentField& diff, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const TangentField w = random_tangent(diff.N(), diff.dim(), rng, 4);
    worst = std::max(worst, std::abs(pairing(diff, w)));
  }
  return worst;
}

}  // namespace detail

// max over random tangent fields w of |lhs(w) - rhs(w) - correction(w)|.
inline double first_order_identity_residual(const ActionModel& m, const Loop& v, int trials,
                                            std::uint64_t seed = 1) {
  const FirstOrderIdentitySides s = first_order_identity_sides(m, v);
  return detail::max_pairing(s.lhs - s.rhs - s.correction, trials, seed);
}

// The same comparison without the d/dt zeta_t term.
inline double first_order_identity_residual_literal(const ActionModel& m, const Loop& v, int trials,
                                                    std::uint64_t seed = 1) {
  const FirstOrderIdentitySides s = first_order_identity_sides(m, v);
  return detail::max_pairing(s.lhs - s.rhs, trials, seed);
}

// Kernel action of the nonlocal one-form: c_j = Fb_j grad H(v_j).
inline CotangentField fuzzy_sigma_form(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  const int n = v.N();
  const Vec fb = detail::fuzzy_retardation(m.system, v, detail::kernel_samples(m.system.kernel(), n));
  Mat c(n, v.dim());
  for (int j = 0; j < n; ++j) c.row(j) = fb[j] * m.system.H_jet(v.sample(j), v.time(j), 1).grad.transpose();
  return CotangentField(std::move(c));
}

// rho of the fuzzy Neumann one-form, omega v' - dH_{alpha,beta}.
inline CotangentField fuzzy_oneform_residual(const ActionModel& m, const Loop& v) {
  return CotangentField(v.grid_derivative() * m.space.omega.transpose() - fuzzy_mean_differential(m, v).samples);
}

struct FuzzyIdentitySides {
  CotangentField lhs;  // omega v' - mass dH - alpha dH^1_beta
  CotangentField rhs;  // omega v' - alpha kappa - mass dH, kappa the pairing of d sigma_beta(., v')
};

inline FuzzyIdentitySides fuzzy_identity_sides(const ActionModel& m, const Loop& v) {
  detail::require_autonomous(m.system);
  const SystemSpec& sys = m.system;
  const int n = v.N(), d = v.dim();
  const Vec beta = detail::kernel_samples(sys.kernel(), n);
  const double mass = beta.sum() / n;
  const Mat& dv = v.grid_derivative();
  const Mat av = dv * m.space.omega.transpose();
  std::vector<Vec> gh(n), gf(n);
  Vec hv(n), fv(n);
  for (int j = 0; j < n; ++j) {
    gh[j] = sys.H_jet(v.sample(j), v.time(j), 1).grad;
    gf[j] = sys.F_jet(v.sample(j), 1).grad;
    hv[j] = gh[j].dot(dv.row(j).transpose());
    fv[j] = gf[j].dot(dv.row(j).transpose());
  }
  Mat gh_mat(n, d);
  for (int j = 0; j < n; ++j) gh_mat.row(j) = gh[j].transpose();
  FuzzyIdentitySides s;
  s.lhs = CotangentField(av - mass * gh_mat - m.alpha * fuzzy_taylor1_differential(m, v).samples);
  Mat kappa(n, d);
  for (int j = 0; j < n; ++j) {
    double b = 0.0, fd = 0.0;
    for (int i = 0; i < n; ++i) {
      b += beta[i] * hv[((j - i) % n + n) % n];
      fd += beta[i] * fv[(j + i) % n];
    }
    kappa.row(j) = (gf[j] * (b / n) - gh[j] * (fd / n)).transpose();
  }
  s.rhs = CotangentField(av - m.alpha * kappa - mass * gh_mat);
  return s;
}

inline double fuzzy_identity_residual(const ActionModel& m, const Loop& v, int trials, std::uint64_t seed = 1) {
  const FuzzyIdentitySides s = fuzzy_identity_sides(m, v);
  return detail::max_pairing(s.lhs - s.rhs, trials, seed);
}

struct EstimateSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

// lhs = sum_c int |v_c'(t) int v_c'(t + tau) beta(tau) dtau| dt,
// rhs = |v|_inf * sum_c |v_c'|_L1 * |beta'|_L1.
inline EstimateSides fuzzy_estimate_check(const Loop& v, const Kernel& beta) {
  const int n = v.N(), d = v.dim();
  const Mat& dv = v.grid_derivative();
  const Vec b = detail::kernel_samples(beta, n);
  EstimateSides e;
  double l1 = 0.0;
  for (int c = 0; c < d; ++c) {
    for (int j = 0; j < n; ++j) {
      double inner = 0.0;
      for (int i = 0; i < n; ++i) inner += dv((j + i) % n, c) * b[i];
      e.lhs += std::abs(dv(j, c) * inner / n);
      l1 += std::abs(dv(j, c));
    }
  }
  e.lhs /= n;
  l1 /= n;
  const int fine = 8 * n;
  double sup = 0.0, dbeta = 0.0;
  for (int j = 0; j < fine; ++j) {
    const double t = static_cast<double>(j) / fine;
    sup = std::max(sup, v.interpolate(t).cwiseAbs().maxCoeff());
    dbeta += std::abs(beta.derivative(t));
  }
  e.rhs = sup * l1 * dbeta / fine;
  return e;
}


struct DifferentialCheck {
  double analytic = 0.0;
  double finite_difference = 0.0;
  double rel_error = 0.0;
};

// (1/N) sum rho . w against the central difference of action_value with step h.
inline DifferentialCheck differential_check(const ActionModel& m, const Loop& v, const TangentField& w,
                                            double h = 1e-5) {
  DifferentialCheck c;
  c.analytic = pairing(oneform_residual(m, v), w);
  const double ap = action_value(m, v.with_samples(v.samples() + h * w.samples));
  const double am = action_value(m, v.with_samples(v.samples() - h * w.samples));
  c.finite_difference = (ap - am) / (2.0 * h);
  const double scale = std::max({std::abs(c.analytic), std::abs(c.finite_difference), 1e-10});
  c.rel_error = std::abs(c.analytic - c.finite_difference) / scale;
  return c;
}

struct RemainderStudy {
  std::vector<double> alphas;
  std::vector<double> remainders;  // |retarded_mean - taylor_mean(n)|
  double slope = 0.0;              // least-squares slope of log remainder against log alpha
};

inline RemainderStudy taylor_remainder_study(const SystemSpec& sys, const PhaseSpace& space, const Loop& v,
                                             int n, const std::vector<double>& alphas) {
  if (alphas.size() < 2) throw std::invalid_argument("remainder study needs at least two alphas");
  RemainderStudy r;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (double a : alphas) {
    if (!(a > 0.0)) throw std::invalid_argument("remainder study alphas must be positive");
    const double exact = retarded_mean(ActionModel::make(Variant::Exact, sys, space, a), v);
    const double approx = taylor_mean(ActionModel::make(Variant::Taylor, sys, space, a, n), v);
    const double rem = std::abs(exact - approx);
    r.alphas.push_back(a);
    r.remainders.push_back(rem);
    const double x = std::log(a), y = std::log(std::max(rem, 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(alphas.size());
  r.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  return r;
}

struct NearDeltaPoint {
  double sigma = 0.0;
  double mean_gap = 0.0;     // |fuzzy_mean - retarded_mean|
  double taylor1_gap = 0.0;  // |fuzzy_taylor1 - taylor_coefficient(1)|
};

// Wrapped Gaussians of width sigma against the local functionals at the model's alpha.
inline std::vector<NearDeltaPoint> near_delta_sweep(const ActionModel& m, const Loop& v,
                                                    const std::vector<double>& sigmas) {
  detail::require_autonomous(m.system);
  const ActionModel exact = ActionModel::make(Variant::Exact, m.system, m.space, m.alpha);
  const double local_mean = retarded_mean(exact, v);
  const double local_t1 = taylor_coefficient(exact, 1, v);
  std::vector<NearDeltaPoint> out;
  for (double sigma : sigmas) {
    const SystemSpec s = m.system.with_kernel(Kernel::wrapped_gaussian(sigma));
    const ActionModel fm = ActionModel::make(Variant::Fuzzy, s, m.space, m.alpha);
    out.push_back({sigma, std::abs(fuzzy_mean(fm, v) - local_mean), std::abs(fuzzy_taylor1(fm, v) - local_t1)});
  }
  return out;
}

}  // namespace neumann

#endif
