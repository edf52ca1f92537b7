#ifndef NEUMANN_SOLVER_HPP
#define NEUMANN_SOLVER_HPP

// Critical loops of an ActionModel: residual descent, Newton polish, classification,
// multistart search and continuation in alpha.

#include "neumann/delay.hpp"
#include "neumann/loops.hpp"
#include "neumann/neumann.hpp"
#include "neumann/types.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace neumann {

enum class Classification { Constant, CircleFamily, Isolated, Degenerate };

inline const char* classification_name(Classification c) {
  switch (c) {
    case Classification::Constant: return "Constant";
    case Classification::CircleFamily: return "CircleFamily";
    case Classification::Isolated: return "Isolated";
    case Classification::Degenerate: return "Degenerate";
  }
  return "?";
}

struct SolverOptions {
  double grad_tol = 1e-10;
  int max_descent_steps = 400;
  double newton_tol = 1e-12;
  int newton_max_iters = 12;
  int multistart_count = 16;  // random low-frequency seeds
  int constant_grid = 8;      // constants per (q_i, p_i) axis
  std::uint64_t rng_seed = 1;
  double initial_step = 1e-2;
  double min_step = 1e-14;
  double step_grow = 1.2;
  double step_shrink = 0.5;
  double jacobian_step = 1e-6;
  double sv_floor = 1e-8;
  double kernel_threshold = 1e-6;  // relative singular value counted as near-kernel
  double dedup_tol = 1e-6;
  double box = 1.0;               // Euclidean seeds live in [-box, box]^2n
  double seed_amplitude = 0.1;
  int seed_modes = 2;
  double spacelike_margin = 0.05;
  int threads = 1;

  void validate() const {
    if (!(grad_tol > 0.0) || !(newton_tol > 0.0) || !(min_step > 0.0) || !(dedup_tol > 0.0) ||
        !(sv_floor > 0.0))
      throw std::invalid_argument("solver tolerances must be positive");
    if (threads < 1) throw std::invalid_argument("threads must be positive");
  }
};

inline double max_residual(const ActionModel& m, const Loop& v) { return oneform_residual(m, v).max_abs(); }

struct DescendResult {
  Loop loop;
  int accepted_steps = 0;
  bool converged = false;
  bool underflow = false;  // "no descent possible"
  double residual = 0.0;
  std::vector<double> merit;  // accepted-step values of (1/2N) sum |rho_j|^2
};

namespace detail {

inline double merit_of(const CotangentField& rho) { return 0.5 * rho.samples.squaredNorm() / rho.N(); }

}  // namespace detail

// Minimizes Phi(v) = (1/2N) sum |rho_j|^2 along the preconditioned direction
// -P(d rho[rho]); P damps Fourier mode k by 1/(1 + (2 pi k)^2).
inline DescendResult descend(const ActionModel& m, const Loop& v0, const SolverOptions& opts) {
  if (v0.space().model == Model::FlatTorus && !v0.contractible()) throw PreconditionError("loop not contractible");
  DescendResult r;
  r.loop = v0;
  CotangentField rho = oneform_residual(m, v0);
  double phi = detail::merit_of(rho);
  r.merit.push_back(phi);
  double h = opts.initial_step;
  const int n = v0.N();
  for (int it = 0; it < opts.max_descent_steps; ++it) {
    r.residual = rho.max_abs();
    if (r.residual < opts.grad_tol) {
      r.converged = true;
      return r;
    }
    const double eps = 1e-6 / std::max(1.0, rho.samples.cwiseAbs().maxCoeff());
    const Mat& x = r.loop.samples();
    const Mat jr = (oneform_residual(m, r.loop.with_samples(x + eps * rho.samples)).samples -
                    oneform_residual(m, r.loop.with_samples(x - eps * rho.samples)).samples) /
                   (2.0 * eps * n);
    const Mat dir = fourier_scale(jr, [](int k) { return 1.0 / (1.0 + kTwoPi * k * kTwoPi * k); });
    bool accepted = false;
    while (h >= opts.min_step) {
      Loop trial = r.loop.with_samples(x - h * dir);
      CotangentField trho = oneform_residual(m, trial);
      const double tphi = detail::merit_of(trho);
      if (tphi < phi) {
        r.loop = std::move(trial);
        rho = std::move(trho);
        phi = tphi;
        h *= opts.step_grow;
        accepted = true;
        break;
      }
      h *= opts.step_shrink;
    }
    if (!accepted) {
      r.underflow = true;
      r.residual = rho.max_abs();
      return r;
    }
    ++r.accepted_steps;
    r.merit.push_back(phi);
  }
  r.residual = rho.max_abs();
  r.converged = r.residual < opts.grad_tol;
  return r;
}

struct NewtonResult {
  Loop loop;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  bool diverged = false;
  Vec singular_values;  // of the last Jacobian, descending
};

// Finite-difference Jacobian of the flattened residual (column-major N x 2n samples).
inline Mat residual_jacobian(const ActionModel& m, const Loop& v, double h) {
  const int n = v.N(), d = v.dim();
  const int size = n * d;
  Mat jac(size, size);
  Mat x = v.samples();
  for (int c = 0; c < d; ++c) {
    for (int j = 0; j < n; ++j) {
      const double x0 = x(j, c);
      x(j, c) = x0 + h;
      const Mat rp = oneform_residual(m, v.with_samples(x)).samples;
      x(j, c) = x0 - h;
      const Mat rm = oneform_residual(m, v.with_samples(x)).samples;
      x(j, c) = x0;
      const Mat diff = (rp - rm) / (2.0 * h);
      jac.col(c * n + j) = Eigen::Map<const Vec>(diff.data(), size);
    }
  }
  return jac;
}

// Newton on rho(v) = 0 with a pseudo-inverse that drops relative singular values below sv_floor.
inline NewtonResult newton_refine(const ActionModel& m, const Loop& v, const SolverOptions& opts) {
  NewtonResult r;
  r.loop = v;
  Mat rho = oneform_residual(m, v).samples;
  r.residual = rho.cwiseAbs().maxCoeff();
  Loop best = v;
  double best_res = r.residual;
  int increases = 0;
  const int n = v.N(), d = v.dim();
  while (r.residual >= opts.newton_tol && r.iterations < opts.newton_max_iters) {
    const Mat jac = residual_jacobian(m, r.loop, opts.jacobian_step);
    Eigen::BDCSVD<Mat> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    r.singular_values = svd.singularValues();
    svd.setThreshold(opts.sv_floor);
    const Vec step = svd.solve(Eigen::Map<const Vec>(rho.data(), n * d));
    Mat x = r.loop.samples() - Eigen::Map<const Mat>(step.data(), n, d);
    Loop next = r.loop.with_samples(std::move(x));
    Mat nrho = oneform_residual(m, next).samples;
    const double nres = nrho.cwiseAbs().maxCoeff();
    ++r.iterations;
    const bool stalled = nres > 0.5 * r.residual && nres < 1e3 * opts.newton_tol;
    if (nres > r.residual) ++increases;
    r.loop = std::move(next);
    rho = std::move(nrho);
    r.residual = nres;
    if (nres < best_res) {
      best_res = nres;
      best = r.loop;
    }
    if (increases >= 2) {
      r.diverged = true;
      break;
    }
    if (stalled) break;
  }
  if (r.diverged || best_res < r.residual) {
    r.loop = best;
    r.residual = best_res;
  }
  r.converged = r.residual < opts.newton_tol;
  return r;
}

struct CriticalPoint {
  Loop loop;
  double action = 0.0;
  double residual_norm = 0.0;
  DelayDiagnostics diagnostics;
  Classification classification = Classification::Isolated;
  bool near_lightlike = false;
  int seed_index = -1;
  int kernel_dim = 0;
};

inline bool is_constant_loop(const Loop& v, double tol = 1e-8) {
  const Mat diff = v.samples().rowwise() - v.samples().row(0);
  return diff.cwiseAbs().maxCoeff() < tol;
}

inline int near_kernel_dim(const Vec& sv, double rel) {
  if (sv.size() == 0) return 0;
  const double top = sv.maxCoeff();
  int k = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] < rel * top) ++k;
  return k;
}

inline Classification classify(const ActionModel& m, const CriticalPoint& c, const SolverOptions& opts) {
  if (is_constant_loop(c.loop)) return Classification::Constant;
  if (m.autonomous()) {
    const Loop rot = rotate_loop(c.loop, 1.0 / c.loop.N());
    const NewtonResult nr = newton_refine(m, rot, opts);
    if (nr.residual < std::max(opts.grad_tol, 10.0 * c.residual_norm) &&
        std::abs(action_value(m, nr.loop) - c.action) < 1e-9)
      return Classification::CircleFamily;
  }
  const Mat jac = residual_jacobian(m, c.loop, opts.jacobian_step);
  Eigen::BDCSVD<Mat> svd(jac);
  return near_kernel_dim(svd.singularValues(), opts.kernel_threshold) > 0 ? Classification::Degenerate
                                                                         : Classification::Isolated;
}

inline CriticalPoint make_critical_point(const ActionModel& m, const Loop& v, double residual,
                                         const SolverOptions& opts) {
  CriticalPoint c;
  c.loop = v;
  c.action = action_value(m, v);
  c.residual_norm = residual;
  c.diagnostics = diagnostics(v, m.alpha, m.system);
  c.near_lightlike = c.diagnostics.min_slope < opts.spacelike_margin;
  c.classification = classify(m, c, opts);
  return c;
}

// Descend then Newton; nullopt-like result signalled by converged == false.
struct SolveResult {
  Loop loop;
  double residual = 0.0;
  bool converged = false;
  bool newton_diverged = false;
};

inline SolveResult solve_from(const ActionModel& m, const Loop& seed, const SolverOptions& opts) {
  const DescendResult dr = descend(m, seed, opts);
  SolveResult s;
  s.loop = dr.loop;
  s.residual = dr.residual;
  if (dr.residual >= opts.newton_tol) {
    const NewtonResult nr = newton_refine(m, dr.loop, opts);
    s.newton_diverged = nr.diverged;
    if (nr.residual < s.residual) {
      s.loop = nr.loop;
      s.residual = nr.residual;
    }
  }
  s.converged = s.residual < opts.grad_tol;
  return s;
}

namespace detail {

// Torus lifts are shifted so that sample 0 lies in [0,1)^2n.
inline Loop normalize_lift(const Loop& v) {
  if (v.space().model != Model::FlatTorus) return v;
  Vec shift = v.sample(0);
  for (int i = 0; i < shift.size(); ++i) {
    const double r = std::round(shift[i]);
    shift[i] = std::abs(shift[i] - r) < 1e-9 ? r : std::floor(shift[i]);
  }
  Mat s = v.samples().rowwise() - shift.transpose();
  return v.with_samples(std::move(s));
}

inline double loop_distance(const Loop& a, const Loop& b, bool rotations) {
  const int n = a.N();
  double best = std::numeric_limits<double>::infinity();
  const int shifts = rotations ? n : 1;
  for (int k = 0; k < shifts; ++k) {
    const Loop rb = k == 0 ? b : rotate_loop(b, static_cast<double>(k) / n);
    Mat diff = a.samples() - rb.samples();
    if (a.space().model == Model::FlatTorus) {
      const Vec mean = diff.colwise().mean().transpose();
      diff.rowwise() -= mean.array().round().matrix().transpose();
    }
    best = std::min(best, std::sqrt(diff.squaredNorm() / n));
  }
  return best;
}

}  // namespace detail

inline std::vector<Loop> multistart_seeds(const ActionModel& m, int n_grid, const SolverOptions& opts) {
  const PhaseSpace& sp = m.space;
  const int nh = sp.dim_half;
  std::vector<Loop> seeds;
  const int g = opts.constant_grid;
  const bool torus = sp.model == Model::FlatTorus;
  auto coord = [&](int i) {
    return torus ? (i + 0.5) / g : -opts.box + 2.0 * opts.box * (i + 0.5) / g;
  };
  for (int a = 0; a < g; ++a) {
    for (int b = 0; b < g; ++b) {
      Vec x(sp.dim());
      for (int i = 0; i < nh; ++i) {
        x[i] = coord(a);
        x[nh + i] = coord(b);
      }
      seeds.push_back(Loop::constant(sp, n_grid, x));
    }
  }
  std::mt19937_64 rng(opts.rng_seed);
  std::uniform_real_distribution<double> ud(torus ? 0.0 : -opts.box, torus ? 1.0 : opts.box);
  for (int k = 0; k < opts.multistart_count; ++k) {
    Vec c(sp.dim());
    for (int i = 0; i < sp.dim(); ++i) c[i] = ud(rng);
    seeds.push_back(random_loop(sp, n_grid, rng, opts.seed_amplitude, opts.seed_modes, c));
  }
  return seeds;
}

struct MultistartReport {
  std::vector<CriticalPoint> points;
  int seeds = 0;
  int converged_runs = 0;
};

inline MultistartReport multistart(const ActionModel& m, int n_grid, const SolverOptions& opts) {
  opts.validate();
  const std::vector<Loop> seeds = multistart_seeds(m, n_grid, opts);
  std::vector<SolveResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  auto work = [&](int tid) {
    for (std::size_t i = tid; i < seeds.size(); i += opts.threads) {
      try {
        results[i] = solve_from(m, seeds[i], opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (opts.threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < opts.threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  MultistartReport rep;
  rep.seeds = static_cast<int>(seeds.size());
  std::vector<CriticalPoint> found;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (errors[i] || !results[i].converged) continue;
    ++rep.converged_runs;
    const Loop v = detail::normalize_lift(results[i].loop);
    bool dup = false;
    for (const auto& c : found) {
      if (detail::loop_distance(c.loop, v, m.autonomous()) < opts.dedup_tol) {
        dup = true;
        break;
      }
    }
    if (dup) continue;
    CriticalPoint c = make_critical_point(m, v, results[i].residual, opts);
    c.seed_index = static_cast<int>(i);
    found.push_back(std::move(c));
  }
  std::stable_sort(found.begin(), found.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    if (a.action != b.action) return a.action < b.action;
    return a.seed_index < b.seed_index;
  });
  rep.points = std::move(found);
  return rep;
}

struct ContinuationResult {
  std::vector<CriticalPoint> branch;
  std::vector<double> alphas;
  bool terminated = false;
  double last_good_alpha = 0.0;
  std::string reason;
};

inline ContinuationResult continue_in_alpha(const ActionModel& m, const CriticalPoint& c,
                                            const std::vector<double>& alpha_grid, const SolverOptions& opts) {
  ContinuationResult r;
  if (alpha_grid.empty()) return r;
  for (std::size_t i = 1; i < alpha_grid.size(); ++i)
    if (!(alpha_grid[i] > alpha_grid[i - 1])) throw std::invalid_argument("alpha grid must be strictly increasing");
  r.branch.push_back(c);
  r.alphas.push_back(alpha_grid[0]);
  r.last_good_alpha = alpha_grid[0];
  Loop prev = c.loop;
  for (std::size_t i = 1; i < alpha_grid.size(); ++i) {
    const ActionModel ma = m.with_alpha(alpha_grid[i]);
    NewtonResult nr = newton_refine(ma, prev, opts);
    Loop v = nr.loop;
    double res = nr.residual;
    if (res >= opts.grad_tol) {
      const SolveResult s = solve_from(ma, prev, opts);
      v = s.loop;
      res = s.residual;
    }
    if (res >= opts.grad_tol) {
      r.terminated = true;
      r.reason = "newton failure";
      break;
    }
    const DelayDiagnostics dg = diagnostics(v, ma.alpha, ma.system);
    if (!dg.spacelike) {
      r.terminated = true;
      r.reason = "lost spacelike";
      break;
    }
    r.branch.push_back(make_critical_point(ma, v, res, opts));
    r.alphas.push_back(alpha_grid[i]);
    r.last_good_alpha = alpha_grid[i];
    prev = v;
  }
  return r;
}

// Cluster representatives of sorted action values; a new cluster starts when the gap exceeds tol.
inline std::vector<double> distinct_actions(const std::vector<CriticalPoint>& cs, double tol) {
  std::vector<double> a;
  for (const auto& c : cs) a.push_back(c.action);
  std::sort(a.begin(), a.end());
  std::vector<double> reps;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (i == 0 || a[i] - a[i - 1] > tol) reps.push_back(a[i]);
  return reps;
}

}  // namespace neumann

#endif
