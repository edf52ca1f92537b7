#ifndef NEUMANN_SYSTEM_HPP
#define NEUMANN_SYSTEM_HPP

// Hamiltonian, retardation, parallel factor and fuzzy kernel of a model.

#include "neumann/expr.hpp"
#include "neumann/types.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>

namespace neumann {

// Periodic kernel beta(tau) on S^1: a user expression in tau, or a wrapped Gaussian of unit mass.
class Kernel {
 public:
  static Kernel expression(const std::string& source) {
    Kernel k;
    k.expr_ = parse(source, Slot::Kernel);
    k.description_ = source;
    return k;
  }

  static Kernel wrapped_gaussian(double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("wrapped Gaussian width must be positive");
    Kernel k;
    k.sigma_ = sigma;
    k.norm_ = 1.0;
    const int m = 1 << 14;
    double mass = 0.0;
    for (int j = 0; j < m; ++j) mass += k.gaussian(static_cast<double>(j) / m, false);
    k.norm_ = 1.0 / (mass / m);
    k.description_ = "wrapped-gaussian(sigma=" + detail::format_number(sigma) + ")";
    return k;
  }

  bool is_gaussian() const { return sigma_ > 0.0; }
  double sigma() const { return sigma_; }
  const std::string& description() const { return description_; }
  const std::optional<Expression>& expr() const { return expr_; }

  double value(double tau) const {
    if (is_gaussian()) return gaussian(tau, false);
    const double p[1] = {tau};
    return expr_->eval(p);
  }

  double derivative(double tau) const {
    if (is_gaussian()) return gaussian(tau, true);
    const double p[1] = {tau};
    return expr_->eval_jet(p, 1).gradient[0];
  }

  // Trapezoid mass on an n-point grid.
  double mass(int n = 4096) const {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += value(static_cast<double>(j) / n);
    return s / n;
  }

 private:
  double gaussian(double tau, bool derivative) const {
    const double x = tau - std::floor(tau);
    const int reach = static_cast<int>(std::ceil(10.0 * sigma_)) + 1;
    double s = 0.0;
    for (int m = -reach; m <= reach + 1; ++m) {
      const double d = x - m;
      const double g = std::exp(-d * d / (2.0 * sigma_ * sigma_));
      s += derivative ? -d / (sigma_ * sigma_) * g : g;
    }
    return norm_ * s;
  }

  std::optional<Expression> expr_;
  double sigma_ = 0.0;
  double norm_ = 1.0;
  std::string description_;
};

// Pointwise data of H at (x, t).
struct HamiltonianJet {
  double value = 0.0;
  double dt = 0.0;  // partial_t H
  Vec grad;         // spatial gradient
  Mat hess;         // spatial Hessian (order 2)
  Vec grad_dt;      // spatial gradient of partial_t H (order 2)
};

struct RetardationJet {
  double value = 0.0;
  Vec grad;
  Mat hess;  // order 2
};

class SystemSpec {
 public:
  // H(q, p, t) and F(q, p) given directly.
  static SystemSpec make(int dim_half, const std::string& h, const std::string& f,
                         double smoothabs_eps = 1e-3) {
    SystemSpec s;
    s.dim_half_ = dim_half;
    const ParseOptions opts{dim_half, smoothabs_eps};
    s.h_ = parse(h, Slot::Hamiltonian, opts);
    s.f_ = parse(f, Slot::Retardation, opts);
    s.finish();
    return s;
  }

  // F = f o H with f in the ParallelFactor slot; requires H independent of t.
  static SystemSpec make_parallel(int dim_half, const std::string& h, const std::string& f,
                                  double smoothabs_eps = 1e-3) {
    SystemSpec s;
    s.dim_half_ = dim_half;
    const ParseOptions opts{dim_half, smoothabs_eps};
    s.h_ = parse(h, Slot::Hamiltonian, opts);
    s.parallel_f_ = parse(f, Slot::ParallelFactor, opts);
    s.finish();
    if (!s.autonomous()) throw std::invalid_argument("parallel factor requires an autonomous Hamiltonian");
    return s;
  }

  SystemSpec with_kernel(Kernel k) const {
    SystemSpec s = *this;
    s.beta_ = std::move(k);
    return s;
  }

  int dim_half() const { return dim_half_; }
  int dim() const { return 2 * dim_half_; }
  bool autonomous() const { return autonomous_; }
  bool parallel() const { return parallel_f_.has_value(); }
  const Expression& H() const { return h_; }
  const std::optional<Expression>& F_expr() const { return f_; }
  const std::optional<Expression>& parallel_f() const { return parallel_f_; }
  const std::optional<Kernel>& beta() const { return beta_; }
  const Kernel& kernel() const {
    if (!beta_) throw PreconditionError("no fuzzy kernel configured");
    return *beta_;
  }

  double H(const Vec& x, double t) const {
    const auto p = point(x, t);
    return h_.eval(std::span<const double>(p.data(), dim() + 1));
  }

  HamiltonianJet H_jet(const Vec& x, double t, int order) const {
    const auto p = point(x, t);
    const int d = dim();
    const Jet j = h_.eval_jet(std::span<const double>(p.data(), d + 1), order);
    HamiltonianJet r;
    r.value = j.value;
    if (order >= 1) {
      r.grad = j.gradient.head(d);
      r.dt = j.gradient[d];
    }
    if (order >= 2) {
      r.hess = j.hessian.topLeftCorner(d, d);
      r.grad_dt = j.hessian.col(d).head(d);
    }
    return r;
  }

  double F(const Vec& x) const {
    if (parallel_f_) return factor(H(x, 0.0), 0);
    const auto p = point(x, 0.0);
    return f_->eval(std::span<const double>(p.data(), dim()));
  }

  RetardationJet F_jet(const Vec& x, int order) const {
    RetardationJet r;
    if (parallel_f_) {
      const HamiltonianJet h = H_jet(x, 0.0, order);
      const double hv = h.value;
      r.value = factor(hv, 0);
      if (order >= 1) r.grad = factor(hv, 1) * h.grad;
      if (order >= 2) r.hess = factor(hv, 2) * h.grad * h.grad.transpose() + factor(hv, 1) * h.hess;
      return r;
    }
    const auto p = point(x, 0.0);
    const Jet j = f_->eval_jet(std::span<const double>(p.data(), dim()), order);
    r.value = j.value;
    if (order >= 1) r.grad = j.gradient;
    if (order >= 2) r.hess = j.hessian;
    return r;
  }

  // G = f'(H(x)) in the parallel case.
  double G(const Vec& x) const {
    if (!parallel_f_) throw PreconditionError("G requires a parallel factor");
    return factor(H(x, 0.0), 1);
  }

 private:
  void finish() {
    autonomous_ = !h_.depends_on(dim());
  }

  std::array<double, kMaxVars> point(const Vec& x, double t) const {
    if (x.size() != dim()) throw std::invalid_argument("point has wrong dimension");
    std::array<double, kMaxVars> p{};
    for (int i = 0; i < dim(); ++i) p[i] = x[i];
    p[dim()] = t;
    return p;
  }

  // k-th derivative of the parallel factor f at h.
  double factor(double h, int k) const {
    const double p[1] = {h};
    if (k == 0) return parallel_f_->eval(p);
    const Jet j = parallel_f_->eval_jet(p, k);
    return k == 1 ? j.gradient[0] : j.hessian(0, 0);
  }

  int dim_half_ = 1;
  Expression h_;
  std::optional<Expression> f_;
  std::optional<Expression> parallel_f_;
  std::optional<Kernel> beta_;
  bool autonomous_ = true;
};

}  // namespace neumann

#endif
