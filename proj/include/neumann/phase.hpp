#ifndef NEUMANN_PHASE_HPP
#define NEUMANN_PHASE_HPP

// Constant-coefficient symplectic models.
//
// Coordinates are x = (q1..qn, p1..pn). The pairing is omega(u, w) = u^T Omega w,
// with Omega = [[0, I], [-I, 0]] for the standard form, so omega((1,0),(0,1)) = 1.
// Hamiltonian vector fields satisfy dH(u) = omega(u, X_H), i.e. X_H = Omega^{-1} grad H,
// which for the standard form is X_H = (-H_p, H_q).

#include "neumann/expr.hpp"
#include "neumann/types.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace neumann {

enum class Model { EuclideanExact, FlatTorus };
enum class Primitive { PdQ, Radial };

inline const char* model_name(Model m) { return m == Model::FlatTorus ? "FlatTorus" : "EuclideanExact"; }
inline const char* primitive_name(Primitive p) { return p == Primitive::Radial ? "Radial" : "PdQ"; }

inline Mat standard_omega(int n) {
  Mat om = Mat::Zero(2 * n, 2 * n);
  om.topRightCorner(n, n) = Mat::Identity(n, n);
  om.bottomLeftCorner(n, n) = -Mat::Identity(n, n);
  return om;
}

struct PhaseSpace {
  int dim_half = 1;
  Model model = Model::EuclideanExact;
  Mat omega = standard_omega(1);
  Primitive lambda_choice = Primitive::PdQ;

  static PhaseSpace standard(int n, Model model = Model::EuclideanExact,
                             Primitive prim = Primitive::PdQ) {
    PhaseSpace s;
    s.dim_half = n;
    s.model = model;
    s.omega = standard_omega(n);
    s.lambda_choice = prim;
    s.validate();
    return s;
  }

  int dim() const { return 2 * dim_half; }

  void validate() const {
    if (dim_half < 1) throw std::invalid_argument("dim_half must be positive");
    if (omega.rows() != dim() || omega.cols() != dim())
      throw std::invalid_argument("omega must be " + std::to_string(dim()) + "x" + std::to_string(dim()));
    if ((omega + omega.transpose()).norm() > 1e-12 * (1.0 + omega.norm()))
      throw std::invalid_argument("omega must be antisymmetric");
    if (std::abs(omega.determinant()) < 1e-12) throw DegenerateFormError("degenerate two-form");
    if (model == Model::FlatTorus && lambda_choice != Primitive::PdQ)
      throw std::invalid_argument("FlatTorus uses the PdQ primitive on the lift");
  }

  // Matrix L with lambda_x(u) = x^T L u and L - L^T = Omega, hence d(lambda) = omega.
  // PdQ takes the strictly lower triangular part of Omega; for the standard form this
  // is lambda = -sum p_i dq_i. Radial takes Omega / 2.
  Mat lambda_matrix() const {
    if (lambda_choice == Primitive::Radial) return 0.5 * omega;
    Mat l = omega;
    l.triangularView<Eigen::Upper>().setZero();
    return l;
  }

  Vec lambda(const Vec& x) const { return lambda_matrix().transpose() * x; }
};

inline void check_dim(const PhaseSpace& space, const Vec& u, const char* what) {
  if (u.size() != space.dim())
    throw std::invalid_argument(std::string(what) + ": expected length " + std::to_string(space.dim()) +
                                ", got " + std::to_string(u.size()));
}

inline double symplectic_pairing(const PhaseSpace& space, const Vec& u, const Vec& w) {
  check_dim(space, u, "symplectic_pairing");
  check_dim(space, w, "symplectic_pairing");
  return u.dot(space.omega * w);
}

// Unique X with dH(u) = omega(u, X), given grad H.
inline Vec hamiltonian_vector_field(const PhaseSpace& space, const Vec& grad) {
  check_dim(space, grad, "hamiltonian_vector_field");
  return space.omega.partialPivLu().solve(grad);
}

// Spatial gradient of an expression in the Hamiltonian (x, t) or Retardation (x) slot.
inline Vec spatial_gradient(const Expression& e, const Vec& x, double t = 0.0) {
  const int d = static_cast<int>(x.size());
  std::array<double, kMaxVars> pt{};
  for (int i = 0; i < d; ++i) pt[i] = x[i];
  int arity = d;
  if (e.slot() == Slot::Hamiltonian) pt[arity++] = t;
  if (arity != e.arity()) throw std::invalid_argument("spatial_gradient: point does not match expression arity");
  const Jet j = e.eval_jet(std::span<const double>(pt.data(), arity), 1);
  return j.gradient.head(d);
}

inline Vec hamiltonian_vector_field(const PhaseSpace& space, const Expression& h, const Vec& x,
                                    double t) {
  return hamiltonian_vector_field(space, spatial_gradient(h, x, t));
}

// {H, F} = omega(X_H, X_F) from the two gradients.
inline double poisson_bracket(const PhaseSpace& space, const Vec& grad_h, const Vec& grad_f) {
  const Vec xh = hamiltonian_vector_field(space, grad_h);
  const Vec xf = hamiltonian_vector_field(space, grad_f);
  return symplectic_pairing(space, xh, xf);
}

inline double poisson_bracket(const PhaseSpace& space, const Expression& h, const Expression& f,
                              const Vec& x, double t) {
  return poisson_bracket(space, spatial_gradient(h, x, t), spatial_gradient(f, x, t));
}

// The three expressions omega(X_H, X_F), dF(X_H) and -dH(X_F) of the same bracket.
inline std::array<double, 3> poisson_bracket_forms(const PhaseSpace& space, const Vec& grad_h,
                                                   const Vec& grad_f) {
  const Vec xh = hamiltonian_vector_field(space, grad_h);
  const Vec xf = hamiltonian_vector_field(space, grad_f);
  return {symplectic_pairing(space, xh, xf), grad_f.dot(xh), -grad_h.dot(xf)};
}

struct CompatibleStructure {
  Mat J;
  Mat g;
};

// J = -(-A^2)^{-1/2} A and g = A J, so that g(u, w) = A(u, J w) is symmetric positive
// definite. For the standard form J is rotation by +90 degrees and g = I.
inline CompatibleStructure compatible_structure(const Mat& a) {
  if (a.rows() != a.cols() || a.rows() % 2 != 0)
    throw std::invalid_argument("compatible_structure: form must be square of even size");
  if ((a + a.transpose()).norm() > 1e-10 * (1.0 + a.norm()))
    throw std::invalid_argument("compatible_structure: form must be antisymmetric");
  const Mat m = -(a * a);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  const Vec ev = es.eigenvalues();
  if (ev.minCoeff() < 1e-12) throw DegenerateFormError("degenerate two-form");
  const Mat inv_sqrt = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                       es.eigenvectors().transpose();
  CompatibleStructure cs;
  cs.J = -inv_sqrt * a;
  const Mat g = a * cs.J;
  cs.g = 0.5 * (g + g.transpose());
  return cs;
}

// Sampled loop of two-forms along the time grid.
struct TwoFormField {
  std::vector<double> times;
  std::vector<Mat> values;
  bool symplectic = false;

  void validate(double tol = 1e-10) const {
    if (times.size() != values.size()) throw std::invalid_argument("TwoFormField: size mismatch");
    for (const Mat& m : values) {
      if ((m + m.transpose()).norm() > tol * (1.0 + m.norm()))
        throw std::invalid_argument("TwoFormField: sample not antisymmetric");
      if (symplectic && std::abs(m.determinant()) < 1e-12) throw DegenerateFormError("degenerate two-form");
    }
  }
};

}  // namespace neumann

#endif
