#include "neumann/all.hpp"

#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace neumann;
using Catch::Approx;

namespace {

Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}

Loop unit_circle(const PhaseSpace& sp, int n, double r = 1.0) {
  return Loop::from_function(sp, n, [r](double t) { return v2(r * std::cos(kTwoPi * t), r * std::sin(kTwoPi * t)); });
}

// random well-defined expression in q1, p1, t
std::string random_expr(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> c(-2.0, 2.0);
  static const char* leaves[] = {"q1", "p1", "t", "pi"};
  if (depth == 0) {
    const int k = pick(rng) % 5;
    if (k == 4) return detail::format_number(std::round(c(rng) * 100.0) / 100.0);
    return leaves[k];
  }
  const std::string a = random_expr(rng, depth - 1), b = random_expr(rng, depth - 1);
  switch (pick(rng)) {
    case 0: return "(" + a + "+" + b + ")";
    case 1: return "(" + a + "-" + b + ")";
    case 2: return "(" + a + "*" + b + ")";
    case 3: return "(" + a + ")/(2+sin(" + b + "))";
    case 4: return "sin(" + a + ")";
    case 5: return "cos(" + a + ")*" + b;
    case 6: return "exp(0.3*sin(" + a + "))";
    case 7: return "sqrt(1+(" + a + ")^2)";
    case 8: return "tanh(" + a + ")-(" + b + ")^3";
    default: return "log(2+cos(" + a + "))*smoothabs(" + b + ")";
  }
}

}  // namespace

TEST_CASE("symplectic pairing normalization", "[core]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  CHECK(symplectic_pairing(sp, v2(1, 0), v2(0, 1)) == 1.0);
  CHECK(symplectic_pairing(sp, v2(0.3, -2), v2(0.3, -2)) == 0.0);
}

TEST_CASE("hamiltonian vector field and brackets", "[core]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  const Expression h = parse("pi*(q1^2+p1^2)", Slot::Hamiltonian);
  const Vec x = hamiltonian_vector_field(sp, h, v2(1, 0), 0.0);
  CHECK(x(0) == Approx(0.0).margin(1e-15));
  CHECK(x(1) == Approx(kTwoPi));
  CHECK(hamiltonian_vector_field(sp, parse("3", Slot::Hamiltonian), v2(0.2, 0.7), 0.0).norm() == 0.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const Expression f = parse("q1", Slot::Retardation);
  const Expression fh = parse("sin(pi*(q1^2+p1^2))", Slot::Retardation);
  for (int k = 0; k < 20; ++k) {
    const Vec p = v2(nd(rng), nd(rng));
    CHECK(std::abs(poisson_bracket(sp, h, h, p, 0.0)) < 1e-12);
    CHECK(std::abs(poisson_bracket(sp, h, fh, p, 0.0)) < 1e-9);
    // dF(X_H) for F = q is the first component of X_H
    const auto forms = poisson_bracket_forms(sp, spatial_gradient(h, p), spatial_gradient(f, p));
    CHECK(forms[1] == Approx(-kTwoPi * p(1)));
    CHECK(forms[0] == Approx(forms[1]).margin(1e-12));
    CHECK(forms[0] == Approx(forms[2]).margin(1e-12));
  }
}

TEST_CASE("compatible structure", "[core]") {
  const Mat om = standard_omega(1);
  const CompatibleStructure cs = compatible_structure(om);
  CHECK((cs.g - Mat::Identity(2, 2)).norm() < 1e-12);
  CHECK((cs.J * cs.J + Mat::Identity(2, 2)).norm() < 1e-12);
  const CompatibleStructure c3 = compatible_structure(3.0 * om);
  CHECK((c3.g - 3.0 * Mat::Identity(2, 2)).norm() < 1e-12);
  CHECK((c3.J - cs.J).norm() < 1e-12);
  CHECK_THROWS_AS(compatible_structure(Mat::Zero(2, 2)), DegenerateFormError);
  CHECK_THROWS_AS(compatible_structure(Mat::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("phase space validation", "[core]") {
  PhaseSpace sp = PhaseSpace::standard(2);
  sp.omega(0, 2) = 5.0;
  CHECK_THROWS_AS(sp.validate(), std::invalid_argument);
  CHECK_THROWS(PhaseSpace::standard(1, Model::FlatTorus, Primitive::Radial));
  CHECK_THROWS(PhaseSpace::standard(0));
}

TEST_CASE("expression grammar and slots", "[core]") {
  CHECK_NOTHROW(parse("pi*(q1^2+p1^2)", Slot::Hamiltonian));
  CHECK_NOTHROW(parse("-smoothabs(q1)", Slot::Retardation));
  try {
    parse("q1+t", Slot::Retardation);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.slot() == Slot::Retardation);
    CHECK(e.offset() == 3);
    CHECK(std::string(e.what()).find("symbol not allowed in slot") != std::string::npos);
  }
  try {
    parse("q1 + * p1", Slot::Hamiltonian);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 5);
  }
  CHECK_THROWS_AS(parse("h^2", Slot::Kernel), ParseError);
  CHECK_NOTHROW(parse("h+0.5*h^2", Slot::ParallelFactor));
  CHECK_NOTHROW(parse("exp(-tau^2)", Slot::Kernel));
  CHECK_THROWS_AS(parse("q2", Slot::Hamiltonian), ParseError);
  CHECK_NOTHROW(parse("q2*p2", Slot::Hamiltonian, ParseOptions{2, 1e-3}));
}

TEST_CASE("expression jets", "[core]") {
  const Expression e = parse("q1*p1", Slot::Retardation);
  const double pt[] = {2.0, 3.0};
  const Jet j = e.eval_jet(pt, 1);
  CHECK(j.value == 6.0);
  CHECK(j.gradient(0) == 3.0);
  CHECK(j.gradient(1) == 2.0);

  const Expression s = parse("sin(t)", Slot::Hamiltonian);
  const double z[] = {0.0, 0.0, 0.0};
  const Jet js = s.eval_jet(z, 1);
  CHECK(js.value == 0.0);
  CHECK(js.gradient(2) == 1.0);

  const double bad[] = {1.0};
  CHECK_THROWS_AS(e.eval(bad), std::invalid_argument);
  const Expression l = parse("log(q1)", Slot::Retardation);
  const double neg[] = {-1.0, 0.0};
  CHECK_THROWS_AS(l.eval(neg), EvalError);
}

TEST_CASE("expression corpus: print round trip and gradients", "[core]") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    const std::string src = random_expr(rng, 1 + k % 4);
    const Expression e = parse(src, Slot::Hamiltonian);
    const Expression e2 = parse(e.to_string(), Slot::Hamiltonian);
    CHECK(e2.to_string() == e.to_string());

    double pt[3] = {ux(rng), ux(rng), ux(rng)};
    const Jet j = e.eval_jet(pt, 2);
    CHECK(e2.eval(pt) == Approx(j.value).epsilon(1e-14).margin(1e-14));
    for (int i = 0; i < 3; ++i) {
      const double h = 1e-5;
      double a[3] = {pt[0], pt[1], pt[2]}, b[3] = {pt[0], pt[1], pt[2]};
      a[i] += h;
      b[i] -= h;
      const double fd = (e.eval(a) - e.eval(b)) / (2 * h);
      const double scale = std::max(1.0, std::abs(fd));
      INFO(src << " var " << i);
      CHECK(std::abs(j.gradient(i) - fd) / scale < 1e-6);
      // hessian row against Richardson-extrapolated differences of the gradient
      // (smoothabs has large higher derivatives near 0)
      double a2[3] = {pt[0], pt[1], pt[2]}, b2[3] = {pt[0], pt[1], pt[2]};
      a2[i] += h / 2;
      b2[i] -= h / 2;
      const Jet ja = e.eval_jet(a, 1), jb = e.eval_jet(b, 1);
      const Jet ja2 = e.eval_jet(a2, 1), jb2 = e.eval_jet(b2, 1);
      for (int m = 0; m < 3; ++m) {
        const double d1 = (ja.gradient(m) - jb.gradient(m)) / (2 * h);
        const double d2 = (ja2.gradient(m) - jb2.gradient(m)) / h;
        const double fd2 = (4 * d2 - d1) / 3;
        CHECK(std::abs(j.hessian(i, m) - fd2) / std::max(1.0, std::abs(fd2)) < 1e-5);
      }
    }
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("loop interpolation and derivative", "[core]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  for (int n : {8, 16, 64}) {
    const Loop v = unit_circle(sp, n);
    const Vec x = v.interpolate(0.25);
    CHECK(std::abs(x(0)) < 1e-12);
    CHECK(std::abs(x(1) - 1.0) < 1e-12);
    for (int j = 0; j < n; ++j) CHECK(v.interpolate(v.time(j)) == v.sample(j));
    const Mat d = loop_derivative(v).samples;
    double err = 0.0;
    for (int j = 0; j < n; ++j) {
      const double t = v.time(j);
      err = std::max(err, std::abs(d(j, 0) + kTwoPi * std::sin(kTwoPi * t)));
      err = std::max(err, std::abs(d(j, 1) - kTwoPi * std::cos(kTwoPi * t)));
    }
    CHECK(err < 1e-10);
  }
  const Loop c = Loop::constant(sp, 16, v2(0.4, -1.0));
  CHECK((c.interpolate(0.123) - v2(0.4, -1.0)).norm() < 1e-14);
  CHECK(loop_derivative(c).max_abs() < 1e-14);
  CHECK_THROWS(Loop::constant(sp, 7, v2(0, 0)));
}

TEST_CASE("liouville integral", "[core]") {
  const PhaseSpace rad = PhaseSpace::standard(1, Model::EuclideanExact, Primitive::Radial);
  const PhaseSpace pdq = PhaseSpace::standard(1);
  for (double r : {0.5, 1.0, 2.0}) {
    const Loop v = unit_circle(rad, 32, r);
    CHECK(liouville_integral(v) == Approx(kPi * r * r).epsilon(1e-12));
    CHECK(liouville_integral(reverse_loop(v)) == Approx(-kPi * r * r).epsilon(1e-12));
    // -p dq gives the same value on closed loops
    CHECK(liouville_integral(unit_circle(pdq, 32, r)) == Approx(kPi * r * r).epsilon(1e-12));
  }
  CHECK(liouville_integral(Loop::constant(rad, 16, v2(1, 2))) == 0.0);
}

TEST_CASE("l2 inner product", "[core]") {
  Mat a = Mat::Zero(8, 2), b = Mat::Zero(8, 2);
  a.col(0).setOnes();
  b.col(1).setOnes();
  CHECK(l2_inner(TangentField(a), TangentField(a)) == Approx(1.0));
  CHECK(l2_inner(TangentField(a), TangentField(b)) == 0.0);
  CHECK(l2_inner(TangentField(a), TangentField(a), [](double) { return Mat(2.0 * Mat::Identity(2, 2)); }) ==
        Approx(2.0));
}

TEST_CASE("rotation and torus lifts", "[core]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  std::mt19937_64 rng(9);
  const Loop v = random_loop(sp, 16, rng, 0.5, 3, Vec::Zero(2));
  CHECK(rotate_loop(v, 0.0).samples() == v.samples());
  const Loop s = rotate_loop(v, 1.0 / 16);
  for (int j = 0; j < 16; ++j) CHECK(s.sample(j) == v.sample((j + 1) % 16));
  const Loop r = rotate_loop(v, 0.3);
  CHECK((r.interpolate(0.1) - v.interpolate(0.4)).norm() < 1e-12);

  // a winding loop on the torus: q advances by one per period
  const PhaseSpace tor = PhaseSpace::standard(1, Model::FlatTorus);
  Mat w(16, 2);
  for (int j = 0; j < 16; ++j) w.row(j) << j / 16.0 + 0.1 * std::sin(kTwoPi * j / 16.0), 0.2;
  Eigen::VectorXi wind(2);
  wind << 1, 0;
  const Loop lw(tor, w, wind);
  CHECK(!lw.contractible());
  CHECK((lw.interpolate(1.25) - lw.interpolate(0.25) - v2(1, 0)).norm() < 1e-12);
  CHECK((detail::normalize_lift(lw.with_samples(w.rowwise() + Eigen::RowVector2d(3.0, -2.0))).samples() - w).norm() < 1e-12);
}

TEST_CASE("loop CSV round trip", "[core]") {
  const PhaseSpace sp = PhaseSpace::standard(1);
  std::mt19937_64 rng(11);
  const Loop v = random_loop(sp, 32, rng, 0.5, 4, Vec::Zero(2));
  std::stringstream ss;
  write_loop_csv(ss, v);
  const Loop back = read_loop_csv(ss, sp);
  CHECK(back.N() == 32);
  CHECK((back.samples() - v.samples()).cwiseAbs().maxCoeff() < 1e-15);
  std::stringstream bad("t,q1,p1\n0,1\n");
  CHECK_THROWS(read_loop_csv(bad, sp));
}
