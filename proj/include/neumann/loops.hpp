#ifndef NEUMANN_LOOPS_HPP
#define NEUMANN_LOOPS_HPP

// Loops S^1 -> M sampled at t_j = j/N, N even, with trigonometric interpolation
//
//   y(t) = a_0 + sum_{k=1}^{K-1} (a_k cos 2pi k t + b_k sin 2pi k t) + a_K cos 2pi K t,  K = N/2.
//
// The same interpolant in cardinal form is y(t) = sum_m y_m l(t - t_m) with
// l(x) = sin(pi N x) / (N tan(pi x)). Its derivative on the grid is an antisymmetric matrix.

#include "neumann/phase.hpp"
#include "neumann/types.hpp"

#include <cmath>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace neumann {

struct TangentTag {};
struct CotangentTag {};

// Samples of a vector or covector field along a loop (N x 2n).
template <class Tag>
struct Field {
  Mat samples;

  Field() = default;
  explicit Field(Mat s) : samples(std::move(s)) {}

  int N() const { return static_cast<int>(samples.rows()); }
  int dim() const { return static_cast<int>(samples.cols()); }
  Vec at(int j) const { return samples.row(j).transpose(); }
  double max_abs() const { return samples.size() ? samples.cwiseAbs().maxCoeff() : 0.0; }

  Field operator+(const Field& o) const { return Field(samples + o.samples); }
  Field operator-(const Field& o) const { return Field(samples - o.samples); }
  Field operator*(double s) const { return Field(samples * s); }
};

using TangentField = Field<TangentTag>;
using CotangentField = Field<CotangentTag>;

// (1/N) sum_j c_j . w_j, the trapezoid rule for int c(t) w(t) dt.
inline double pairing(const CotangentField& c, const TangentField& w) {
  if (c.samples.rows() != w.samples.rows() || c.samples.cols() != w.samples.cols())
    throw std::invalid_argument("pairing: field shape mismatch");
  return c.samples.cwiseProduct(w.samples).sum() / static_cast<double>(c.N());
}

namespace detail {

inline void check_grid(int n) {
  if (n < 8 || n % 2 != 0) throw std::invalid_argument("loop grid size must be even and >= 8");
}

// cos/sin(2 pi m / N) for m = 0..N-1.
struct GridTable {
  std::vector<double> c, s;
  explicit GridTable(int n) : c(n), s(n) {
    for (int m = 0; m < n; ++m) {
      c[m] = std::cos(kTwoPi * m / n);
      s[m] = std::sin(kTwoPi * m / n);
    }
  }
};

inline std::shared_ptr<const GridTable> grid_table(int n) {
  thread_local int cached_n = 0;
  thread_local std::shared_ptr<const GridTable> cached;
  if (cached_n != n) {
    cached = std::make_shared<const GridTable>(n);
    cached_n = n;
  }
  return cached;
}

}  // namespace detail

// Real Fourier coefficients of the columns of y (rows are grid samples).
struct FourierCoeffs {
  Mat a;  // (K+1) x d
  Mat b;  // (K+1) x d
};

inline FourierCoeffs fourier_coefficients(const Mat& y) {
  const int n = static_cast<int>(y.rows());
  detail::check_grid(n);
  const int kk = n / 2;
  const auto tab = detail::grid_table(n);
  FourierCoeffs fc{Mat::Zero(kk + 1, y.cols()), Mat::Zero(kk + 1, y.cols())};
  for (int k = 0; k <= kk; ++k) {
    for (int j = 0; j < n; ++j) {
      const int m = static_cast<int>((static_cast<long>(k) * j) % n);
      fc.a.row(k) += tab->c[m] * y.row(j);
      fc.b.row(k) += tab->s[m] * y.row(j);
    }
    const double scale = (k == 0 || k == kk) ? 1.0 / n : 2.0 / n;
    fc.a.row(k) *= scale;
    fc.b.row(k) *= (k == kk) ? 0.0 : scale;
  }
  return fc;
}

inline Mat fourier_synthesize(const FourierCoeffs& fc, int n) {
  const int kk = n / 2;
  const auto tab = detail::grid_table(n);
  Mat y = Mat::Zero(n, fc.a.cols());
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k <= kk; ++k) {
      const int m = static_cast<int>((static_cast<long>(k) * j) % n);
      y.row(j) += tab->c[m] * fc.a.row(k) + tab->s[m] * fc.b.row(k);
    }
  }
  return y;
}

// Grid derivative of the trigonometric interpolant of y.
inline Mat spectral_derivative(const Mat& y) {
  const int n = static_cast<int>(y.rows());
  const FourierCoeffs fc = fourier_coefficients(y);
  FourierCoeffs d{Mat::Zero(fc.a.rows(), fc.a.cols()), Mat::Zero(fc.a.rows(), fc.a.cols())};
  const int kk = n / 2;
  for (int k = 1; k < kk; ++k) {
    d.a.row(k) = kTwoPi * k * fc.b.row(k);
    d.b.row(k) = -kTwoPi * k * fc.a.row(k);
  }
  return fourier_synthesize(d, n);
}

// Multiplies Fourier mode k of every column by weight(k).
inline Mat fourier_scale(const Mat& y, const std::function<double(int)>& weight) {
  FourierCoeffs fc = fourier_coefficients(y);
  for (int k = 0; k < fc.a.rows(); ++k) {
    const double w = weight(k);
    fc.a.row(k) *= w;
    fc.b.row(k) *= w;
  }
  return fourier_synthesize(fc, static_cast<int>(y.rows()));
}

// Cardinal function of the grid interpolant, l(t_j - t_m) = delta_jm.
inline double cardinal_weight(int n, double x) {
  x -= std::round(x);
  if (x == 0.0) return 1.0;
  const double s = std::sin(kPi * n * x);
  if (s == 0.0) return 0.0;
  return s / (n * std::tan(kPi * x));
}

// Loop value; immutable after construction.
class Loop {
 public:
  Loop() = default;

  Loop(PhaseSpace space, Mat samples, Eigen::VectorXi winding = {})
      : space_(std::move(space)), samples_(std::move(samples)), winding_(std::move(winding)) {
    detail::check_grid(static_cast<int>(samples_.rows()));
    if (samples_.cols() != space_.dim())
      throw std::invalid_argument("loop samples must have " + std::to_string(space_.dim()) + " columns");
    if (winding_.size() == 0) winding_ = Eigen::VectorXi::Zero(space_.dim());
    if (winding_.size() != space_.dim()) throw std::invalid_argument("winding vector has wrong length");
    if (space_.model == Model::EuclideanExact && winding_.any())
      throw std::invalid_argument("winding is only meaningful on FlatTorus");
    build_cache();
  }

  static Loop constant(const PhaseSpace& space, int n, const Vec& x) {
    check_dim(space, x, "Loop::constant");
    Mat s(n, space.dim());
    for (int j = 0; j < n; ++j) s.row(j) = x.transpose();
    return Loop(space, std::move(s));
  }

  static Loop from_function(const PhaseSpace& space, int n, const std::function<Vec(double)>& f) {
    detail::check_grid(n);
    Mat s(n, space.dim());
    for (int j = 0; j < n; ++j) s.row(j) = f(static_cast<double>(j) / n).transpose();
    return Loop(space, std::move(s));
  }

  Loop with_samples(Mat s) const { return Loop(space_, std::move(s), winding_); }

  int N() const { return static_cast<int>(samples_.rows()); }
  int dim() const { return static_cast<int>(samples_.cols()); }
  double time(int j) const { return static_cast<double>(j) / N(); }
  const PhaseSpace& space() const { return space_; }
  const Mat& samples() const { return samples_; }
  Vec sample(int j) const { return samples_.row(j).transpose(); }
  const Eigen::VectorXi& winding() const { return winding_; }
  bool contractible() const { return !winding_.any(); }
  const Mat& grid_derivative() const { return deriv_; }
  Vec derivative_at(int j) const { return deriv_.row(j).transpose(); }

  // Trigonometric interpolation; exact sample when t lands on the grid.
  Vec interpolate(double t) const {
    const double fl = std::floor(t);
    const double u = t - fl;
    const double m = u * N();
    Vec out;
    if (m == std::floor(m)) {
      const int j = static_cast<int>(m) % N();
      out = periodic_.row(j).transpose();
    } else {
      out = base_ + series(u, false);
    }
    if (winding_.any()) out += winding_.cast<double>() * t;
    return out;
  }

  Vec interpolate_derivative(double t) const {
    Vec out = series(t - std::floor(t), true);
    if (winding_.any()) out += winding_.cast<double>();
    return out;
  }

 private:
  void build_cache() {
    periodic_ = samples_;
    if (winding_.any()) {
      for (int j = 0; j < N(); ++j) periodic_.row(j) -= time(j) * winding_.cast<double>().transpose();
    }
    base_ = periodic_.row(0).transpose();
    Mat centered = periodic_.rowwise() - base_.transpose();
    coeffs_ = fourier_coefficients(centered);
    deriv_ = spectral_derivative(centered);
    if (winding_.any()) deriv_.rowwise() += winding_.cast<double>().transpose();
  }

  Vec series(double u, bool derivative) const {
    const int kk = N() / 2;
    const double c1 = std::cos(kTwoPi * u);
    const double s1 = std::sin(kTwoPi * u);
    Vec out = Vec::Zero(dim());
    if (!derivative) out += coeffs_.a.row(0).transpose();
    double ck = 1.0, sk = 0.0;
    for (int k = 1; k <= kk; ++k) {
      const double cn = ck * c1 - sk * s1;
      const double sn = sk * c1 + ck * s1;
      ck = cn;
      sk = sn;
      if (k == kk) {
        // Nyquist mode carries cos only
        if (derivative) out -= kTwoPi * k * sk * coeffs_.a.row(k).transpose();
        else out += ck * coeffs_.a.row(k).transpose();
      } else if (derivative) {
        out += kTwoPi * k * (-sk * coeffs_.a.row(k).transpose() + ck * coeffs_.b.row(k).transpose());
      } else {
        out += ck * coeffs_.a.row(k).transpose() + sk * coeffs_.b.row(k).transpose();
      }
    }
    return out;
  }

  PhaseSpace space_;
  Mat samples_;
  Eigen::VectorXi winding_;
  Mat periodic_;
  Vec base_;
  FourierCoeffs coeffs_;
  Mat deriv_;
};

inline Vec interpolate(const Loop& v, double t) { return v.interpolate(t); }

inline TangentField loop_derivative(const Loop& v) { return TangentField(v.grid_derivative()); }

// Trapezoid rule for int lambda_{v(t)}(v'(t)) dt; on FlatTorus the lift is used.
inline double liouville_integral(const Loop& v) {
  if (v.space().model == Model::FlatTorus && !v.contractible())
    throw PreconditionError("loop not contractible");
  const Mat l = v.space().lambda_matrix();
  const Mat& x = v.samples();
  const Mat& dx = v.grid_derivative();
  return (x * l).cwiseProduct(dx).sum() / v.N();
}

inline double l2_inner(const TangentField& a, const TangentField& b,
                       const std::function<Mat(double)>& metric) {
  if (a.samples.rows() != b.samples.rows() || a.samples.cols() != b.samples.cols())
    throw std::invalid_argument("l2_inner: field shape mismatch");
  const int n = a.N();
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    const Mat g = metric(static_cast<double>(j) / n);
    if (g.rows() != a.dim() || g.cols() != a.dim()) throw std::invalid_argument("l2_inner: metric size mismatch");
    s += a.at(j).dot(g * b.at(j));
  }
  return s / n;
}

inline double l2_inner(const TangentField& a, const TangentField& b) {
  if (a.samples.rows() != b.samples.rows() || a.samples.cols() != b.samples.cols())
    throw std::invalid_argument("l2_inner: field shape mismatch");
  return a.samples.cwiseProduct(b.samples).sum() / a.N();
}

// Samples of t -> v(t + r).
inline Loop rotate_loop(const Loop& v, double r) {
  const int n = v.N();
  const double m = r * n;
  Mat s(n, v.dim());
  const Vec w = v.winding().cast<double>();
  if (std::abs(m - std::round(m)) <= 1e-12 * std::max(1.0, std::abs(m))) {
    const long shift = std::lround(m);
    for (int j = 0; j < n; ++j) {
      const long idx = j + shift;
      const long wrap = static_cast<long>(std::floor(static_cast<double>(idx) / n));
      const int jj = static_cast<int>(idx - wrap * n);
      s.row(j) = v.samples().row(jj) + static_cast<double>(wrap) * w.transpose();
    }
  } else {
    for (int j = 0; j < n; ++j) s.row(j) = v.interpolate(v.time(j) + r).transpose();
  }
  return v.with_samples(std::move(s));
}

// Reversed orientation, t -> v(-t).
inline Loop reverse_loop(const Loop& v) {
  const int n = v.N();
  Mat s(n, v.dim());
  for (int j = 0; j < n; ++j) s.row(j) = v.samples().row((n - j) % n);
  if (v.winding().any()) throw std::invalid_argument("reverse_loop: only winding-zero loops");
  return v.with_samples(std::move(s));
}

// Random smooth loop: center + sum_{k<=max_mode} (A_k cos + B_k sin) with A_k, B_k ~ amplitude * N(0,1) / k.
inline Loop random_loop(const PhaseSpace& space, int n, std::mt19937_64& rng, double amplitude,
                        int max_mode, const Vec& center) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const int d = space.dim();
  Mat ca(max_mode + 1, d), cb(max_mode + 1, d);
  for (int k = 1; k <= max_mode; ++k)
    for (int i = 0; i < d; ++i) {
      ca(k, i) = amplitude * nd(rng) / k;
      cb(k, i) = amplitude * nd(rng) / k;
    }
  Mat s(n, d);
  for (int j = 0; j < n; ++j) {
    const double t = static_cast<double>(j) / n;
    Vec x = center;
    for (int k = 1; k <= max_mode; ++k)
      x += ca.row(k).transpose() * std::cos(kTwoPi * k * t) + cb.row(k).transpose() * std::sin(kTwoPi * k * t);
    s.row(j) = x.transpose();
  }
  return Loop(space, std::move(s));
}

inline TangentField random_tangent(int n, int d, std::mt19937_64& rng, int max_mode) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat s = Mat::Zero(n, d);
  for (int k = 0; k <= max_mode; ++k)
    for (int i = 0; i < d; ++i) {
      const double a = nd(rng), b = nd(rng);
      for (int j = 0; j < n; ++j) {
        const double t = static_cast<double>(j) / n;
        s(j, i) += a * std::cos(kTwoPi * k * t) + (k ? b * std::sin(kTwoPi * k * t) : 0.0);
      }
    }
  return TangentField(std::move(s));
}

inline void write_loop_csv(std::ostream& os, const Loop& v, bool with_time = true) {
  const int d = v.dim();
  if (with_time) os << "t,";
  for (int i = 0; i < d; ++i) os << "x" << (i + 1) << (i + 1 < d ? "," : "\n");
  os.precision(17);
  for (int j = 0; j < v.N(); ++j) {
    if (with_time) os << v.time(j) << ",";
    for (int i = 0; i < d; ++i) os << v.samples()(j, i) << (i + 1 < d ? "," : "\n");
  }
}

inline Loop read_loop_csv(std::istream& is, const PhaseSpace& space) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("loop csv: empty input");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const bool has_t = !header.empty() && header[0] == "t";
  const int d = space.dim();
  if (static_cast<int>(header.size()) != d + (has_t ? 1 : 0))
    throw std::invalid_argument("loop csv: header must be t,x1..x" + std::to_string(d));
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::invalid_argument("loop csv: bad number on line " + std::to_string(lineno));
      }
    }
    if (row.size() != header.size())
      throw std::invalid_argument("loop csv: wrong column count on line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  Mat s(static_cast<int>(rows.size()), d);
  for (int j = 0; j < s.rows(); ++j)
    for (int i = 0; i < d; ++i) s(j, i) = rows[j][i + (has_t ? 1 : 0)];
  return Loop(space, std::move(s));
}

}  // namespace neumann

#endif
