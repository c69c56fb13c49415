#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "unlearn_arena/error.hpp"

namespace arena {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::LengthMismatch, "matrix data length does not match shape");
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorKind::LengthMismatch, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "dot product of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorKind::LengthMismatch, "matvec dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::LengthMismatch, "matmul dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Xᵀ X for a tall data matrix.
inline Matrix gram(const Matrix& x) {
  const std::size_t n = x.cols();
  Matrix g(n, n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = row[i];
      for (std::size_t j = i; j < n; ++j) g(i, j) += xi * row[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

/// ‖A - B‖∞ entrywise.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::LengthMismatch, "matrix shapes differ");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Symmetric positive definite systems
// ---------------------------------------------------------------------------

inline constexpr double kPivotFloor = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-10;

/// Lower-triangular Cholesky factor L with A = L Lᵀ.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a) : l_(a.rows(), a.cols()) {
    if (!a.square()) throw Error(ErrorKind::DimensionMismatch, "cholesky of non-square matrix");
    const std::size_t n = a.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      max_diag = std::max(max_diag, std::fabs(a(i, i)));
      for (std::size_t j = 0; j < i; ++j) {
        const double scale = std::max({1.0, std::fabs(a(i, j)), std::fabs(a(j, i))});
        if (std::fabs(a(i, j) - a(j, i)) > kSymmetryTolerance * scale) {
          throw Error(ErrorKind::DimensionMismatch, "matrix is not symmetric");
        }
      }
    }
    const double floor = kPivotFloor * max_diag;
    for (std::size_t j = 0; j < n; ++j) {
      double d = a(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
      if (!(d > floor)) {
        throw Error(ErrorKind::NotPositiveDefinite,
                    "pivot " + std::to_string(d) + " at column " + std::to_string(j));
      }
      const double ljj = std::sqrt(d);
      l_(j, j) = ljj;
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = a(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
        l_(i, j) = s / ljj;
      }
    }
  }

  std::size_t size() const noexcept { return l_.rows(); }

  Vector solve(std::span<const double> b) const {
    const std::size_t n = size();
    if (b.size() != n) throw Error(ErrorKind::DimensionMismatch, "rhs length does not match system");
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
      double s = y[i];
      for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
      y[i] = s / l_(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y[i];
      for (std::size_t k = i + 1; k < n; ++k) s -= l_(k, i) * y[k];
      y[i] = s / l_(i, i);
    }
    return y;
  }

  Matrix inverse() const {
    const std::size_t n = size();
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      e[c] = 1.0;
      const Vector col = solve(e);
      e[c] = 0.0;
      for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
    }
    // Symmetrize to remove round-off asymmetry.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const double avg = 0.5 * (inv(i, j) + inv(j, i));
        inv(i, j) = avg;
        inv(j, i) = avg;
      }
    return inv;
  }

  const Matrix& factor() const noexcept { return l_; }

 private:
  Matrix l_;
};

inline Vector solve_spd(const Matrix& a, std::span<const double> b) {
  if (!a.square() || a.rows() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "solve_spd shape mismatch");
  }
  return Cholesky(a).solve(b);
}

inline Matrix invert_spd(const Matrix& a) { return Cholesky(a).inverse(); }

inline constexpr double kSingularDowndate = 1e-10;

/// (A - u uᵀ)⁻¹ from a cached A⁻¹ in O(n²):
/// A⁻¹ + (A⁻¹u)(A⁻¹u)ᵀ / (1 - uᵀA⁻¹u).
inline Matrix sherman_morrison_downdate(const Matrix& a_inv, std::span<const double> u) {
  const std::size_t n = a_inv.rows();
  if (!a_inv.square() || u.size() != n) {
    throw Error(ErrorKind::DimensionMismatch, "downdate vector does not match inverse");
  }
  const Vector w = matvec(a_inv, u);
  const double denom = 1.0 - dot(u, w);
  if (std::fabs(denom) <= kSingularDowndate) {
    throw Error(ErrorKind::SingularDowndate, "1 - uᵀA⁻¹u = " + std::to_string(denom));
  }
  Matrix out = a_inv;
  if (max_abs(w) == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w[i] / denom;
    for (std::size_t j = i; j < n; ++j) {
      const double v = a_inv(i, j) + wi * w[j];
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probability
// ---------------------------------------------------------------------------

inline Vector softmax(std::span<const double> z) {
  Vector p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline constexpr double kKlFloor = 1e-12;

/// KL(p ‖ q) = Σ p ln(p/q), with 0 ln 0 = 0 and q floored at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::LengthMismatch,
                "kl_divergence lengths " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double qi = std::max(q[i], kKlFloor);
    s += p[i] * std::log(p[i] / qi);
  }
  return std::max(s, 0.0);
}

// ---------------------------------------------------------------------------
// Beta posterior intervals
// ---------------------------------------------------------------------------

struct CredibleInterval {
  double lo = 0.0;
  double hi = 1.0;
  double level = 0.95;

  bool contains(double p) const noexcept { return lo <= p && p <= hi; }
  double width() const noexcept { return hi - lo; }
};

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Quantile of Beta(a, b) by bisection to absolute tolerance `tol`.
inline double beta_quantile(double a, double b, double prob, double tol = 1e-10) {
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (regularized_incomplete_beta(a, b, mid) < prob) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Equal-tailed credible interval of Beta(s + 1/2, n - s + 1/2).
inline CredibleInterval jeffreys_interval(std::size_t successes, std::size_t trials, double level) {
  if (successes > trials) {
    throw Error(ErrorKind::InvalidCounts,
                std::to_string(successes) + " successes out of " + std::to_string(trials) + " trials");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::InvalidCounts, "credible level must lie in (0, 1)");
  }
  const double a = static_cast<double>(successes) + 0.5;
  const double b = static_cast<double>(trials - successes) + 0.5;
  CredibleInterval ci;
  ci.level = level;
  ci.lo = beta_quantile(a, b, 0.5 * (1.0 - level));
  ci.hi = beta_quantile(a, b, 0.5 * (1.0 + level));
  return ci;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace arena
