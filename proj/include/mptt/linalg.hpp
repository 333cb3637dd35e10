#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mptt {

using Vec = std::vector<double>;

/// Dense row-major matrix. The embedded kernels below are all this project
/// needs; sizes stay small (hidden dims of a few dozen), so clarity and a
/// fixed accumulation order win over a BLAS dependency.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::size_t size() const { return a.size(); }
  void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

/// out[i] += sum_k A(i,k) * x[k]
inline void matvec_acc(const Mat& A, std::span<const double> x, std::span<double> out) {
  assert(x.size() >= A.cols && out.size() >= A.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double* row = &A.a[i * A.cols];
    double s = 0.0;
    for (std::size_t k = 0; k < A.cols; ++k) s += row[k] * x[k];
    out[i] += s;
  }
}

/// out[k] += sum_i A(i,k) * v[i]  (transposed product, i-major accumulation)
inline void matTvec_acc(const Mat& A, std::span<const double> v, std::span<double> out) {
  assert(v.size() >= A.rows && out.size() >= A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double vi = v[i];
    const double* row = &A.a[i * A.cols];
    for (std::size_t k = 0; k < A.cols; ++k) out[k] += row[k] * vi;
  }
}

/// A(i,k) += u[i] * v[k]
inline void outer_acc(std::span<const double> u, std::span<const double> v, Mat& A) {
  assert(u.size() >= A.rows && v.size() >= A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    double* row = &A.a[i * A.cols];
    const double ui = u[i];
    for (std::size_t k = 0; k < A.cols; ++k) row[k] += ui * v[k];
  }
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(y.size() >= x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (const double v : x) m = std::max(m, std::fabs(v));
  return m;
}

inline bool all_finite(std::span<const double> x) {
  for (const double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace mptt
