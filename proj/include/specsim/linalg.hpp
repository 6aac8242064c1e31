#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "specsim/common.hpp"

namespace specsim {

// Dense helpers for the small per-slot statistics (n is the node count, so
// matrices stay tiny). Matrices are row-major n x n.

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median of empty set");
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

inline double mad_of(const std::vector<double>& v, double med) {
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::fabs(v[i] - med);
  return median_of(std::move(dev));
}

// Percentile with linear interpolation between closest ranks; sorted input.
inline double percentile_sorted(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) throw ParameterError("percentile of empty set");
  if (sorted.size() == 1) return sorted[0];
  double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;  // constant series: correlation undefined, use 0
  return sab / std::sqrt(saa * sbb);
}

// Mean and covariance of the selected rows, with a ridge term on the diagonal.
inline void fit_mean_cov(const std::vector<const std::vector<double>*>& rows, int n,
                         double ridge, std::vector<double>& mean, std::vector<double>& cov) {
  if (rows.empty()) throw ParameterError("covariance of empty set");
  mean.assign(n, 0.0);
  for (const auto* r : rows)
    for (int j = 0; j < n; ++j) mean[j] += (*r)[j];
  for (int j = 0; j < n; ++j) mean[j] /= static_cast<double>(rows.size());
  cov.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto* r : rows)
    for (int i = 0; i < n; ++i) {
      double di = (*r)[i] - mean[i];
      for (int j = 0; j <= i; ++j) cov[i * n + j] += di * ((*r)[j] - mean[j]);
    }
  double denom = static_cast<double>(rows.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      cov[i * n + j] /= denom;
      cov[j * n + i] = cov[i * n + j];
    }
    cov[i * n + i] += ridge;
  }
}

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
inline std::vector<double> cholesky_lower(const std::vector<double>& a, int n) {
  std::vector<double> l(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (int k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (s <= 0.0) throw ParameterError("matrix not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

// Solve L z = r in place for lower-triangular L; z whitens r when L L^T = Cov.
inline std::vector<double> solve_lower(const std::vector<double>& l, int n,
                                       const std::vector<double>& r) {
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) {
    double s = r[i];
    for (int k = 0; k < i; ++k) s -= l[i * n + k] * z[k];
    z[i] = s / l[i * n + i];
  }
  return z;
}

inline double sq_mahalanobis(const std::vector<double>& l, int n, const std::vector<double>& x,
                             const std::vector<double>& mean) {
  std::vector<double> r(n);
  for (int j = 0; j < n; ++j) r[j] = x[j] - mean[j];
  std::vector<double> z = solve_lower(l, n, r);
  double s = 0.0;
  for (double v : z) s += v * v;
  return s;
}

}  // namespace specsim
