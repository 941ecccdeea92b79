#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "deepin/matrix.hpp"

namespace deepin {

struct SpectralDecomp {
  Vec eigenvalues;     // descending
  Matrix eigenvectors; // columns, orthonormal
};

struct SvdResult {
  Matrix u;  // m x k, k = min(m, n)
  Vec s;     // non-negative, descending
  Matrix v;  // n x k
};

namespace detail {
constexpr int kJacobiSweepCap = 100;
constexpr double kJacobiTol = 1e-14;
}  // namespace detail

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// The input is symmetrized as (M + M^T)/2 before iteration.
inline SpectralDecomp sym_eigen(const Matrix& m) {
  if (m.rows != m.cols) throw contract_violation("sym_eigen: matrix must be square");
  const std::size_t n = m.rows;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  const double scale = std::max(frobenius_norm(a), 1e-300);
  bool converged = (n <= 1);
  for (int sweep = 0; sweep < detail::kJacobiSweepCap && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::fabs(apq) <= detail::kJacobiTol * scale) continue;
        converged = false;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) throw numerical_failure("sym_eigen: Jacobi sweeps exceeded cap");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SpectralDecomp out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = v(i, order[j]);
  }
  return out;
}

/// Thin SVD by one-sided Jacobi: columns of A are rotated until pairwise
/// orthogonal; singular values are the resulting column norms.
inline SvdResult svd(const Matrix& m) {
  if (!all_finite(m)) throw contract_violation("svd: input has non-finite entries");
  if (m.rows < m.cols) {
    SvdResult t = svd(transpose(m));
    return SvdResult{t.v, t.s, t.u};
  }
  const std::size_t rows = m.rows, cols = m.cols;
  Matrix a = m;
  Matrix v = Matrix::identity(cols);

  bool converged = (cols <= 1);
  for (int sweep = 0; sweep < detail::kJacobiSweepCap && !converged; ++sweep) {
    converged = true;
    for (std::size_t i = 0; i + 1 < cols; ++i) {
      for (std::size_t j = i + 1; j < cols; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
          alpha += a(k, i) * a(k, i);
          beta += a(k, j) * a(k, j);
          gamma += a(k, i) * a(k, j);
        }
        if (gamma == 0.0 || gamma * gamma <= detail::kJacobiTol * detail::kJacobiTol * alpha * beta)
          continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < rows; ++k) {
          const double aki = a(k, i), akj = a(k, j);
          a(k, i) = c * aki - s * akj;
          a(k, j) = s * aki + c * akj;
        }
        for (std::size_t k = 0; k < cols; ++k) {
          const double vki = v(k, i), vkj = v(k, j);
          v(k, i) = c * vki - s * vkj;
          v(k, j) = s * vki + c * vkj;
        }
      }
    }
  }
  if (!converged) throw numerical_failure("svd: one-sided Jacobi sweeps exceeded cap");

  Vec sigma(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) sigma[j] = col_norm(a, j);
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  SvdResult out;
  out.s.resize(cols);
  out.u = Matrix(rows, cols);
  out.v = Matrix(cols, cols);
  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t src = order[j];
    out.s[j] = sigma[src];
    // Zero singular value leaves a zero U column; reconstruction is unaffected.
    const double inv = sigma[src] > 0.0 ? 1.0 / sigma[src] : 0.0;
    for (std::size_t k = 0; k < rows; ++k) out.u(k, j) = a(k, src) * inv;
    for (std::size_t k = 0; k < cols; ++k) out.v(k, j) = v(k, src);
  }
  return out;
}

inline Vec singular_values(const Matrix& m) { return svd(m).s; }

/// Pseudo-inverse square root of a symmetric PSD matrix: eigenvalues at or
/// below floor*lambda_max are zeroed instead of inverted.
inline Matrix sym_inv_sqrt(const Matrix& m, double floor_rel) {
  if (m.rows != m.cols) throw contract_violation("sym_inv_sqrt: matrix must be square");
  if (!(floor_rel > 0.0)) throw contract_violation("sym_inv_sqrt: floor must be > 0");
  const double scale = std::max(1.0, frobenius_norm(m));
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = i + 1; j < m.cols; ++j)
      if (std::fabs(m(i, j) - m(j, i)) > 1e-8 * scale)
        throw contract_violation("sym_inv_sqrt: input is not symmetric");

  const SpectralDecomp eig = sym_eigen(m);
  const std::size_t n = m.rows;
  const double lmax = eig.eigenvalues.empty() ? 0.0 : eig.eigenvalues.front();
  Matrix out(n, n);
  if (lmax <= 0.0) return out;
  for (std::size_t k = 0; k < n; ++k) {
    const double lk = eig.eigenvalues[k];
    if (lk <= floor_rel * lmax) continue;
    const double w = 1.0 / std::sqrt(lk);
    for (std::size_t i = 0; i < n; ++i) {
      const double qik = eig.eigenvectors(i, k) * w;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += qik * eig.eigenvectors(j, k);
    }
  }
  return out;
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
inline Matrix cholesky(const Matrix& m) {
  if (m.rows != m.cols) throw contract_violation("cholesky: matrix must be square");
  const std::size_t n = m.rows;
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw numerical_failure("cholesky: matrix is not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

}  // namespace deepin
