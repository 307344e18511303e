#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace disent {

// Thin SVD A = U diag(sigma) V^T of a row-major (n, m) matrix with n >= m.
// U is (n, m) with orthonormal columns (zero columns for zero singular
// values), sigma has m non-increasing entries >= 0, V is (m, m) orthogonal.
template <typename T>
struct Svd {
  std::vector<T> u;
  std::vector<T> sigma;
  std::vector<T> v;
  std::int64_t n = 0, m = 0;
};

// One-sided Jacobi: rotate column pairs of a working copy of A until all are
// mutually orthogonal, accumulating the rotations into V; column norms then
// give the singular values.
template <typename T>
Svd<T> svd_jacobi(const std::vector<T>& a, std::int64_t n, std::int64_t m,
                  T tol = std::numeric_limits<T>::epsilon() * T(64), int max_sweeps = 60) {
  if (n < m) throw std::invalid_argument("svd_jacobi: need n >= m");
  if (static_cast<std::int64_t>(a.size()) != n * m) {
    throw std::invalid_argument("svd_jacobi: data size does not match (n, m)");
  }
  std::vector<T> w = a;                      // (n, m), columns rotated in place
  std::vector<T> v(static_cast<std::size_t>(m * m), T(0));
  for (std::int64_t i = 0; i < m; ++i) v[static_cast<std::size_t>(i * m + i)] = T(1);

  auto col_dot = [&](const std::vector<T>& x, std::int64_t rows, std::int64_t cols,
                     std::int64_t p, std::int64_t q) {
    T s = T(0);
    for (std::int64_t r = 0; r < rows; ++r) {
      s += x[static_cast<std::size_t>(r * cols + p)] * x[static_cast<std::size_t>(r * cols + q)];
    }
    return s;
  };
  auto rotate_cols = [&](std::vector<T>& x, std::int64_t rows, std::int64_t cols, std::int64_t p,
                         std::int64_t q, T c, T s) {
    for (std::int64_t r = 0; r < rows; ++r) {
      T xp = x[static_cast<std::size_t>(r * cols + p)];
      T xq = x[static_cast<std::size_t>(r * cols + q)];
      x[static_cast<std::size_t>(r * cols + p)] = c * xp - s * xq;
      x[static_cast<std::size_t>(r * cols + q)] = s * xp + c * xq;
    }
  };

  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::int64_t p = 0; p < m - 1; ++p) {
      for (std::int64_t q = p + 1; q < m; ++q) {
        T alpha = col_dot(w, n, m, p, p);
        T beta = col_dot(w, n, m, q, q);
        T gamma = col_dot(w, n, m, p, q);
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == T(0)) continue;
        converged = false;
        T zeta = (beta - alpha) / (T(2) * gamma);
        T t = (zeta >= 0 ? T(1) : T(-1)) / (std::abs(zeta) + std::sqrt(T(1) + zeta * zeta));
        T c = T(1) / std::sqrt(T(1) + t * t);
        T s = c * t;
        rotate_cols(w, n, m, p, q, c, s);
        rotate_cols(v, m, m, p, q, c, s);
      }
    }
  }
  if (!converged) throw std::runtime_error("svd_jacobi: did not converge");

  Svd<T> out;
  out.n = n;
  out.m = m;
  out.sigma.resize(static_cast<std::size_t>(m));
  for (std::int64_t j = 0; j < m; ++j) {
    out.sigma[static_cast<std::size_t>(j)] = std::sqrt(col_dot(w, n, m, j, j));
  }

  // Order columns by non-increasing singular value.
  std::vector<std::int64_t> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
    return out.sigma[static_cast<std::size_t>(x)] > out.sigma[static_cast<std::size_t>(y)];
  });

  std::vector<T> sigma_sorted(static_cast<std::size_t>(m));
  out.u.assign(static_cast<std::size_t>(n * m), T(0));
  std::vector<T> v_sorted(static_cast<std::size_t>(m * m));
  for (std::int64_t j = 0; j < m; ++j) {
    std::int64_t src = order[static_cast<std::size_t>(j)];
    T s = out.sigma[static_cast<std::size_t>(src)];
    sigma_sorted[static_cast<std::size_t>(j)] = s;
    if (s > T(0)) {
      for (std::int64_t r = 0; r < n; ++r) {
        out.u[static_cast<std::size_t>(r * m + j)] = w[static_cast<std::size_t>(r * m + src)] / s;
      }
    }
    for (std::int64_t r = 0; r < m; ++r) {
      v_sorted[static_cast<std::size_t>(r * m + j)] = v[static_cast<std::size_t>(r * m + src)];
    }
  }
  out.sigma = std::move(sigma_sorted);
  out.v = std::move(v_sorted);
  return out;
}

}  // namespace disent
