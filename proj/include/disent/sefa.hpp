#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/models.hpp"
#include "disent/penalty.hpp"
#include "disent/svd.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Closed-form latent directions from the first fully connected weight: the
// right singular vectors of W, ordered by descending singular value. Each
// direction column is sign-fixed so its largest-magnitude entry is positive.
template <typename T>
struct SefaResult {
  std::vector<T> u;          // (hidden, m)
  std::vector<T> sigma;      // m, non-increasing
  std::vector<T> v;          // (m, m); column j = direction j
  std::int64_t hidden = 0, m = 0;
  std::vector<T> near_zero;  // singular values below the degeneracy threshold
  std::string warning;       // non-empty when near_zero is non-empty

  std::vector<T> direction(std::int64_t j) const {
    std::vector<T> d(static_cast<std::size_t>(m));
    for (std::int64_t r = 0; r < m; ++r) d[static_cast<std::size_t>(r)] = v[static_cast<std::size_t>(r * m + j)];
    return d;
  }
};

template <typename T>
SefaResult<T> sefa_from_weight(const std::vector<T>& w, std::int64_t hidden, std::int64_t m,
                               T degenerate_threshold = T(1e-8)) {
  auto f = svd_jacobi(w, hidden, m);
  SefaResult<T> out;
  out.hidden = hidden;
  out.m = m;
  out.u = std::move(f.u);
  out.sigma = std::move(f.sigma);
  out.v = std::move(f.v);

  // Sign convention: flip each V column (and the matching U column, keeping
  // U sigma V^T intact) so the largest-magnitude entry of the direction is
  // positive.
  for (std::int64_t j = 0; j < m; ++j) {
    std::int64_t best = 0;
    for (std::int64_t r = 1; r < m; ++r) {
      if (std::abs(out.v[static_cast<std::size_t>(r * m + j)]) >
          std::abs(out.v[static_cast<std::size_t>(best * m + j)])) {
        best = r;
      }
    }
    if (out.v[static_cast<std::size_t>(best * m + j)] < 0) {
      for (std::int64_t r = 0; r < m; ++r) out.v[static_cast<std::size_t>(r * m + j)] *= T(-1);
      for (std::int64_t r = 0; r < hidden; ++r) out.u[static_cast<std::size_t>(r * m + j)] *= T(-1);
    }
  }

  for (T s : out.sigma) {
    if (s < degenerate_threshold) out.near_zero.push_back(s);
  }
  if (!out.near_zero.empty()) {
    std::ostringstream os;
    os << "weight is rank-deficient: " << out.near_zero.size()
       << " singular value(s) below " << degenerate_threshold << ":";
    for (T s : out.near_zero) os << " " << s;
    out.warning = os.str();
  }
  return out;
}

template <typename T>
SefaResult<T> sefa_directions(Generator<T>& g) {
  const auto& w = g.first_layer_weight();
  return sefa_from_weight(w.value(), w.shape()[0], w.shape()[1]);
}

// Executable check of the change-of-basis identity behind the closed-form
// directions: with z' = V^T z and W' = U diag(sigma), the first-layer linear
// map satisfies W z = W' z', and W'^T W' is diagonal with entries sigma^2.
template <typename T>
struct PropositionReport {
  T max_equivalence_error = T(0);  // max_i |(W z)_i - (W' z')_i| over the batch
  T max_offdiag = T(0);            // max off-diagonal magnitude of W'^T W'
  T sigma_sq_max = T(0);
};

template <typename T>
PropositionReport<T> verify_proposition(const std::vector<T>& w, std::int64_t hidden,
                                        std::int64_t m, const std::vector<std::vector<T>>& zs) {
  auto f = sefa_from_weight(w, hidden, m);
  PropositionReport<T> rep;
  for (T s : f.sigma) rep.sigma_sq_max = std::max(rep.sigma_sq_max, s * s);

  // W' = U diag(sigma), shape (hidden, m).
  std::vector<T> wp(static_cast<std::size_t>(hidden * m));
  for (std::int64_t r = 0; r < hidden; ++r) {
    for (std::int64_t c = 0; c < m; ++c) {
      wp[static_cast<std::size_t>(r * m + c)] =
          f.u[static_cast<std::size_t>(r * m + c)] * f.sigma[static_cast<std::size_t>(c)];
    }
  }

  for (const auto& z : zs) {
    if (static_cast<std::int64_t>(z.size()) != m) {
      throw std::invalid_argument("verify_proposition: z width mismatch");
    }
    std::vector<T> zp(static_cast<std::size_t>(m), T(0));  // V^T z
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t c = 0; c < m; ++c) {
        zp[static_cast<std::size_t>(r)] +=
            f.v[static_cast<std::size_t>(c * m + r)] * z[static_cast<std::size_t>(c)];
      }
    }
    for (std::int64_t r = 0; r < hidden; ++r) {
      T lhs = T(0), rhs = T(0);
      for (std::int64_t c = 0; c < m; ++c) {
        lhs += w[static_cast<std::size_t>(r * m + c)] * z[static_cast<std::size_t>(c)];
        rhs += wp[static_cast<std::size_t>(r * m + c)] * zp[static_cast<std::size_t>(c)];
      }
      rep.max_equivalence_error = std::max(rep.max_equivalence_error, std::abs(lhs - rhs));
    }
  }

  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      if (i == j) continue;
      T dot = T(0);
      for (std::int64_t r = 0; r < hidden; ++r) {
        dot += wp[static_cast<std::size_t>(r * m + i)] * wp[static_cast<std::size_t>(r * m + j)];
      }
      rep.max_offdiag = std::max(rep.max_offdiag, std::abs(dot));
    }
  }
  return rep;
}

template <typename T>
PropositionReport<T> verify_proposition(Generator<T>& g, const std::vector<std::vector<T>>& zs) {
  const auto& w = g.first_layer_weight();
  return verify_proposition(w.value(), w.shape()[0], w.shape()[1], zs);
}

// Renders `steps` frames fn(z + t * direction) with t linearly spaced over
// [lo, hi]. The direction must be non-zero; it is normalized to unit length.
template <typename T>
Tensor<T> traverse_direction(const FlatFn<T>& fn, const std::vector<T>& z,
                             const std::vector<T>& direction, T lo, T hi, std::int64_t steps) {
  if (steps < 2) throw std::invalid_argument("traverse_direction: steps must be >= 2");
  if (z.size() != direction.size()) {
    throw std::invalid_argument("traverse_direction: direction width mismatch");
  }
  T norm = T(0);
  for (T v : direction) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > T(1e-12))) {
    throw std::invalid_argument("traverse_direction: zero direction rejected");
  }
  NoGradGuard ng;
  std::int64_t m = static_cast<std::int64_t>(z.size());
  std::vector<T> rows;
  rows.reserve(static_cast<std::size_t>(steps * m));
  for (std::int64_t s = 0; s < steps; ++s) {
    T t = lo + (hi - lo) * static_cast<T>(s) / static_cast<T>(steps - 1);
    for (std::int64_t c = 0; c < m; ++c) {
      rows.push_back(z[static_cast<std::size_t>(c)] +
                     t * direction[static_cast<std::size_t>(c)] / norm);
    }
  }
  return fn(Tensor<T>::from_data({steps, m}, rows), false);
}

template <typename T>
Tensor<T> traverse_direction(Generator<T>& g, const std::vector<T>& z,
                             const std::vector<T>& direction, T lo, T hi, std::int64_t steps) {
  FlatFn<T> fn = [&g](const Tensor<T>& zb, bool) { return g.forward(zb, false); };
  return traverse_direction(fn, z, direction, lo, hi, steps);
}

}  // namespace disent
