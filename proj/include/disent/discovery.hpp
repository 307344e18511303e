#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/models.hpp"
#include "disent/optim.hpp"
#include "disent/penalty.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Classical Gram-Schmidt over the columns of a row-major (m, n_dirs) matrix,
// with re-normalization. Throws when a column collapses (linear dependence).
template <typename T>
std::vector<T> orthonormalize(const std::vector<T>& a_raw, std::int64_t m, std::int64_t n_dirs) {
  if (n_dirs > m) throw std::invalid_argument("orthonormalize: more directions than dimensions");
  if (static_cast<std::int64_t>(a_raw.size()) != m * n_dirs) {
    throw std::invalid_argument("orthonormalize: data size does not match (m, n_dirs)");
  }
  std::vector<T> q = a_raw;
  for (std::int64_t j = 0; j < n_dirs; ++j) {
    // Project the original column j against all finished columns.
    std::vector<T> col(static_cast<std::size_t>(m));
    for (std::int64_t r = 0; r < m; ++r) {
      col[static_cast<std::size_t>(r)] = a_raw[static_cast<std::size_t>(r * n_dirs + j)];
    }
    for (std::int64_t i = 0; i < j; ++i) {
      T dot = T(0);
      for (std::int64_t r = 0; r < m; ++r) {
        dot += q[static_cast<std::size_t>(r * n_dirs + i)] *
               a_raw[static_cast<std::size_t>(r * n_dirs + j)];
      }
      for (std::int64_t r = 0; r < m; ++r) {
        col[static_cast<std::size_t>(r)] -= dot * q[static_cast<std::size_t>(r * n_dirs + i)];
      }
    }
    T norm = T(0);
    for (T v : col) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < T(1e-10)) {
      throw std::runtime_error("orthonormalize: column " + std::to_string(j) +
                               " is degenerate (linearly dependent on earlier columns)");
    }
    for (std::int64_t r = 0; r < m; ++r) {
      q[static_cast<std::size_t>(r * n_dirs + j)] = col[static_cast<std::size_t>(r)] / norm;
    }
  }
  return q;
}

template <typename T>
T max_orthonormality_error(const std::vector<T>& a, std::int64_t m, std::int64_t n_dirs) {
  T worst = T(0);
  for (std::int64_t i = 0; i < n_dirs; ++i) {
    for (std::int64_t j = 0; j < n_dirs; ++j) {
      T dot = T(0);
      for (std::int64_t r = 0; r < m; ++r) {
        dot += a[static_cast<std::size_t>(r * n_dirs + i)] *
               a[static_cast<std::size_t>(r * n_dirs + j)];
      }
      T target = (i == j) ? T(1) : T(0);
      worst = std::max(worst, std::abs(dot - target));
    }
  }
  return worst;
}

struct DiscoverConfig {
  PenaltyConfig penalty;
  std::int64_t n_dirs = 0;   // 0 = same as the latent dimension
  double eta = 1.0;          // edit step scale
  double lr = 1e-3;
  std::int64_t iters = 5000;
  std::int64_t batch = 8;
};

template <typename T>
struct DiscoverResult {
  Tensor<T> a;                      // (m, n_dirs), orthonormal columns
  std::vector<T> penalty_history;   // one entry per step
  T max_orth_err = T(0);            // worst post-step orthonormality error
};

// Learns an orthonormal direction matrix A on a frozen generator by pushing
// down the orthogonality penalty of h(w) = G(z + eta * A w), probed around
// one-hot w. Gradients reach A only; A is re-orthonormalized after each
// optimizer step.
template <typename T>
DiscoverResult<T> discover(const TapsFn<T>& frozen_taps, std::int64_t tap_count, std::int64_t m,
                           const DiscoverConfig& cfg, Rng& rng) {
  std::int64_t n_dirs = cfg.n_dirs > 0 ? cfg.n_dirs : m;
  if (n_dirs > m) throw std::invalid_argument("discover: more directions than latent dimensions");
  cfg.penalty.validate(tap_count);
  if (cfg.batch < 1) throw std::invalid_argument("discover: batch must be >= 1");
  if (cfg.iters < 0) throw std::invalid_argument("discover: iters must be >= 0");

  // Random init, immediately projected to orthonormal columns.
  std::vector<T> a0(static_cast<std::size_t>(m * n_dirs));
  for (auto& v : a0) v = static_cast<T>(rng.normal());
  a0 = orthonormalize(a0, m, n_dirs);
  auto A = Tensor<T>::from_data({m, n_dirs}, a0, true);

  DiscoverResult<T> out;
  out.penalty_history.reserve(static_cast<std::size_t>(cfg.iters));

  if (n_dirs == 1) {
    // A single direction has no coordinate pairs to decorrelate: the exact
    // objective is identically zero, so A stays at its initialization.
    out.a = A;
    out.penalty_history.assign(static_cast<std::size_t>(cfg.iters), T(0));
    return out;
  }

  Adam<T> opt({{"A", A}}, static_cast<T>(cfg.lr));
  T eta = static_cast<T>(cfg.eta);

  for (std::int64_t step = 0; step < cfg.iters; ++step) {
    // One z batch and one shared one-hot base point in direction space.
    std::vector<T> zv(static_cast<std::size_t>(cfg.batch * m));
    for (auto& v : zv) v = static_cast<T>(rng.normal());
    auto zfixed = Tensor<T>::from_data({cfg.batch, m}, zv);
    std::int64_t hot = static_cast<std::int64_t>(rng.uniform_u64(static_cast<std::uint64_t>(n_dirs)));
    std::vector<T> wv(static_cast<std::size_t>(cfg.batch * n_dirs), T(0));
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      wv[static_cast<std::size_t>(b * n_dirs + hot)] = T(1);
    }
    auto wbase = Tensor<T>::from_data({cfg.batch, n_dirs}, wv);

    TapsFn<T> taps_in_w = [&](const Tensor<T>& w, bool training) {
      std::int64_t copies = w.shape()[0] / cfg.batch;
      auto z_rep = tile_rows(zfixed, copies);
      auto latent = add(z_rep, mul_scalar(matmul(w, A, false, true), eta));
      return frozen_taps(latent, training);
    };

    opt.zero_grad();
    auto p = orojar_stochastic(taps_in_w, wbase, cfg.penalty, tap_count, rng);
    out.penalty_history.push_back(p.item());
    p.backward();
    opt.step();

    auto projected = orthonormalize(A.value(), m, n_dirs);
    A.mutable_value() = std::move(projected);
    out.max_orth_err = std::max(out.max_orth_err, max_orthonormality_error(A.value(), m, n_dirs));
  }
  out.a = A;
  return out;
}

namespace detail {

// Temporarily turns off gradient tracking for every generator parameter, so
// backprop stops at the latent input and the model is provably untouched.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(Generator<T>& g) {
    for (auto& p : g.parameters()) {
      tensors_.push_back(p.tensor);
      was_.push_back(p.tensor.requires_grad());
      p.tensor.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].set_requires_grad(was_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor<T>> tensors_;
  std::vector<bool> was_;
};

}  // namespace detail

template <typename T>
DiscoverResult<T> discover(Generator<T>& g, const DiscoverConfig& cfg, Rng& rng) {
  detail::FreezeGuard<T> freeze(g);
  return discover(taps_of<T>(g), g.config().tap_count(), g.config().latent_dim, cfg, rng);
}

// G(z + eta * A[:, i]): moves one discovered direction's knob and renders.
template <typename T>
Tensor<T> edit(const FlatFn<T>& fn, const std::vector<T>& z, const Tensor<T>& a, std::int64_t i,
               T eta) {
  std::int64_t m = a.shape()[0], n_dirs = a.shape()[1];
  if (i < 0 || i >= n_dirs) {
    throw std::out_of_range("edit: direction index " + std::to_string(i) + " outside 0.." +
                            std::to_string(n_dirs - 1));
  }
  if (static_cast<std::int64_t>(z.size()) != m) {
    throw std::invalid_argument("edit: z width does not match the direction matrix");
  }
  NoGradGuard ng;
  std::vector<T> zv(z);
  for (std::int64_t r = 0; r < m; ++r) {
    zv[static_cast<std::size_t>(r)] += eta * a.value()[static_cast<std::size_t>(r * n_dirs + i)];
  }
  return fn(Tensor<T>::from_data({1, m}, zv), false);
}

template <typename T>
Tensor<T> edit(Generator<T>& g, const std::vector<T>& z, const Tensor<T>& a, std::int64_t i,
               T eta) {
  FlatFn<T> fn = [&g](const Tensor<T>& zb, bool) { return g.forward(zb, false); };
  return edit(fn, z, a, i, eta);
}

}  // namespace disent
