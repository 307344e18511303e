#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/models.hpp"
#include "disent/ops.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Maps a latent batch (B, m) to the per-layer distortion targets. training
// selects batch-statistics normalization so that base and perturbed rows in
// one call share statistics and their difference isolates the z perturbation.
template <typename T>
using TapsFn = std::function<std::vector<Tensor<T>>(const Tensor<T>&, bool training)>;

// Maps a latent batch (B, m) to one output tensor with leading batch dim.
template <typename T>
using FlatFn = std::function<Tensor<T>(const Tensor<T>&, bool training)>;

struct PenaltyConfig {
  double epsilon = 0.1;       // finite-difference step along the probe
  std::int64_t k_samples = 2; // random direction draws per estimate
  std::vector<std::int64_t> layers;  // 1-based tap indices; empty = all taps
  double lambda = 10.0;       // trade-off weight applied by the trainer

  void validate(std::int64_t tap_count) const {
    if (!(epsilon > 0)) throw std::invalid_argument("penalty epsilon must be > 0");
    if (k_samples < 2) {
      throw std::invalid_argument("penalty k_samples must be >= 2 (a variance needs two draws)");
    }
    if (lambda < 0) throw std::invalid_argument("penalty lambda must be >= 0");
    std::vector<std::int64_t> seen;
    for (auto d : layers) {
      if (d < 1 || d > tap_count) {
        throw std::invalid_argument("penalty layer index " + std::to_string(d) +
                                    " outside 1.." + std::to_string(tap_count));
      }
      if (std::find(seen.begin(), seen.end(), d) != seen.end()) {
        throw std::invalid_argument("penalty layer index " + std::to_string(d) + " repeated");
      }
      seen.push_back(d);
    }
  }

  std::vector<std::int64_t> resolved_layers(std::int64_t tap_count) const {
    if (!layers.empty()) return layers;
    std::vector<std::int64_t> all(static_cast<std::size_t>(tap_count));
    for (std::int64_t d = 0; d < tap_count; ++d) all[static_cast<std::size_t>(d)] = d + 1;
    return all;
  }
};

// Adapter over a generator whose taps pass also updates normalization
// statistics (the in-training semantics).
template <typename T>
TapsFn<T> taps_of(Generator<T>& g) {
  return [&g](const Tensor<T>& z, bool training) { return g.forward_with_taps(z, training).taps; };
}

namespace detail {

template <typename T, typename Fn>
auto with_buffers_restored(Generator<T>& g, Fn&& fn) {
  std::vector<std::vector<T>> saved;
  auto bufs = g.buffers();
  saved.reserve(bufs.size());
  for (auto& b : bufs) saved.push_back(*b.data);
  auto result = fn();
  for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].data = std::move(saved[i]);
  return result;
}

}  // namespace detail

// Diagnostic adapter: statistics are shared within one call but restored
// afterwards, so repeated probing leaves the model untouched.
template <typename T>
TapsFn<T> taps_of_isolated(Generator<T>& g) {
  return [&g](const Tensor<T>& z, bool training) {
    return detail::with_buffers_restored(g, [&] { return g.forward_with_taps(z, training).taps; });
  };
}

template <typename T>
FlatFn<T> image_of_isolated(Generator<T>& g) {
  return [&g](const Tensor<T>& z, bool training) {
    return detail::with_buffers_restored(g, [&] { return g.forward(z, training); });
  };
}

template <typename T>
FlatFn<T> tap_of_isolated(Generator<T>& g, std::int64_t layer) {
  return [&g, layer](const Tensor<T>& z, bool training) {
    return detail::with_buffers_restored(
        g, [&] { return g.forward_with_taps(z, training).taps.at(static_cast<std::size_t>(layer - 1)); });
  };
}

// Forward-difference directional derivative of one tap: flattened
// (G_d(z + eps*v) - G_d(z)) / eps. Both evaluations run in one batch so
// normalization statistics are shared. layer is 1-based.
template <typename T>
std::vector<T> jacobian_column(const TapsFn<T>& taps, const std::vector<T>& z,
                               const std::vector<T>& v, std::int64_t layer, T epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("jacobian_column: epsilon must be > 0");
  if (z.size() != v.size()) {
    throw std::invalid_argument("jacobian_column: z and v must have the same length");
  }
  NoGradGuard ng;
  std::int64_t m = static_cast<std::int64_t>(z.size());
  std::vector<T> rows(z);
  for (std::size_t i = 0; i < z.size(); ++i) rows.push_back(z[i] + epsilon * v[i]);
  auto batch = Tensor<T>::from_data({2, m}, rows);
  auto all = taps(batch, true);
  const Tensor<T>& t = all.at(static_cast<std::size_t>(layer - 1));
  std::size_t e = t.value().size() / 2;
  std::vector<T> out(e);
  for (std::size_t i = 0; i < e; ++i) {
    out[i] = (t.value()[e + i] - t.value()[i]) / epsilon;
  }
  return out;
}

// Exact orthogonality penalty: per configured layer builds the Jacobian
// column-by-column with unit probes and sums squared off-diagonal entries of
// its Gram matrix. Diagnostic path: costs m+1 forward passes per layer probe.
template <typename T>
T orojar_exact(const TapsFn<T>& taps, const std::vector<T>& z, const PenaltyConfig& cfg,
               std::int64_t tap_count) {
  cfg.validate(tap_count);
  std::int64_t m = static_cast<std::int64_t>(z.size());
  T total = T(0);
  for (std::int64_t d : cfg.resolved_layers(tap_count)) {
    std::vector<std::vector<T>> cols;
    cols.reserve(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
      std::vector<T> e(static_cast<std::size_t>(m), T(0));
      e[static_cast<std::size_t>(i)] = T(1);
      cols.push_back(jacobian_column(taps, z, e, d, static_cast<T>(cfg.epsilon)));
    }
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < m; ++j) {
        if (i == j) continue;
        T dot = T(0);
        const auto& ci = cols[static_cast<std::size_t>(i)];
        const auto& cj = cols[static_cast<std::size_t>(j)];
        for (std::size_t e = 0; e < ci.size(); ++e) dot += ci[e] * cj[e];
        total += dot * dot;
      }
    }
  }
  return total;
}

namespace detail {

// Stacks [Z; Z + eps*V_1; ...; Z + eps*V_k] (and optionally the mirrored
// -eps rows) as one graph-connected batch.
template <typename T>
Tensor<T> stack_probe_rows(const Tensor<T>& zbatch, const std::vector<std::vector<T>>& probes,
                           T epsilon, bool mirrored) {
  std::int64_t b = zbatch.shape()[0], m = zbatch.shape()[1];
  std::vector<Tensor<T>> parts{zbatch};
  for (const auto& p : probes) {
    if (static_cast<std::int64_t>(p.size()) != b * m) {
      throw std::invalid_argument("probe size does not match latent batch");
    }
    auto v = Tensor<T>::from_data({b, m}, p);
    parts.push_back(add(zbatch, mul_scalar(v, epsilon)));
  }
  if (mirrored) {
    for (const auto& p : probes) {
      auto v = Tensor<T>::from_data({b, m}, p);
      parts.push_back(add(zbatch, mul_scalar(v, -epsilon)));
    }
  }
  return concat_rows(parts);
}

template <typename T>
std::vector<std::vector<T>> draw_rademacher_probes(Rng& rng, std::int64_t k, std::int64_t b,
                                                   std::int64_t m) {
  std::vector<std::vector<T>> probes(static_cast<std::size_t>(k));
  for (auto& p : probes) {
    p.resize(static_cast<std::size_t>(b * m));
    for (auto& x : p) x = static_cast<T>(rng.rademacher());
  }
  return probes;
}

// Unbiased (k-1) or population (k) variance of a list of same-shape tensors,
// elementwise, as a graph-connected tensor.
template <typename T>
Tensor<T> variance_over(const std::vector<Tensor<T>>& xs, bool unbiased) {
  std::int64_t k = static_cast<std::int64_t>(xs.size());
  Tensor<T> mean = xs[0];
  for (std::int64_t j = 1; j < k; ++j) mean = add(mean, xs[static_cast<std::size_t>(j)]);
  mean = mul_scalar(mean, T(1) / static_cast<T>(k));
  Tensor<T> acc;
  for (std::int64_t j = 0; j < k; ++j) {
    auto d = sub(xs[static_cast<std::size_t>(j)], mean);
    auto sq = mul(d, d);
    acc = (j == 0) ? sq : add(acc, sq);
  }
  T denom = unbiased ? static_cast<T>(k - 1) : static_cast<T>(k);
  return mul_scalar(acc, T(1) / denom);
}

}  // namespace detail

// Hutchinson-style estimator of the orthogonality penalty with externally
// supplied probe directions (each probes[j] holds B*m entries of +-1).
// Per layer: variance over draws of the squared directional-derivative norm,
// averaged over the batch; summed over layers. Graph-connected.
template <typename T>
Tensor<T> orojar_stochastic_with_probes(const TapsFn<T>& taps, const Tensor<T>& zbatch,
                                        const PenaltyConfig& cfg,
                                        const std::vector<std::vector<T>>& probes,
                                        std::int64_t tap_count, bool unbiased = true,
                                        std::vector<T>* per_layer = nullptr) {
  cfg.validate(tap_count);
  if (zbatch.shape().size() != 2) {
    throw std::invalid_argument("latent batch must have shape (batch, m)");
  }
  if (probes.size() < 2) throw std::invalid_argument("need at least 2 probe draws");
  std::int64_t b = zbatch.shape()[0];
  std::int64_t k = static_cast<std::int64_t>(probes.size());
  T eps = static_cast<T>(cfg.epsilon);

  auto big = detail::stack_probe_rows(zbatch, probes, eps, false);
  auto all = taps(big, true);

  Tensor<T> total;
  for (std::int64_t d : cfg.resolved_layers(tap_count)) {
    const Tensor<T>& t = all.at(static_cast<std::size_t>(d - 1));
    std::int64_t e = t.numel() / ((k + 1) * b);
    auto flat = reshape(t, {(k + 1) * b, e});
    auto base = slice_rows(flat, 0, b);
    std::vector<Tensor<T>> sq_norms;
    sq_norms.reserve(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
      auto u = mul_scalar(sub(slice_rows(flat, (j + 1) * b, b), base), T(1) / eps);
      sq_norms.push_back(row_sum(mul(u, u)));  // (B)
    }
    auto var = detail::variance_over(sq_norms, unbiased);
    auto layer_term = mean_all(var);
    if (per_layer) per_layer->push_back(layer_term.item());
    total = total.defined() ? add(total, layer_term) : layer_term;
  }
  return total;
}

template <typename T>
Tensor<T> orojar_stochastic(const TapsFn<T>& taps, const Tensor<T>& zbatch,
                            const PenaltyConfig& cfg, std::int64_t tap_count, Rng& rng,
                            std::vector<T>* per_layer = nullptr) {
  auto probes = detail::draw_rademacher_probes<T>(rng, cfg.k_samples, zbatch.shape()[0],
                                                  zbatch.shape()[1]);
  return orojar_stochastic_with_probes(taps, zbatch, cfg, probes, tap_count, true, per_layer);
}

// Diagonal-Hessian baseline with externally supplied probes: per layer the
// second central difference along each draw, elementwise variance across
// draws, max over output entries, batch mean; summed over layers.
template <typename T>
Tensor<T> hessian_penalty_with_probes(const TapsFn<T>& taps, const Tensor<T>& zbatch,
                                      const PenaltyConfig& cfg,
                                      const std::vector<std::vector<T>>& probes,
                                      std::int64_t tap_count, bool unbiased = true,
                                      std::vector<T>* per_layer = nullptr) {
  cfg.validate(tap_count);
  if (zbatch.shape().size() != 2) {
    throw std::invalid_argument("latent batch must have shape (batch, m)");
  }
  if (probes.size() < 2) throw std::invalid_argument("need at least 2 probe draws");
  std::int64_t b = zbatch.shape()[0];
  std::int64_t k = static_cast<std::int64_t>(probes.size());
  T eps = static_cast<T>(cfg.epsilon);

  auto big = detail::stack_probe_rows(zbatch, probes, eps, true);
  auto all = taps(big, true);

  Tensor<T> total;
  for (std::int64_t d : cfg.resolved_layers(tap_count)) {
    const Tensor<T>& t = all.at(static_cast<std::size_t>(d - 1));
    std::int64_t e = t.numel() / ((2 * k + 1) * b);
    auto flat = reshape(t, {(2 * k + 1) * b, e});
    auto base = slice_rows(flat, 0, b);
    std::vector<Tensor<T>> second_diffs;
    second_diffs.reserve(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
      auto plus = slice_rows(flat, (1 + j) * b, b);
      auto minus = slice_rows(flat, (1 + k + j) * b, b);
      auto h = mul_scalar(add(sub(plus, mul_scalar(base, T(2))), minus), T(1) / (eps * eps));
      second_diffs.push_back(h);  // (B, E)
    }
    auto var = detail::variance_over(second_diffs, unbiased);  // (B, E)
    auto layer_term = mean_all(row_max(var));
    if (per_layer) per_layer->push_back(layer_term.item());
    total = total.defined() ? add(total, layer_term) : layer_term;
  }
  return total;
}

template <typename T>
Tensor<T> hessian_penalty_stochastic(const TapsFn<T>& taps, const Tensor<T>& zbatch,
                                     const PenaltyConfig& cfg, std::int64_t tap_count, Rng& rng,
                                     std::vector<T>* per_layer = nullptr) {
  auto probes = detail::draw_rademacher_probes<T>(rng, cfg.k_samples, zbatch.shape()[0],
                                                  zbatch.shape()[1]);
  return hessian_penalty_with_probes(taps, zbatch, cfg, probes, tap_count, true, per_layer);
}

// Squared norm of the mixed second derivative of fn along coordinates (i, j),
// via the 4-point cross stencil over one shared-statistics batch.
template <typename T>
T hessian_offdiag_probe(const FlatFn<T>& fn, const std::vector<T>& z, std::int64_t i,
                        std::int64_t j, T delta) {
  std::int64_t m = static_cast<std::int64_t>(z.size());
  if (i == j) throw std::invalid_argument("hessian_offdiag_probe: i and j must differ");
  if (i < 0 || i >= m || j < 0 || j >= m) {
    throw std::invalid_argument("hessian_offdiag_probe: coordinate outside latent dimension");
  }
  if (!(delta > 0)) throw std::invalid_argument("hessian_offdiag_probe: delta must be > 0");
  NoGradGuard ng;
  std::vector<T> rows;
  rows.reserve(static_cast<std::size_t>(4 * m));
  auto push_row = [&](bool di, bool dj) {
    for (std::int64_t c = 0; c < m; ++c) {
      T v = z[static_cast<std::size_t>(c)];
      if (di && c == i) v += delta;
      if (dj && c == j) v += delta;
      rows.push_back(v);
    }
  };
  push_row(false, false);
  push_row(true, false);
  push_row(false, true);
  push_row(true, true);
  auto out = fn(Tensor<T>::from_data({4, m}, rows), true);
  std::size_t e = out.value().size() / 4;
  T acc = T(0);
  for (std::size_t c = 0; c < e; ++c) {
    T mixed = (out.value()[3 * e + c] - out.value()[e + c] - out.value()[2 * e + c] +
               out.value()[c]) /
              (delta * delta);
    acc += mixed * mixed;
  }
  return acc;
}

// Every probe vector of +-1 signs for an m-dimensional latent (B must be 1);
// pairs with the population-variance mode for enumeration checks.
template <typename T>
std::vector<std::vector<T>> enumerate_sign_probes(std::int64_t m) {
  if (m > 20) throw std::invalid_argument("enumerate_sign_probes: latent dimension too large");
  std::vector<std::vector<T>> probes;
  probes.reserve(std::size_t(1) << m);
  for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << m); ++mask) {
    std::vector<T> p(static_cast<std::size_t>(m));
    for (std::int64_t c = 0; c < m; ++c) {
      p[static_cast<std::size_t>(c)] = (mask >> c) & 1 ? T(1) : T(-1);
    }
    probes.push_back(std::move(p));
  }
  return probes;
}

}  // namespace disent
