#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/models.hpp"
#include "disent/ops.hpp"
#include "disent/optim.hpp"
#include "disent/penalty.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// ---------------------------------------------------------------------------
// Variation predictability: how well a small classifier can recover which
// latent dimension was perturbed from the image difference it caused.
// ---------------------------------------------------------------------------

struct VpConfig {
  std::int64_t n_pairs = 10000;  // total (image, perturbed image) pairs
  std::int64_t epochs = 10;
  double delta = 1.0;            // perturbation size along one latent axis
  std::int64_t batch = 64;
  double lr = 1e-3;
  std::int64_t repeats = 3;

  void validate() const {
    if (n_pairs < 1000) throw std::invalid_argument("vp n_pairs must be >= 1000");
    if (epochs < 1) throw std::invalid_argument("vp epochs must be >= 1");
    if (!(delta > 0)) throw std::invalid_argument("vp delta must be > 0");
    if (batch < 1) throw std::invalid_argument("vp batch must be >= 1");
    if (!(lr > 0)) throw std::invalid_argument("vp lr must be > 0");
    if (repeats < 1) throw std::invalid_argument("vp repeats must be >= 1");
  }
};

struct VpResult {
  double accuracy = 0;  // mean held-out accuracy over repeats
  double std_dev = 0;   // sample standard deviation over repeats
  std::vector<double> per_repeat;
};

namespace detail {

// Two stride-2 conv blocks and a linear head over a single-channel square
// input. Small on purpose: the signal lives in where the difference image is
// active, not in fine texture.
template <typename T>
class DiffClassifier {
 public:
  DiffClassifier(std::int64_t resolution, std::int64_t classes, Rng& rng)
      : res_(resolution), classes_(classes) {
    if (res_ % 4 != 0) throw std::invalid_argument("classifier resolution must be divisible by 4");
    w1_ = normal_param({8, 1, 4, 4}, rng);
    b1_ = Tensor<T>::zeros({8}, true);
    w2_ = normal_param({16, 8, 4, 4}, rng);
    b2_ = Tensor<T>::zeros({16}, true);
    feat_ = 16 * (res_ / 4) * (res_ / 4);
    w3_ = normal_param({classes_, feat_}, rng);
    b3_ = Tensor<T>::zeros({classes_}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = leaky_relu(conv2d(x, w1_, b1_, 2, 1), T(0.2));
    h = leaky_relu(conv2d(h, w2_, b2_, 2, 1), T(0.2));
    h = reshape(h, {x.shape()[0], feat_});
    return linear(h, w3_, b3_);
  }

  std::vector<NamedParam<T>> parameters() {
    return {{"c1.w", w1_}, {"c1.b", b1_}, {"c2.w", w2_}, {"c2.b", b2_},
            {"head.w", w3_}, {"head.b", b3_}};
  }

 private:
  static Tensor<T> normal_param(Shape shape, Rng& rng) {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, 0.02));
    return Tensor<T>::from_data(std::move(shape), std::move(v), true);
  }

  std::int64_t res_, classes_, feat_ = 0;
  Tensor<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace detail

// Builds n_pairs image differences G(z + delta*e_i) - G(z) with i uniform,
// trains the classifier to recover i on an 80/20 split, and reports held-out
// accuracy averaged over independent repeats. A non-finite training loss is
// an error, never a silently wrong score.
template <typename T>
VpResult vp_score(const FlatFn<T>& g, std::int64_t latent_dim, std::int64_t resolution,
                  const VpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (latent_dim < 2) throw std::invalid_argument("vp needs at least 2 latent dimensions");

  VpResult result;
  for (std::int64_t rep = 0; rep < cfg.repeats; ++rep) {
    Rng rng(Rng::mix(seed, 0x5650 + static_cast<std::uint64_t>(rep)));

    const std::int64_t px = resolution * resolution;
    std::vector<T> diffs(static_cast<std::size_t>(cfg.n_pairs * px));
    std::vector<std::int64_t> labels(static_cast<std::size_t>(cfg.n_pairs));
    const std::int64_t chunk = 128;
    for (std::int64_t off = 0; off < cfg.n_pairs; off += chunk) {
      std::int64_t b = std::min(chunk, cfg.n_pairs - off);
      std::vector<T> z1(static_cast<std::size_t>(b * latent_dim));
      for (auto& v : z1) v = static_cast<T>(rng.normal());
      auto z2 = z1;
      for (std::int64_t r = 0; r < b; ++r) {
        std::int64_t lab = static_cast<std::int64_t>(
            rng.uniform_u64(static_cast<std::uint64_t>(latent_dim)));
        labels[static_cast<std::size_t>(off + r)] = lab;
        z2[static_cast<std::size_t>(r * latent_dim + lab)] += static_cast<T>(cfg.delta);
      }
      NoGradGuard ng;
      auto x1 = g(Tensor<T>::from_data({b, latent_dim}, z1), false);
      auto x2 = g(Tensor<T>::from_data({b, latent_dim}, z2), false);
      if (x1.numel() != b * px) {
        throw std::invalid_argument("vp generator output size does not match resolution");
      }
      const auto& v1 = x1.value();
      const auto& v2 = x2.value();
      for (std::int64_t e = 0; e < b * px; ++e) {
        diffs[static_cast<std::size_t>(off * px + e)] = v2[static_cast<std::size_t>(e)] -
                                                        v1[static_cast<std::size_t>(e)];
      }
    }

    const std::int64_t n_train = (cfg.n_pairs * 8) / 10;
    const std::int64_t n_eval = cfg.n_pairs - n_train;

    detail::DiffClassifier<T> clf(resolution, latent_dim, rng);
    Adam<T> opt(clf.parameters(), static_cast<T>(cfg.lr));

    std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    auto gather = [&](const std::vector<std::int64_t>& idx, std::int64_t from, std::int64_t count) {
      std::vector<T> xb(static_cast<std::size_t>(count * px));
      std::vector<std::int64_t> yb(static_cast<std::size_t>(count));
      for (std::int64_t r = 0; r < count; ++r) {
        std::int64_t src = idx.empty() ? from + r : idx[static_cast<std::size_t>(from + r)];
        std::copy_n(diffs.begin() + src * px, px, xb.begin() + r * px);
        yb[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(src)];
      }
      return std::pair(Tensor<T>::from_data({count, 1, resolution, resolution}, std::move(xb)),
                       std::move(yb));
    };

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::int64_t off = 0; off < n_train; off += cfg.batch) {
        std::int64_t b = std::min(cfg.batch, n_train - off);
        auto [xb, yb] = gather(order, off, b);
        opt.zero_grad();
        auto loss = cross_entropy_logits(clf.forward(xb), yb);
        double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) {
          throw std::runtime_error("vp classifier diverged: non-finite loss at epoch " +
                                   std::to_string(epoch + 1));
        }
        loss.backward();
        opt.step();
      }
    }

    std::int64_t correct = 0;
    for (std::int64_t off = 0; off < n_eval; off += cfg.batch) {
      std::int64_t b = std::min(cfg.batch, n_eval - off);
      auto [xb, yb] = gather({}, n_train + off, b);
      NoGradGuard ng;
      auto logits = clf.forward(xb);
      const auto& lv = logits.value();
      for (std::int64_t r = 0; r < b; ++r) {
        const T* row = lv.data() + r * latent_dim;
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < latent_dim; ++c) {
          if (row[c] > row[best]) best = c;
        }
        if (best == yb[static_cast<std::size_t>(r)]) ++correct;
      }
    }
    result.per_repeat.push_back(static_cast<double>(correct) / static_cast<double>(n_eval));
  }

  double mean = 0;
  for (double a : result.per_repeat) mean += a;
  mean /= static_cast<double>(result.per_repeat.size());
  double var = 0;
  for (double a : result.per_repeat) var += (a - mean) * (a - mean);
  result.accuracy = mean;
  result.std_dev = result.per_repeat.size() > 1
                       ? std::sqrt(var / static_cast<double>(result.per_repeat.size() - 1))
                       : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Activeness: how strongly each latent dimension moves the output.
// ---------------------------------------------------------------------------

// For each dimension i: sweep z_i over n_steps values in [-2, 2] around n_z
// shared base latents, take the per-pixel variance over the sweep, then the
// mean over pixels and base latents. The base set is drawn once and shared
// across dimensions so scores are comparable.
template <typename T>
std::vector<double> activeness(const FlatFn<T>& g, std::int64_t latent_dim, std::int64_t n_z,
                               std::int64_t n_steps, std::uint64_t seed) {
  if (n_z < 32) throw std::invalid_argument("activeness n_z must be >= 32");
  if (n_steps < 8) throw std::invalid_argument("activeness n_steps must be >= 8");

  Rng rng(Rng::mix(seed, 0xAC7));
  std::vector<T> base(static_cast<std::size_t>(n_z * latent_dim));
  for (auto& v : base) v = static_cast<T>(rng.normal());

  std::vector<double> scores;
  for (std::int64_t dim = 0; dim < latent_dim; ++dim) {
    std::vector<T> rows(static_cast<std::size_t>(n_z * n_steps * latent_dim));
    for (std::int64_t b = 0; b < n_z; ++b) {
      for (std::int64_t s = 0; s < n_steps; ++s) {
        T* row = rows.data() + (b * n_steps + s) * latent_dim;
        std::copy_n(base.data() + b * latent_dim, latent_dim, row);
        row[dim] = static_cast<T>(-2.0 + 4.0 * static_cast<double>(s) /
                                             static_cast<double>(n_steps - 1));
      }
    }
    NoGradGuard ng;
    auto out = g(Tensor<T>::from_data({n_z * n_steps, latent_dim}, rows), false);
    std::int64_t px = out.numel() / (n_z * n_steps);
    const auto& ov = out.value();

    double score = 0;
    for (std::int64_t b = 0; b < n_z; ++b) {
      double pixel_var_sum = 0;
      for (std::int64_t p = 0; p < px; ++p) {
        // Shift by the first sweep value: variance is shift-invariant, and a
        // pixel untouched by the sweep comes out exactly zero.
        double v0 = static_cast<double>(ov[static_cast<std::size_t>(b * n_steps * px + p)]);
        double mean = 0, sq = 0;
        for (std::int64_t s = 0; s < n_steps; ++s) {
          double d = static_cast<double>(
                         ov[static_cast<std::size_t>((b * n_steps + s) * px + p)]) - v0;
          mean += d;
          sq += d * d;
        }
        mean /= static_cast<double>(n_steps);
        pixel_var_sum += sq / static_cast<double>(n_steps) - mean * mean;
      }
      score += pixel_var_sum / static_cast<double>(px);
    }
    scores.push_back(score / static_cast<double>(n_z));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Path length: pixel-space smoothness along random latent interpolations.
// ---------------------------------------------------------------------------

// Core statistic over explicit endpoint pairs and interpolation positions:
// mean of |G(lerp(z1,z2,t+eps)) - G(lerp(z1,z2,t))|^2 / eps^2.
template <typename T>
double path_length_on(const FlatFn<T>& g, const Tensor<T>& z1, const Tensor<T>& z2,
                      const std::vector<T>& ts, T eps) {
  if (!(eps > 0)) throw std::invalid_argument("path length eps must be > 0");
  std::int64_t n = z1.shape()[0], m = z1.shape()[1];
  if (z2.shape() != z1.shape() || static_cast<std::int64_t>(ts.size()) != n) {
    throw std::invalid_argument("path length endpoints and t values must align");
  }
  std::vector<T> za(static_cast<std::size_t>(n * m)), zb(za.size());
  const auto& a = z1.value();
  const auto& b = z2.value();
  for (std::int64_t r = 0; r < n; ++r) {
    T t = ts[static_cast<std::size_t>(r)];
    for (std::int64_t c = 0; c < m; ++c) {
      std::size_t k = static_cast<std::size_t>(r * m + c);
      T d = b[k] - a[k];
      za[k] = a[k] + d * t;
      zb[k] = a[k] + d * (t + eps);
    }
  }
  NoGradGuard ng;
  auto xa = g(Tensor<T>::from_data({n, m}, za), false);
  auto xb = g(Tensor<T>::from_data({n, m}, zb), false);
  std::int64_t px = xa.numel() / n;
  const auto& va = xa.value();
  const auto& vb = xb.value();
  double total = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    double ssq = 0;
    for (std::int64_t p = 0; p < px; ++p) {
      std::size_t k = static_cast<std::size_t>(r * px + p);
      double d = static_cast<double>(vb[k]) - static_cast<double>(va[k]);
      ssq += d * d;
    }
    total += ssq / (static_cast<double>(eps) * static_cast<double>(eps));
  }
  return total / static_cast<double>(n);
}

// Sampling wrapper: independent standard-normal endpoints, t uniform in
// [0, 1-eps].
template <typename T>
double path_length(const FlatFn<T>& g, std::int64_t latent_dim, std::int64_t n_paths,
                   double t_epsilon, std::uint64_t seed) {
  if (n_paths < 1) throw std::invalid_argument("path length n_paths must be >= 1");
  if (!(t_epsilon > 0) || t_epsilon >= 1) {
    throw std::invalid_argument("path length eps must be in (0, 1)");
  }
  Rng rng(Rng::mix(seed, 0x9A7));
  const std::int64_t chunk = 256;
  double total = 0;
  std::int64_t done = 0;
  while (done < n_paths) {
    std::int64_t n = std::min(chunk, n_paths - done);
    std::vector<T> a(static_cast<std::size_t>(n * latent_dim)), b(a.size());
    for (auto& v : a) v = static_cast<T>(rng.normal());
    for (auto& v : b) v = static_cast<T>(rng.normal());
    std::vector<T> ts(static_cast<std::size_t>(n));
    for (auto& t : ts) t = static_cast<T>(rng.uniform(0.0, 1.0 - t_epsilon));
    total += path_length_on<T>(g, Tensor<T>::from_data({n, latent_dim}, a),
                               Tensor<T>::from_data({n, latent_dim}, b), ts,
                               static_cast<T>(t_epsilon)) *
             static_cast<double>(n);
    done += n;
  }
  return total / static_cast<double>(n_paths);
}

// ---------------------------------------------------------------------------
// Combined report.
// ---------------------------------------------------------------------------

struct MetricsConfig {
  VpConfig vp;
  std::int64_t act_n_z = 64;
  std::int64_t act_n_steps = 9;
  std::int64_t path_n = 256;
  double path_eps = 1e-2;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double vp_accuracy = 0;
  double vp_std = 0;
  std::vector<double> activeness;
  double path_length = 0;  // pixel-space distances, not comparable to
                           // embedding-based path length numbers
  std::int64_t vp_pairs = 0;
  std::int64_t act_n_z = 0, act_n_steps = 0;
  std::int64_t path_n = 0;
  std::uint64_t seed = 0;

  std::string to_json() const {
    std::ostringstream os;
    os.precision(10);
    os << "{\n  \"vp_accuracy\": " << vp_accuracy << ",\n  \"vp_std\": " << vp_std
       << ",\n  \"activeness\": [";
    for (std::size_t i = 0; i < activeness.size(); ++i) {
      os << (i ? ", " : "") << activeness[i];
    }
    os << "],\n  \"path_length_pixel\": " << path_length << ",\n  \"vp_pairs\": " << vp_pairs
       << ",\n  \"activeness_n_z\": " << act_n_z << ",\n  \"activeness_n_steps\": " << act_n_steps
       << ",\n  \"path_n\": " << path_n << ",\n  \"seed\": " << seed << "\n}\n";
    return os.str();
  }
};

template <typename T>
MetricsReport evaluate_generator(Generator<T>& g, const MetricsConfig& cfg) {
  auto fn = image_of_isolated<T>(g);
  MetricsReport rep;
  auto vp = vp_score<T>(fn, g.config().latent_dim, g.config().resolution, cfg.vp, cfg.seed);
  rep.vp_accuracy = vp.accuracy;
  rep.vp_std = vp.std_dev;
  rep.activeness = activeness<T>(fn, g.config().latent_dim, cfg.act_n_z, cfg.act_n_steps,
                                 cfg.seed);
  rep.path_length = path_length<T>(fn, g.config().latent_dim, cfg.path_n, cfg.path_eps, cfg.seed);
  rep.vp_pairs = cfg.vp.n_pairs;
  rep.act_n_z = cfg.act_n_z;
  rep.act_n_steps = cfg.act_n_steps;
  rep.path_n = cfg.path_n;
  rep.seed = cfg.seed;
  return rep;
}

}  // namespace disent
