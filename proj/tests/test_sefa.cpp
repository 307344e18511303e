#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "disent/models.hpp"
#include "disent/sefa.hpp"

using namespace disent;
using Catch::Matchers::WithinAbs;

namespace {

// Independent oracle: two-sided cyclic Jacobi eigendecomposition of a
// symmetric matrix, returning eigenvalues (descending) and eigenvectors as
// columns of a row-major matrix.
void jacobi_eig(std::vector<double> a, std::int64_t n, std::vector<double>& evals,
                std::vector<double>& evecs) {
  evecs.assign(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) evecs[static_cast<std::size_t>(i * n + i)] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        off += std::abs(a[static_cast<std::size_t>(p * n + q)]);
      }
    }
    if (off < 1e-15) break;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        double apq = a[static_cast<std::size_t>(p * n + q)];
        if (std::abs(apq) < 1e-18) continue;
        double app = a[static_cast<std::size_t>(p * n + p)];
        double aqq = a[static_cast<std::size_t>(q * n + q)];
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (std::int64_t r = 0; r < n; ++r) {
          double arp = a[static_cast<std::size_t>(r * n + p)];
          double arq = a[static_cast<std::size_t>(r * n + q)];
          a[static_cast<std::size_t>(r * n + p)] = c * arp - s * arq;
          a[static_cast<std::size_t>(r * n + q)] = s * arp + c * arq;
        }
        for (std::int64_t col = 0; col < n; ++col) {
          double apc = a[static_cast<std::size_t>(p * n + col)];
          double aqc = a[static_cast<std::size_t>(q * n + col)];
          a[static_cast<std::size_t>(p * n + col)] = c * apc - s * aqc;
          a[static_cast<std::size_t>(q * n + col)] = s * apc + c * aqc;
        }
        for (std::int64_t r = 0; r < n; ++r) {
          double vrp = evecs[static_cast<std::size_t>(r * n + p)];
          double vrq = evecs[static_cast<std::size_t>(r * n + q)];
          evecs[static_cast<std::size_t>(r * n + p)] = c * vrp - s * vrq;
          evecs[static_cast<std::size_t>(r * n + q)] = s * vrp + c * vrq;
        }
      }
    }
  }
  evals.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * n + i)];
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t x, std::int64_t y) { return evals[static_cast<std::size_t>(x)] > evals[static_cast<std::size_t>(y)]; });
  std::vector<double> ev2(evals), vec2(evecs);
  for (std::int64_t j = 0; j < n; ++j) {
    evals[static_cast<std::size_t>(j)] = ev2[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
    for (std::int64_t r = 0; r < n; ++r) {
      evecs[static_cast<std::size_t>(r * n + j)] =
          vec2[static_cast<std::size_t>(r * n + order[static_cast<std::size_t>(j)])];
    }
  }
}

std::vector<double> random_matrix(Rng& rng, std::int64_t n, std::int64_t m) {
  std::vector<double> w(static_cast<std::size_t>(n * m));
  for (auto& v : w) v = rng.normal();
  return w;
}

double col_cos(const std::vector<double>& a, const std::vector<double>& b, std::int64_t rows,
               std::int64_t cols_a, std::int64_t cols_b, std::int64_t ja, std::int64_t jb) {
  double dot = 0, na = 0, nb = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    double x = a[static_cast<std::size_t>(r * cols_a + ja)];
    double y = b[static_cast<std::size_t>(r * cols_b + jb)];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("identity weight factorizes into unit singular values and basis directions") {
  std::vector<double> w = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  auto f = sefa_from_weight(w, 3, 3);
  for (double s : f.sigma) CHECK_THAT(s, WithinAbs(1.0, 1e-12));
  for (std::int64_t j = 0; j < 3; ++j) {
    auto d = f.direction(j);
    std::int64_t ones = 0;
    for (double v : d) {
      if (std::abs(v) > 0.5) {
        ++ones;
        CHECK_THAT(v, WithinAbs(1.0, 1e-12));  // sign convention: positive peak
      } else {
        CHECK_THAT(v, WithinAbs(0.0, 1e-12));
      }
    }
    CHECK(ones == 1);
  }
  CHECK(f.warning.empty());
}

TEST_CASE("diagonal weight yields ordered axes") {
  std::vector<double> w = {3, 0, 0, 1};
  auto f = sefa_from_weight(w, 2, 2);
  REQUIRE(f.sigma.size() == 2);
  CHECK_THAT(f.sigma[0], WithinAbs(3.0, 1e-12));
  CHECK_THAT(f.sigma[1], WithinAbs(1.0, 1e-12));
  auto d0 = f.direction(0), d1 = f.direction(1);
  CHECK_THAT(d0[0], WithinAbs(1.0, 1e-12));
  CHECK_THAT(d0[1], WithinAbs(0.0, 1e-12));
  CHECK_THAT(d1[0], WithinAbs(0.0, 1e-12));
  CHECK_THAT(d1[1], WithinAbs(1.0, 1e-12));
}

TEST_CASE("random tall weight satisfies the factorization invariants") {
  Rng rng(101);
  std::int64_t n = 64, m = 6;
  auto w = random_matrix(rng, n, m);
  auto f = sefa_from_weight(w, n, m);

  // Reconstruction.
  double num = 0, den = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < m; ++c) {
      double rec = 0;
      for (std::int64_t k = 0; k < m; ++k) {
        rec += f.u[static_cast<std::size_t>(r * m + k)] * f.sigma[static_cast<std::size_t>(k)] *
               f.v[static_cast<std::size_t>(c * m + k)];
      }
      double diff = rec - w[static_cast<std::size_t>(r * m + c)];
      num += diff * diff;
      den += w[static_cast<std::size_t>(r * m + c)] * w[static_cast<std::size_t>(r * m + c)];
    }
  }
  CHECK(std::sqrt(num / den) < 1e-6);

  // Orthonormality of V and of U's columns.
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double vv = 0, uu = 0;
      for (std::int64_t r = 0; r < m; ++r) {
        vv += f.v[static_cast<std::size_t>(r * m + i)] * f.v[static_cast<std::size_t>(r * m + j)];
      }
      for (std::int64_t r = 0; r < n; ++r) {
        uu += f.u[static_cast<std::size_t>(r * m + i)] * f.u[static_cast<std::size_t>(r * m + j)];
      }
      double target = i == j ? 1.0 : 0.0;
      CHECK_THAT(vv, WithinAbs(target, 1e-8));
      CHECK_THAT(uu, WithinAbs(target, 1e-8));
    }
  }

  // Ordering.
  for (std::size_t i = 1; i < f.sigma.size(); ++i) {
    CHECK(f.sigma[i - 1] >= f.sigma[i]);
    CHECK(f.sigma[i] >= 0);
  }
}

TEST_CASE("factorization agrees with the normal-equations eigendecomposition oracle") {
  Rng rng(103);
  std::int64_t n = 32, m = 5;
  auto w = random_matrix(rng, n, m);
  auto f = sefa_from_weight(w, n, m);

  std::vector<double> gram(static_cast<std::size_t>(m * m), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::int64_t r = 0; r < n; ++r) {
        s += w[static_cast<std::size_t>(r * m + i)] * w[static_cast<std::size_t>(r * m + j)];
      }
      gram[static_cast<std::size_t>(i * m + j)] = s;
    }
  }
  std::vector<double> evals, evecs;
  jacobi_eig(gram, m, evals, evecs);

  for (std::int64_t j = 0; j < m; ++j) {
    CHECK_THAT(f.sigma[static_cast<std::size_t>(j)] * f.sigma[static_cast<std::size_t>(j)],
               Catch::Matchers::WithinRel(evals[static_cast<std::size_t>(j)], 1e-8));
    double cosv = col_cos(f.v, evecs, m, m, m, j, j);
    CHECK(std::abs(cosv) > 1.0 - 1e-8);
  }
}

TEST_CASE("rank-deficient weight triggers a warning naming the near-zero spectrum") {
  // Third column is the sum of the first two.
  Rng rng(107);
  std::vector<double> w(15);
  for (std::int64_t r = 0; r < 5; ++r) {
    double a = rng.normal(), b = rng.normal();
    w[static_cast<std::size_t>(r * 3 + 0)] = a;
    w[static_cast<std::size_t>(r * 3 + 1)] = b;
    w[static_cast<std::size_t>(r * 3 + 2)] = a + b;
  }
  auto f = sefa_from_weight(w, 5, 3);
  REQUIRE_FALSE(f.warning.empty());
  CHECK_THAT(f.warning, Catch::Matchers::ContainsSubstring("rank-deficient"));
  REQUIRE(f.near_zero.size() == 1);
  CHECK(f.near_zero[0] < 1e-8);
}

TEST_CASE("change-of-basis identity holds on random weights") {
  Rng rng(109);
  std::int64_t n = 48, m = 6;
  auto w = random_matrix(rng, n, m);
  std::vector<std::vector<double>> zs;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(static_cast<std::size_t>(m));
    for (auto& v : z) v = rng.normal();
    zs.push_back(std::move(z));
  }
  auto rep = verify_proposition(w, n, m, zs);
  CHECK(rep.max_equivalence_error < 1e-10);
  CHECK(rep.max_offdiag < 1e-8 * rep.sigma_sq_max);
}

TEST_CASE("change-of-basis identity holds in 32-bit on a real generator") {
  GeneratorConfig cfg;
  cfg.latent_dim = 6;
  Generator<float> g(cfg);
  Rng rng(113);
  g.init(rng);
  std::vector<std::vector<float>> zs;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> z(6);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    zs.push_back(std::move(z));
  }
  auto rep = verify_proposition(g, zs);
  CHECK(rep.max_equivalence_error < 1e-5f);
}

TEST_CASE("zero weight reports exactly zero errors") {
  std::vector<double> w(12, 0.0);
  auto rep = verify_proposition(w, 4, 3, {{0.5, -1.0, 2.0}});
  CHECK(rep.max_equivalence_error == 0.0);
  CHECK(rep.max_offdiag == 0.0);
  auto f = sefa_from_weight(w, 4, 3);
  CHECK_FALSE(f.warning.empty());
}

TEST_CASE("directions absorb an orthogonal change of basis") {
  Rng rng(127);
  std::int64_t n = 8, m = 4;
  auto w = random_matrix(rng, n, m);
  // Random orthogonal Q from the right factor of another random matrix.
  auto q = svd_jacobi(random_matrix(rng, 6, 4), 6, 4).v;  // (4, 4)

  // W2 = W * Q^T.
  std::vector<double> w2(static_cast<std::size_t>(n * m), 0.0);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < m; ++c) {
      double s = 0;
      for (std::int64_t k = 0; k < m; ++k) {
        s += w[static_cast<std::size_t>(r * m + k)] * q[static_cast<std::size_t>(c * m + k)];
      }
      w2[static_cast<std::size_t>(r * m + c)] = s;
    }
  }
  auto f1 = sefa_from_weight(w, n, m);
  auto f2 = sefa_from_weight(w2, n, m);

  for (std::int64_t j = 0; j < m; ++j) {
    // Expected direction: Q * v1_j.
    std::vector<double> expect(static_cast<std::size_t>(m), 0.0);
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < m; ++k) {
        expect[static_cast<std::size_t>(r)] +=
            q[static_cast<std::size_t>(r * m + k)] * f1.v[static_cast<std::size_t>(k * m + j)];
      }
    }
    auto got = f2.direction(j);
    double dot = 0;
    for (std::int64_t r = 0; r < m; ++r) dot += expect[static_cast<std::size_t>(r)] * got[static_cast<std::size_t>(r)];
    CHECK(std::abs(dot) > 1.0 - 1e-8);
  }
}

TEST_CASE("traversal renders the requested frames") {
  GeneratorConfig cfg;
  cfg.latent_dim = 4;
  cfg.resolution = 8;
  cfg.base_channels = 4;
  Generator<float> g(cfg);
  Rng rng(131);
  g.init(rng);
  std::vector<float> z = {0.2f, -0.5f, 0.9f, 0.1f};
  std::vector<float> dir = {1.0f, 0.0f, 0.0f, 0.0f};

  auto strip = traverse_direction(g, z, dir, -1.0f, 1.0f, 3);
  REQUIRE(strip.shape() == Shape{3, 1, 8, 8});

  // Middle frame sits at t = 0, i.e. the unedited z.
  auto base = g.forward(Tensor<float>::from_data({1, 4}, z), false);
  for (std::int64_t i = 0; i < 64; ++i) {
    CHECK_THAT(strip.value()[static_cast<std::size_t>(64 + i)],
               WithinAbs(base.value()[static_cast<std::size_t>(i)], 1e-6));
  }

  CHECK_THROWS_WITH(traverse_direction(g, z, dir, 0.0f, 0.0f, 1),
                    Catch::Matchers::ContainsSubstring("steps"));
  std::vector<float> zero = {0, 0, 0, 0};
  CHECK_THROWS_WITH(traverse_direction(g, z, zero, -1.0f, 1.0f, 3),
                    Catch::Matchers::ContainsSubstring("zero direction"));
}

TEST_CASE("traversal along a null direction leaves every frame identical") {
  // Map with a known null space: third latent coordinate never reaches the
  // output.
  FlatFn<double> fn = [](const Tensor<double>& z, bool) {
    std::vector<double> w = {1, 2, 0, -1, 0.5, 0};  // (2, 3), third column zero
    return matmul(z, Tensor<double>::from_data({2, 3}, w), false, true);
  };
  std::vector<double> z = {0.4, -0.2, 0.7};
  std::vector<double> dir = {0, 0, 1};
  auto strip = traverse_direction(fn, z, dir, -2.0, 2.0, 5);
  REQUIRE(strip.shape() == Shape{5, 2});
  for (std::int64_t s = 1; s < 5; ++s) {
    for (std::int64_t c = 0; c < 2; ++c) {
      CHECK(strip.value()[static_cast<std::size_t>(s * 2 + c)] ==
            strip.value()[static_cast<std::size_t>(c)]);
    }
  }
}
