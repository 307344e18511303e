#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "disent/ops.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

using disent::Shape;
using disent::Tensor;
namespace d = disent;

namespace {

Tensor<double> rand_t(d::Rng& rng, Shape s, double scale = 1.0, bool rg = false) {
  std::vector<double> v(static_cast<std::size_t>(d::shape_numel(s)));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor<double>::from_data(std::move(s), std::move(v), rg);
}

void check_close(const std::vector<double>& got, const std::vector<double>& want,
                 double margin = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    INFO("index " << i);
    CHECK(got[i] == Catch::Approx(want[i]).margin(margin));
  }
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 2}, {10, 20, 30, 40});
  check_close(d::add(a, b).value(), {11, 22, 33, 44});
  check_close(d::sub(a, b).value(), {-9, -18, -27, -36});
  check_close(d::mul(a, b).value(), {10, 40, 90, 160});
  check_close(d::neg(a).value(), {-1, -2, -3, -4});
  check_close(d::add_scalar(a, 0.5).value(), {1.5, 2.5, 3.5, 4.5});
  check_close(d::mul_scalar(a, -2.0).value(), {-2, -4, -6, -8});

  auto c = Tensor<double>::from_data({4}, {1, 2, 3, 4});
  REQUIRE_THROWS_AS(d::add(a, c), std::invalid_argument);
}

TEST_CASE("activation values") {
  auto x = Tensor<double>::from_data({5}, {0.0, 2.0, -2.0, 50.0, -50.0});
  check_close(d::leaky_relu(x, 0.1).value(), {0.0, 2.0, -0.2, 50.0, -5.0});
  check_close(d::sigmoid_t(x).value(),
              {0.5, 0.8807970779778823, 0.11920292202211755, 1.0, 1.9287498479639178e-22},
              1e-15);
  check_close(d::tanh_t(x).value(),
              {0.0, 0.9640275800758169, -0.9640275800758169, 1.0, -1.0}, 1e-15);
  auto sp = d::softplus_t(x).value();
  CHECK(sp[0] == Catch::Approx(0.6931471805599453).margin(1e-15));
  CHECK(sp[1] == Catch::Approx(2.1269280110429727).margin(1e-12));
  CHECK(sp[2] == Catch::Approx(0.12692801104297263).margin(1e-12));
  CHECK(sp[3] == Catch::Approx(50.0).margin(1e-12));
  CHECK(sp[4] <= 2e-22);
}

TEST_CASE("reductions") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 5, 3, -2, 0, 4});
  CHECK(d::sum_all(x).item() == Catch::Approx(11.0));
  CHECK(d::mean_all(x).item() == Catch::Approx(11.0 / 6.0));
  check_close(d::row_sum(x).value(), {9, 2});
  check_close(d::row_max(x).value(), {5, 4});
}

TEST_CASE("reshape, slicing, concatenation") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = d::reshape(x, {3, 2});
  REQUIRE(r.shape() == Shape{3, 2});
  check_close(r.value(), {1, 2, 3, 4, 5, 6});
  REQUIRE_THROWS_AS(d::reshape(x, {4, 2}), std::invalid_argument);

  auto s = d::slice_rows(x, 1, 1);
  REQUIRE(s.shape() == Shape{1, 3});
  check_close(s.value(), {4, 5, 6});
  REQUIRE_THROWS_AS(d::slice_rows(x, 1, 2), std::invalid_argument);

  auto c = d::concat_rows<double>({x, s});
  REQUIRE(c.shape() == Shape{3, 3});
  check_close(c.value(), {1, 2, 3, 4, 5, 6, 4, 5, 6});

  auto t = d::tile_rows(s, 3);
  REQUIRE(t.shape() == Shape{3, 3});
  check_close(t.value(), {4, 5, 6, 4, 5, 6, 4, 5, 6});
}

TEST_CASE("matmul against hand values and transpose views") {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = d::matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 2});
  check_close(c.value(), {58, 64, 139, 154});

  auto at = Tensor<double>::from_data({3, 2}, {1, 4, 2, 5, 3, 6});
  auto bt = Tensor<double>::from_data({2, 3}, {7, 9, 11, 8, 10, 12});
  check_close(d::matmul(at, b, true, false).value(), {58, 64, 139, 154});
  check_close(d::matmul(a, bt, false, true).value(), {58, 64, 139, 154});
  check_close(d::matmul(at, bt, true, true).value(), {58, 64, 139, 154});

  REQUIRE_THROWS_AS(d::matmul(a, a), std::invalid_argument);
}

TEST_CASE("linear layer") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 0, 2, -1, 1, 0});
  auto w = Tensor<double>::from_data({2, 3}, {1, 2, 3, 0, 1, -1});
  auto b = Tensor<double>::from_data({2}, {0.5, -0.5});
  auto y = d::linear(x, w, b);
  REQUIRE(y.shape() == Shape{2, 2});
  check_close(y.value(), {7.5, -2.5, 1.5, 0.5});
}

TEST_CASE("conv2d against hand values") {
  auto x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto w = Tensor<double>::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
  auto b = Tensor<double>::from_data({1}, {0.5});
  auto y = d::conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  check_close(y.value(), {12.5, 16.5, 24.5, 28.5});
}

TEST_CASE("conv2d with padding") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({1}, {0.0});
  auto y = d::conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  check_close(y.value(), {4, 11, 6, 14, 30, 14, 6, 11, 4});
}

TEST_CASE("conv2d strided output size") {
  d::Rng rng(3);
  auto x = rand_t(rng, {2, 3, 32, 32});
  auto w = rand_t(rng, {8, 3, 4, 4});
  auto b = rand_t(rng, {8});
  auto y = d::conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{2, 8, 16, 16});
}

TEST_CASE("conv2d_transpose against hand values") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({1}, {0.25});
  auto y = d::conv2d_transpose(x, w, b, 2, 0);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  check_close(y.value(), {1.25, 2.25, 2.25, 4.25, 3.25, 4.25, 6.25, 8.25, 3.25, 6.25, 4.25, 8.25,
                          9.25, 12.25, 12.25, 16.25});
}

TEST_CASE("conv2d_transpose doubles spatial size with k4 s2 p1") {
  d::Rng rng(4);
  auto x = rand_t(rng, {2, 6, 4, 4});
  auto w = rand_t(rng, {6, 3, 4, 4});
  auto b = rand_t(rng, {3});
  auto y = d::conv2d_transpose(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{2, 3, 8, 8});
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  // <conv(x, w), y> == <x, deconv(y, w)> with the weight tensor shared and
  // its leading dims read as (out, in) by conv and (in, out) by deconv.
  d::Rng rng(12);
  auto x = rand_t(rng, {2, 3, 5, 5});
  auto w = rand_t(rng, {4, 3, 3, 3});
  auto zero_c = Tensor<double>::from_data({4}, std::vector<double>(4, 0.0));
  auto zero_d = Tensor<double>::from_data({3}, std::vector<double>(3, 0.0));
  for (auto [s, p] : std::vector<std::pair<int, int>>{{1, 0}, {2, 1}, {1, 1}}) {
    auto cx = d::conv2d(x, w, zero_c, s, p);
    auto y = rand_t(rng, cx.shape());
    double lhs = d::sum_all(d::mul(cx, y)).item();
    double rhs = d::sum_all(d::mul(x, d::conv2d_transpose(y, w, zero_d, s, p))).item();
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("batchnorm training normalizes and updates running stats") {
  auto x = Tensor<double>::from_data({4, 1}, {1, 2, 3, 4});
  auto gamma = Tensor<double>::from_data({1}, {2.0});
  auto beta = Tensor<double>::from_data({1}, {1.0});
  auto rs = d::RunningStats<double>::make(1);
  rs.mean[0] = 0.0;
  rs.var[0] = 1.0;

  auto y = d::batchnorm(x, gamma, beta, rs, true, 0.9, 1e-5);
  check_close(y.value(), {-1.683272, 0.105576, 1.894424, 3.683272}, 1e-4);
  CHECK(rs.mean[0] == Catch::Approx(0.25).margin(1e-12));
  CHECK(rs.var[0] == Catch::Approx(1.025).margin(1e-12));

  auto ye = d::batchnorm(x, gamma, beta, rs, false, 0.9, 1e-5);
  CHECK(ye.value()[0] == Catch::Approx(2.4815852).margin(1e-4));
  CHECK(ye.value()[3] == Catch::Approx(8.4079258).margin(1e-4));
  // eval mode must not move the running stats
  CHECK(rs.mean[0] == Catch::Approx(0.25).margin(1e-12));
  CHECK(rs.var[0] == Catch::Approx(1.025).margin(1e-12));
}

TEST_CASE("batchnorm training output has zero mean and unit variance per channel") {
  d::Rng rng(55);
  auto x = rand_t(rng, {8, 3, 4, 4}, 2.5);
  auto gamma = Tensor<double>::from_data({3}, {1, 1, 1});
  auto beta = Tensor<double>::from_data({3}, {0, 0, 0});
  auto rs = d::RunningStats<double>::make(3);
  auto y = d::batchnorm(x, gamma, beta, rs, true);
  std::int64_t spatial = 16, batch = 8, cdim = 3;
  for (std::int64_t c = 0; c < cdim; ++c) {
    double m = 0, v = 0;
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < spatial; ++i) m += y.value()[(b * cdim + c) * spatial + i];
    }
    m /= static_cast<double>(batch * spatial);
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < spatial; ++i) {
        double t = y.value()[(b * cdim + c) * spatial + i] - m;
        v += t * t;
      }
    }
    v /= static_cast<double>(batch * spatial);
    CHECK(m == Catch::Approx(0.0).margin(1e-10));
    CHECK(v == Catch::Approx(1.0).margin(1e-3));
  }
}

TEST_CASE("cross entropy against hand values") {
  auto uniform = Tensor<double>::from_data({1, 3}, {0, 0, 0});
  CHECK(d::cross_entropy_logits(uniform, {0}).item() ==
        Catch::Approx(1.0986122886681098).margin(1e-12));

  auto sharp = Tensor<double>::from_data({2, 2}, {100, 0, 0, 100});
  CHECK(d::cross_entropy_logits(sharp, {0, 1}).item() == Catch::Approx(0.0).margin(1e-12));

  auto two = Tensor<double>::from_data({1, 2}, {0.0, std::log(3.0)});
  CHECK(d::cross_entropy_logits(two, {0}).item() ==
        Catch::Approx(1.3862943611198906).margin(1e-12));
  CHECK(d::cross_entropy_logits(two, {1}).item() ==
        Catch::Approx(0.2876820724517809).margin(1e-12));

  REQUIRE_THROWS_AS(d::cross_entropy_logits(two, {2}), std::invalid_argument);
  REQUIRE_THROWS_AS(d::cross_entropy_logits(two, {0, 1}), std::invalid_argument);
}

TEST_CASE("float instantiation works end to end") {
  auto x = Tensor<float>::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto w = Tensor<float>::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
  auto y = d::matmul(x, w);
  REQUIRE(y.value() == std::vector<float>{1.f, 2.f, 3.f, 4.f});
}
