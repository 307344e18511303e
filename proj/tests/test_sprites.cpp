#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "disent/sprites.hpp"

using Catch::Matchers::ContainsSubstring;
using disent::Dataset;
using disent::FactorSpec;

namespace {

double coverage_sum(const std::vector<float>& img) {
  double s = 0;
  for (float v : img) s += v;
  return s;
}

// Foreground centroid in normalized coordinates, coverage-weighted.
std::pair<double, double> centroid(const std::vector<float>& img, std::int64_t res) {
  double sx = 0, sy = 0, m = 0;
  for (std::int64_t r = 0; r < res; ++r) {
    for (std::int64_t c = 0; c < res; ++c) {
      double v = img[static_cast<std::size_t>(r * res + c)];
      m += v;
      sx += v * (static_cast<double>(c) + 0.5) / static_cast<double>(res);
      sy += v * (static_cast<double>(r) + 0.5) / static_cast<double>(res);
    }
  }
  return {sx / m, sy / m};
}

const char* kTmpData = "/tmp/disent_test_dataset.bin";

}  // namespace

TEST_CASE("factor validation names the offending field") {
  FactorSpec f;
  f.shape_id = 3;
  REQUIRE_THROWS_WITH(disent::validate_factors(f), ContainsSubstring("shape_id"));
  f = FactorSpec{};
  f.size = 0.2;
  REQUIRE_THROWS_WITH(disent::validate_factors(f), ContainsSubstring("size"));
  f = FactorSpec{};
  f.rotation = 7.0;
  REQUIRE_THROWS_WITH(disent::validate_factors(f), ContainsSubstring("rotation"));
  f = FactorSpec{};
  f.pos_x = 0.1;
  REQUIRE_THROWS_WITH(disent::validate_factors(f), ContainsSubstring("pos_x"));
  f = FactorSpec{};
  f.pos_y = 0.9;
  REQUIRE_THROWS_WITH(disent::validate_factors(f), ContainsSubstring("pos_y"));
  REQUIRE_NOTHROW(disent::validate_factors(FactorSpec{}));
}

TEST_CASE("render is deterministic and bounded") {
  FactorSpec f{1, 0.7, 1.2, 0.4, 0.6};
  auto a = disent::render(f, 32);
  auto b = disent::render(f, 32);
  REQUIRE(a == b);
  bool has_interior = false, has_background = false, has_boundary = false;
  for (float v : a) {
    REQUIRE(v >= 0.f);
    REQUIRE(v <= 1.f);
    has_interior = has_interior || v == 1.f;
    has_background = has_background || v == 0.f;
    has_boundary = has_boundary || (v > 0.f && v < 1.f);
  }
  REQUIRE(has_interior);
  REQUIRE(has_background);
  REQUIRE(has_boundary);
}

TEST_CASE("centered square sits at the canvas center") {
  FactorSpec f{0, 0.5, 0.0, 0.5, 0.5};
  auto img = disent::render(f, 32);
  auto [cx, cy] = centroid(img, 32);
  REQUIRE(cx == Catch::Approx(0.5).margin(1.0 / 32));
  REQUIRE(cy == Catch::Approx(0.5).margin(1.0 / 32));
}

TEST_CASE("centroid tracks pos for every shape") {
  for (int shape = 0; shape < 3; ++shape) {
    FactorSpec f{shape, 0.6, 0.8, 0.3, 0.7};
    auto img = disent::render(f, 32);
    auto [cx, cy] = centroid(img, 32);
    INFO("shape " << shape);
    REQUIRE(cx == Catch::Approx(0.3).margin(1.0 / 32));
    REQUIRE(cy == Catch::Approx(0.7).margin(1.0 / 32));
  }
}

TEST_CASE("square has four-fold rotational symmetry") {
  FactorSpec base{0, 0.5, 0.0, 0.5, 0.5};
  FactorSpec quarter = base;
  quarter.rotation = 1.5707963267948966;  // pi/2
  REQUIRE(disent::render(base, 32) == disent::render(quarter, 32));
}

TEST_CASE("triangle has no quarter-turn symmetry") {
  FactorSpec base{2, 0.6, 0.0, 0.5, 0.5};
  FactorSpec quarter = base;
  quarter.rotation = 1.5707963267948966;
  REQUIRE(disent::render(base, 32) != disent::render(quarter, 32));
}

TEST_CASE("ellipse area scales with the square of size") {
  FactorSpec big{1, 0.6, 0.0, 0.5, 0.5};
  FactorSpec small{1, 0.3, 0.0, 0.5, 0.5};
  double ratio = coverage_sum(disent::render(big, 64)) / coverage_sum(disent::render(small, 64));
  REQUIRE(ratio == Catch::Approx(4.0).epsilon(0.15));
}

TEST_CASE("extreme specs keep the full sprite on canvas") {
  // Coverage mass at the extreme corner positions must match the mass at the
  // center for the same spec; clipping would lose mass at the corners. The
  // center mass itself must sit near the analytic shape area.
  const double res2 = 64.0 * 64.0;
  for (int shape = 0; shape < 3; ++shape) {
    double r = 0.9 / 6.0;
    double area;
    if (shape == 0) {
      double side = r * 1.4142135623730951;
      area = side * side;
    } else if (shape == 1) {
      area = 3.14159265358979 * r * (0.6 * r);
    } else {
      area = 3.0 * std::sqrt(3.0) / 4.0 * r * r;
    }
    for (double rot : {0.0, 0.7, 2.2, 4.4}) {
      FactorSpec center{shape, 0.9, rot, 0.5, 0.5};
      double center_mass = coverage_sum(disent::render(center, 64)) / res2;
      INFO("shape " << shape << " rot " << rot);
      REQUIRE(center_mass == Catch::Approx(area).epsilon(0.05));
      for (auto [px, py] : std::vector<std::pair<double, double>>{
               {0.15, 0.15}, {0.85, 0.15}, {0.15, 0.85}, {0.85, 0.85}}) {
        FactorSpec f{shape, 0.9, rot, px, py};
        double mass = coverage_sum(disent::render(f, 64)) / res2;
        INFO("pos " << px << "," << py);
        REQUIRE(mass == Catch::Approx(center_mass).epsilon(0.04));
      }
    }
  }
}

TEST_CASE("sample_batch is deterministic and order-independent") {
  auto a = disent::sample_batch(7, 4, 32);
  auto b = disent::sample_batch(7, 4, 32);
  REQUIRE(a.size() == 4);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(a[i].factors.shape_id == b[i].factors.shape_id);
    REQUIRE(a[i].factors.size == b[i].factors.size);
    REQUIRE(a[i].factors.rotation == b[i].factors.rotation);
    REQUIRE(a[i].factors.pos_x == b[i].factors.pos_x);
    REQUIRE(a[i].factors.pos_y == b[i].factors.pos_y);
    REQUIRE(a[i].image == b[i].image);
  }
  // a longer batch starts with the same samples
  auto c = disent::sample_batch(7, 8, 32);
  REQUIRE(c[3].factors.pos_x == a[3].factors.pos_x);
}

TEST_CASE("sampled factors are uniform and independent") {
  auto s = disent::sample_batch(123, 10000, 8);
  double mean_px = 0;
  std::vector<int> shape_counts(3, 0);
  for (const auto& x : s) {
    mean_px += x.factors.pos_x;
    ++shape_counts[static_cast<std::size_t>(x.factors.shape_id)];
  }
  mean_px /= 10000.0;
  REQUIRE(mean_px > 0.48);
  REQUIRE(mean_px < 0.52);
  for (int c : shape_counts) {
    REQUIRE(c >= 3000);
    REQUIRE(c <= 3700);
  }

  // pairwise correlations across all five factors
  std::vector<std::vector<double>> f(5, std::vector<double>(10000));
  for (std::size_t i = 0; i < 10000; ++i) {
    f[0][i] = s[i].factors.shape_id;
    f[1][i] = s[i].factors.size;
    f[2][i] = s[i].factors.rotation;
    f[3][i] = s[i].factors.pos_x;
    f[4][i] = s[i].factors.pos_y;
  }
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < 10000; ++i) {
        ma += f[a][i];
        mb += f[b][i];
      }
      ma /= 10000;
      mb /= 10000;
      double cov = 0, va = 0, vb = 0;
      for (std::size_t i = 0; i < 10000; ++i) {
        cov += (f[a][i] - ma) * (f[b][i] - mb);
        va += (f[a][i] - ma) * (f[a][i] - ma);
        vb += (f[b][i] - mb) * (f[b][i] - mb);
      }
      double corr = cov / std::sqrt(va * vb);
      INFO("factors " << a << " and " << b);
      REQUIRE(std::abs(corr) < 0.05);
    }
  }
}

TEST_CASE("dataset file round-trips") {
  Dataset ds;
  ds.resolution = 16;
  for (const auto& s : disent::sample_batch(99, 5, 16)) ds.samples.push_back(s);
  disent::save_dataset(kTmpData, ds);
  auto back = disent::load_dataset(kTmpData);
  REQUIRE(back.resolution == 16);
  REQUIRE(back.samples.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(back.samples[i].factors.shape_id == ds.samples[i].factors.shape_id);
    REQUIRE(back.samples[i].factors.size == ds.samples[i].factors.size);
    REQUIRE(back.samples[i].factors.rotation == ds.samples[i].factors.rotation);
    REQUIRE(back.samples[i].factors.pos_x == ds.samples[i].factors.pos_x);
    REQUIRE(back.samples[i].factors.pos_y == ds.samples[i].factors.pos_y);
    for (std::size_t j = 0; j < back.samples[i].image.size(); ++j) {
      REQUIRE(back.samples[i].image[j] ==
              Catch::Approx(ds.samples[i].image[j]).margin(0.6 / 255.0));
    }
  }
  std::remove(kTmpData);
}

TEST_CASE("dataset loader rejects corrupt files") {
  {
    std::ofstream f(kTmpData, std::ios::binary);
    f << "NOTADATASET";
  }
  REQUIRE_THROWS_WITH(disent::load_dataset(kTmpData), ContainsSubstring("bad magic"));

  Dataset ds;
  ds.resolution = 8;
  for (const auto& s : disent::sample_batch(1, 3, 8)) ds.samples.push_back(s);
  disent::save_dataset(kTmpData, ds);
  auto bytes = disent::detail::read_file_bytes(kTmpData, "test");
  bytes.resize(bytes.size() - 20);
  disent::detail::write_file_bytes(kTmpData, bytes, "test");
  REQUIRE_THROWS_WITH(disent::load_dataset(kTmpData), ContainsSubstring("truncated"));
  std::remove(kTmpData);
}

TEST_CASE("images_to_tensor stacks the requested samples") {
  Dataset ds;
  ds.resolution = 8;
  for (const auto& s : disent::sample_batch(5, 4, 8)) ds.samples.push_back(s);
  auto t = disent::images_to_tensor<double>(ds, {2, 0});
  REQUIRE(t.shape() == disent::Shape{2, 1, 8, 8});
  REQUIRE(t.value()[0] == Catch::Approx(ds.samples[2].image[0]));
  REQUIRE(t.value()[64] == Catch::Approx(ds.samples[0].image[0]));
  REQUIRE_THROWS_AS(disent::images_to_tensor<double>(ds, {4}), std::invalid_argument);
}

TEST_CASE("contact sheet tiles samples into a grid") {
  Dataset ds;
  ds.resolution = 16;
  for (const auto& s : disent::sample_batch(11, 10, 16)) ds.samples.push_back(s);
  auto sheet = disent::contact_sheet(ds, 64, 8);
  REQUIRE(sheet.width == 8 * 16);
  REQUIRE(sheet.height == 2 * 16);
  // first tile's first row matches the first sample
  for (int x = 0; x < 16; ++x) {
    auto expect = static_cast<std::uint8_t>(
        std::min(1.f, std::max(0.f, ds.samples[0].image[static_cast<std::size_t>(x)])) * 255.f +
        0.5f);
    REQUIRE(sheet.pixels[static_cast<std::size_t>(x)] == expect);
  }
}
