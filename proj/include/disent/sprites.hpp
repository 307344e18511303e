#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Ground-truth generative factors of one sprite. The canvas is the unit
// square; pos_* are the sprite centroid in normalized coordinates with x
// growing rightward and y growing downward.
struct FactorSpec {
  int shape_id = 0;      // 0 square, 1 ellipse, 2 triangle
  double size = 0.6;     // fraction of the canvas, [0.3, 0.9]
  double rotation = 0.0; // radians about the centroid, [0, 2*pi)
  double pos_x = 0.5;    // [0.15, 0.85]
  double pos_y = 0.5;    // [0.15, 0.85]
};

inline constexpr double kTwoPi = 6.283185307179586;

inline void validate_factors(const FactorSpec& f) {
  if (f.shape_id < 0 || f.shape_id > 2) {
    throw std::invalid_argument("shape_id must be in {0,1,2}, got " + std::to_string(f.shape_id));
  }
  if (!(f.size >= 0.3 && f.size <= 0.9)) {
    throw std::invalid_argument("size must be in [0.3, 0.9], got " + std::to_string(f.size));
  }
  if (!(f.rotation >= 0.0 && f.rotation < kTwoPi)) {
    throw std::invalid_argument("rotation must be in [0, 2*pi), got " + std::to_string(f.rotation));
  }
  if (!(f.pos_x >= 0.15 && f.pos_x <= 0.85)) {
    throw std::invalid_argument("pos_x must be in [0.15, 0.85], got " + std::to_string(f.pos_x));
  }
  if (!(f.pos_y >= 0.15 && f.pos_y <= 0.85)) {
    throw std::invalid_argument("pos_y must be in [0.15, 0.85], got " + std::to_string(f.pos_y));
  }
}

namespace detail {

// Shape membership test in the sprite's local frame. The circumradius is
// size/6, which makes the largest sprite (size 0.9) reach exactly to the
// canvas edge at the extreme positions (0.15 margin), never past it.
struct SpriteGeometry {
  int shape_id;
  double radius;
  double cos_r, sin_r;
  double px, py;

  explicit SpriteGeometry(const FactorSpec& f)
      : shape_id(f.shape_id),
        radius(f.size / 6.0),
        cos_r(std::cos(f.rotation)),
        sin_r(std::sin(f.rotation)),
        px(f.pos_x),
        py(f.pos_y) {}

  bool contains(double cx, double cy) const {
    double dx = cx - px, dy = cy - py;
    double x = cos_r * dx + sin_r * dy;
    double y = -sin_r * dx + cos_r * dy;
    switch (shape_id) {
      case 0: {  // square with the same circumradius as the other shapes
        double half = radius / 1.4142135623730951;
        return std::abs(x) <= half && std::abs(y) <= half;
      }
      case 1: {  // ellipse, semi-axes radius x 0.6*radius
        double a = radius, b = 0.6 * radius;
        double u = x / a, v = y / b;
        return u * u + v * v <= 1.0;
      }
      default: {  // equilateral triangle, one vertex up at rotation 0
        double v0x = 0.0, v0y = -radius;
        double v1x = radius * 0.8660254037844387, v1y = radius * 0.5;
        double v2x = -v1x, v2y = v1y;
        auto edge_ok = [&](double ax, double ay, double bx, double by) {
          return (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0;
        };
        return edge_ok(v0x, v0y, v1x, v1y) && edge_ok(v1x, v1y, v2x, v2y) &&
               edge_ok(v2x, v2y, v0x, v0y);
      }
    }
  }
};

}  // namespace detail

// Rasterizes one sprite to a resolution x resolution grayscale image in
// [0, 1]. Coverage antialiasing with a 4x4 subsample grid per pixel: interior
// pixels are exactly 1, background exactly 0, boundary pixels in between.
inline std::vector<float> render(const FactorSpec& f, std::int64_t resolution) {
  if (resolution <= 0) throw std::invalid_argument("render: resolution must be positive");
  validate_factors(f);
  detail::SpriteGeometry geom(f);
  std::vector<float> img(static_cast<std::size_t>(resolution * resolution));
  double inv_res = 1.0 / static_cast<double>(resolution);
  for (std::int64_t r = 0; r < resolution; ++r) {
    for (std::int64_t c = 0; c < resolution; ++c) {
      int hits = 0;
      for (int si = 0; si < 4; ++si) {
        for (int sj = 0; sj < 4; ++sj) {
          double cx = (static_cast<double>(c) + (sj + 0.5) / 4.0) * inv_res;
          double cy = (static_cast<double>(r) + (si + 0.5) / 4.0) * inv_res;
          if (geom.contains(cx, cy)) ++hits;
        }
      }
      img[static_cast<std::size_t>(r * resolution + c)] = static_cast<float>(hits) / 16.0f;
    }
  }
  return img;
}

struct FactorSample {
  FactorSpec factors;
  std::vector<float> image;
};

// Draws factors independently and uniformly over their ranges. Each sample
// uses a seed derived from (seed, index), so the batch content is independent
// of evaluation order and batch partitioning.
inline std::vector<FactorSample> sample_batch(std::uint64_t seed, std::int64_t batch,
                                              std::int64_t resolution) {
  if (batch < 0) throw std::invalid_argument("sample_batch: negative batch");
  std::vector<FactorSample> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (std::int64_t i = 0; i < batch; ++i) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(i)));
    FactorSpec f;
    f.shape_id = static_cast<int>(rng.uniform_u64(3));
    f.size = rng.uniform(0.3, 0.9);
    f.rotation = rng.uniform(0.0, kTwoPi);
    f.pos_x = rng.uniform(0.15, 0.85);
    f.pos_y = rng.uniform(0.15, 0.85);
    out.push_back({f, render(f, resolution)});
  }
  return out;
}

struct Dataset {
  std::int64_t resolution = 0;
  std::vector<FactorSample> samples;
};

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
  put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
  const std::uint8_t* p;
  std::size_t left;
  const char* what;

  void need(std::size_t n) const {
    if (left < n) throw std::runtime_error(std::string(what) + ": truncated file");
  }
  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  double f64le() { return std::bit_cast<double>(u64le()); }
  void raw(std::uint8_t* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error(std::string(what) + ": cannot open " + path);
  auto size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error(std::string(what) + ": read failed for " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes,
                             const char* what) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(std::string(what) + ": cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error(std::string(what) + ": write failed for " + path);
}

}  // namespace detail

// Dataset file layout: "DFAC1", u32 resolution, u64 count, then per sample
// 5 little-endian f64 factors (shape_id, size, rotation, pos_x, pos_y)
// followed by resolution^2 row-major 8-bit pixels.
inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::vector<std::uint8_t> out{'D', 'F', 'A', 'C', '1'};
  detail::put_u32le(out, static_cast<std::uint32_t>(ds.resolution));
  detail::put_u64le(out, static_cast<std::uint64_t>(ds.samples.size()));
  std::size_t npix = static_cast<std::size_t>(ds.resolution * ds.resolution);
  for (const auto& s : ds.samples) {
    if (s.image.size() != npix) throw std::invalid_argument("save_dataset: image size mismatch");
    detail::put_f64le(out, static_cast<double>(s.factors.shape_id));
    detail::put_f64le(out, s.factors.size);
    detail::put_f64le(out, s.factors.rotation);
    detail::put_f64le(out, s.factors.pos_x);
    detail::put_f64le(out, s.factors.pos_y);
    for (float v : s.image) {
      float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      out.push_back(static_cast<std::uint8_t>(c * 255.f + 0.5f));
    }
  }
  detail::write_file_bytes(path, out, "save_dataset");
}

inline Dataset load_dataset(const std::string& path) {
  auto bytes = detail::read_file_bytes(path, "load_dataset");
  detail::ByteReader r{bytes.data(), bytes.size(), "load_dataset"};
  std::uint8_t magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, "DFAC1", 5) != 0) {
    throw std::runtime_error("load_dataset: " + path + " is not a dataset file (bad magic)");
  }
  Dataset ds;
  ds.resolution = static_cast<std::int64_t>(r.u32le());
  if (ds.resolution <= 0) throw std::runtime_error("load_dataset: bad resolution");
  std::uint64_t count = r.u64le();
  std::size_t npix = static_cast<std::size_t>(ds.resolution * ds.resolution);
  ds.samples.reserve(count);
  std::vector<std::uint8_t> pix(npix);
  for (std::uint64_t i = 0; i < count; ++i) {
    FactorSample s;
    s.factors.shape_id = static_cast<int>(r.f64le());
    s.factors.size = r.f64le();
    s.factors.rotation = r.f64le();
    s.factors.pos_x = r.f64le();
    s.factors.pos_y = r.f64le();
    validate_factors(s.factors);
    r.raw(pix.data(), npix);
    s.image.resize(npix);
    for (std::size_t j = 0; j < npix; ++j) s.image[j] = static_cast<float>(pix[j]) / 255.f;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Stacks dataset images by index into a (B, 1, H, W) tensor.
template <typename T>
Tensor<T> images_to_tensor(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  std::int64_t res = ds.resolution;
  std::vector<T> data;
  data.reserve(indices.size() * static_cast<std::size_t>(res * res));
  for (auto idx : indices) {
    if (idx < 0 || idx >= static_cast<std::int64_t>(ds.samples.size())) {
      throw std::invalid_argument("images_to_tensor: index out of range");
    }
    for (float v : ds.samples[static_cast<std::size_t>(idx)].image) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from_data({static_cast<std::int64_t>(indices.size()), 1, res, res},
                              std::move(data));
}

// 8-bit grid of the first samples, for a quick visual check of a dataset.
struct GrayImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;
};

inline GrayImage contact_sheet(const Dataset& ds, std::int64_t max_samples = 64,
                               std::int64_t cols = 8) {
  std::int64_t n = std::min<std::int64_t>(max_samples, static_cast<std::int64_t>(ds.samples.size()));
  if (n == 0) throw std::invalid_argument("contact_sheet: empty dataset");
  std::int64_t rows = (n + cols - 1) / cols;
  std::int64_t res = ds.resolution;
  GrayImage img;
  img.width = cols * res;
  img.height = rows * res;
  img.pixels.assign(static_cast<std::size_t>(img.width * img.height), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t gr = i / cols, gc = i % cols;
    const auto& src = ds.samples[static_cast<std::size_t>(i)].image;
    for (std::int64_t y = 0; y < res; ++y) {
      for (std::int64_t x = 0; x < res; ++x) {
        float v = src[static_cast<std::size_t>(y * res + x)];
        img.pixels[static_cast<std::size_t>((gr * res + y) * img.width + gc * res + x)] =
            static_cast<std::uint8_t>((v < 0.f ? 0.f : (v > 1.f ? 1.f : v)) * 255.f + 0.5f);
      }
    }
  }
  return img;
}

}  // namespace disent
