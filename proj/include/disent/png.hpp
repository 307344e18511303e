#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace disent {

namespace detail {

inline void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                       const std::vector<std::uint8_t>& data) {
  push_be32(out, static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  push_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

// Encodes an 8-bit grayscale image as a PNG byte stream (color type 0,
// bit depth 8, no interlace, filter 0 on every scanline).
inline std::vector<std::uint8_t> encode_gray_png(std::int64_t width, std::int64_t height,
                                                 const std::vector<std::uint8_t>& pixels) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("png: empty image");
  if (static_cast<std::int64_t>(pixels.size()) != width * height) {
    throw std::invalid_argument("png: pixel buffer size does not match dimensions");
  }

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

  std::vector<std::uint8_t> ihdr;
  detail::push_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::push_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::push_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height * (width + 1)));
  for (std::int64_t r = 0; r < height; ++r) {
    raw.push_back(0);  // per-scanline filter type
    raw.insert(raw.end(), pixels.begin() + r * width, pixels.begin() + (r + 1) * width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: zlib compression failed");
  }
  compressed.resize(bound);
  detail::push_chunk(out, "IDAT", compressed);
  detail::push_chunk(out, "IEND", {});
  return out;
}

inline void write_gray_png(const std::string& path, std::int64_t width, std::int64_t height,
                           const std::vector<std::uint8_t>& pixels) {
  auto bytes = encode_gray_png(width, height, pixels);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("png: write failed for " + path);
}

// Quantizes [0,1] values to 8-bit gray, clamping out-of-range inputs.
template <typename T>
std::vector<std::uint8_t> to_gray_bytes(const std::vector<T>& values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    T v = values[i];
    v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
    out[i] = static_cast<std::uint8_t>(v * T(255) + T(0.5));
  }
  return out;
}

}  // namespace disent
