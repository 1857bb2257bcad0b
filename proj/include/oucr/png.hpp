#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "oucr/common.hpp"

// Dependency-free 8-bit grayscale PNG writer (stored deflate blocks). Only
// used for human-inspection previews; nothing downstream reads these files.

namespace oucr {
namespace pngdetail {

inline void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(char((v >> 24) & 0xFF));
  out.push_back(char((v >> 16) & 0xFF));
  out.push_back(char((v >> 8) & 0xFF));
  out.push_back(char(v & 0xFF));
}

inline std::uint32_t crc32(const std::string& bytes) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t n = 0; n < 256; ++n) {
      std::uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[n] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : bytes) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const std::string& bytes) {
  std::uint32_t a = 1, b = 0;
  for (unsigned char ch : bytes) {
    a = (a + ch) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void put_chunk(std::string& out, const char type[5], const std::string& data) {
  put_u32be(out, std::uint32_t(data.size()));
  std::string td = std::string(type, 4) + data;
  out += td;
  put_u32be(out, crc32(td));
}

}  // namespace pngdetail

inline void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                            int w, int h) {
  if (std::int64_t(pixels.size()) != std::int64_t(w) * h)
    throw ShapeError("png: pixel count does not match " + std::to_string(w) + "x" +
                     std::to_string(h));
  std::string raw;
  raw.reserve(std::size_t(h) * (std::size_t(w) + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(char(0));  // filter type none
    raw.append(reinterpret_cast<const char*>(pixels.data()) + std::size_t(y) * std::size_t(w),
               std::size_t(w));
  }
  std::string z;
  z.push_back(char(0x78));
  z.push_back(char(0x01));
  std::size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    const std::size_t n = std::min<std::size_t>(65535, raw.size() - pos);
    const bool final = pos + n == raw.size();
    z.push_back(char(final ? 1 : 0));
    z.push_back(char(n & 0xFF));
    z.push_back(char((n >> 8) & 0xFF));
    z.push_back(char(~n & 0xFF));
    z.push_back(char((~n >> 8) & 0xFF));
    z.append(raw, pos, n);
    pos += n;
    if (raw.empty()) break;
  }
  pngdetail::put_u32be(z, pngdetail::adler32(raw));

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  pngdetail::put_u32be(ihdr, std::uint32_t(w));
  pngdetail::put_u32be(ihdr, std::uint32_t(h));
  ihdr.push_back(char(8));  // bit depth
  ihdr.push_back(char(0));  // grayscale
  ihdr.push_back(char(0));
  ihdr.push_back(char(0));
  ihdr.push_back(char(0));
  pngdetail::put_chunk(png, "IHDR", ihdr);
  pngdetail::put_chunk(png, "IDAT", z);
  pngdetail::put_chunk(png, "IEND", "");
  write_file_bytes(path, png);
}

/// Magnitude image normalized to its own maximum, for eyeballing only.
inline void write_magnitude_png(const std::string& path, const std::vector<double>& mag, int w,
                                int h) {
  double mx = 0.0;
  for (double v : mag) mx = std::max(mx, v);
  std::vector<std::uint8_t> px(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    const double v = mx > 0 ? mag[i] / mx : 0.0;
    px[i] = std::uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  }
  write_png_gray8(path, px, w, h);
}

}  // namespace oucr
