// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gwm/core/tensor.hpp"

namespace gwm::util {

// Minimal PNG writer: zlib stream with stored (uncompressed) deflate blocks.
// Big files, zero dependencies; fine for qualitative dumps.
namespace png_detail {

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline void chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(out.data() + start, out.size() - start) ^ 0xffffffffu);
}

}  // namespace png_detail

// channels: 1 (gray) or 3 (rgb); data is row-major h*w*channels bytes.
inline void write_png(const std::string& path, const uint8_t* data, int w, int h, int channels) {
  check(channels == 1 || channels == 3, "write_png: channels must be 1 or 3");
  using namespace png_detail;
  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(w));
  put_u32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);               // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk(out, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * channels));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), data + static_cast<size_t>(y) * w * channels,
               data + static_cast<size_t>(y + 1) * w * channels);
  }

  // zlib: 0x78 0x01 + stored deflate blocks (max 65535 bytes each) + adler32
  std::vector<uint8_t> z = {0x78, 0x01};
  size_t pos = 0;
  while (pos < raw.size()) {
    size_t n = std::min<size_t>(65535, raw.size() - pos);
    bool last = pos + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(n & 0xff));
    z.push_back(static_cast<uint8_t>(n >> 8));
    z.push_back(static_cast<uint8_t>(~n & 0xff));
    z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + n));
    pos += n;
  }
  put_u32(z, adler32(raw.data(), raw.size()));
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "write_png: cannot open " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  check(os.good(), "write_png: write failed " + path);
}

// Gray image from floats in [0,1].
inline void write_png_gray(const std::string& path, const float* data, int w, int h) {
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h);
  for (size_t i = 0; i < bytes.size(); ++i) {
    float v = data[i];
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    bytes[i] = static_cast<uint8_t>(v * 255.0f);
  }
  write_png(path, bytes.data(), w, h, 1);
}

}  // namespace gwm::util
