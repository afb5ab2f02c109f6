// Copyright 2026 The ecp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ecp::detail {

// Little-endian scalar encoding, byte by byte, so files are identical on any
// host.

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline void write_u32_le(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float f32_from_le(const unsigned char* p) {
  const std::uint32_t bits = read_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline void f32_to_le(float f, unsigned char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  p[0] = bits & 0xff;
  p[1] = (bits >> 8) & 0xff;
  p[2] = (bits >> 16) & 0xff;
  p[3] = (bits >> 24) & 0xff;
}

inline void write_f64_le(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (bits >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace ecp::detail
