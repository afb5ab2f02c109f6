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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace ecp {

// 64-bit FNV-1a; used to derive split assignments and rng substreams from
// string ids. Fixed algorithm so results are identical across platforms.
inline std::uint64_t stable_hash64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Deterministic generator: the mt19937_64 engine is fully specified by the
// standard, and all draws below avoid std distributions (whose output is
// implementation-defined). Same seed => same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // [0, n); multiply-shift bounding, deterministic
  std::uint64_t bounded(std::uint64_t n) {
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller; draws two uniforms per call, no cached spare
  double normal() {
    double u1 = uniform01();
    const double u2 = uniform01();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent deterministic stream from this rng's seed.
  Rng substream(std::uint64_t key) const { return Rng(mix64(seed_, key)); }
  Rng substream(std::string_view name, std::uint64_t key = 0) const {
    return Rng(mix64(mix64(seed_, stable_hash64(name)), key));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ecp
