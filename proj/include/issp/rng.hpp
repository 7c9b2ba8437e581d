// Copyright 2025 The issp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace issp {

/// Deterministic splitmix64 generator.
///
/// Every stochastic choice in the library flows through this type so that a
/// run is reproducible bit-for-bit across platforms.  `counter()` reports how
/// many raw 64-bit draws have been consumed, which is what checkpoints store
/// to resume a stream mid-flight.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derives an independent substream seed.  Mixing the salt through one
  /// splitmix64 round before xoring keeps substreams decorrelated even for
  /// small consecutive salts.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    return scramble(seed ^ scramble(salt));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    ++counter_;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).  Uses the 128-bit multiply-shift reduction,
  /// which is unbiased enough for data sampling and never divides.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t counter() const { return counter_; }

  void restore(std::uint64_t state, std::uint64_t counter) {
    state_ = state;
    counter_ = counter;
  }

 private:
  static std::uint64_t scramble(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  std::uint64_t counter_ = 0;
};

// Substream salts.  Each named stream of a run gets its own salt so adding a
// new consumer never perturbs existing streams.
namespace rng_salt {
inline constexpr std::uint64_t kInit = 0x494e4954ull;     // parameter init
inline constexpr std::uint64_t kData = 0x44415441ull;     // dataset synthesis
inline constexpr std::uint64_t kMask = 0x4d41534bull;     // random baseline masks
inline constexpr std::uint64_t kPatches = 0x50415443ull;  // patch sampling
}  // namespace rng_salt

}  // namespace issp
