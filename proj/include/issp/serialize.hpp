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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "issp/errors.hpp"

namespace issp {

/// Little-endian binary writer over an ostream.  All on-disk formats in this
/// project are little-endian regardless of host order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }

  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(bits);
  }
  void magic(const char* m, std::size_t n) { bytes(m, n); }

  template <typename It>
  void f32_span(It first, It last) {
    for (; first != last; ++first) f32(static_cast<float>(*first));
  }

 private:
  template <typename U>
  void put_le(U v) {
    std::uint8_t buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    bytes(buf, sizeof(U));
  }

  std::ostream& os_;
};

/// Little-endian binary reader.  Throws Truncated when the stream runs out,
/// which doubles as the corrupt-file signal for fixed-layout formats.
class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw Truncated("unexpected end of file");
    }
  }

  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() {
    std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = get_le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void expect_magic(const char* m, std::size_t n, const char* what) {
    std::vector<char> buf(n);
    is_.read(buf.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n ||
        std::memcmp(buf.data(), m, n) != 0) {
      throw BadMagic(std::string(what) + ": bad magic bytes");
    }
  }

  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

 private:
  template <typename U>
  U get_le() {
    std::uint8_t buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(buf[i]) << (8 * i);
    }
    return v;
  }

  std::istream& is_;
};

/// Writes a file atomically: the producer fills a temporary sibling which is
/// renamed over the target only after a successful flush.  An interrupted
/// run never leaves a readable-but-wrong artifact at `path`.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& produce) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    produce(os);
    os.flush();
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace issp
