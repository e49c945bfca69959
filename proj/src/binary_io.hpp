// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian, length-prefixed section encoding shared by the checkpoint and
// fused-model formats.

#ifndef SLIMNET_SRC_BINARY_IO_HPP_
#define SLIMNET_SRC_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace slimnet::detail {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void floats(const float* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f32(p[i]);
  }
  /// Appends a tagged section: 4-byte tag, u64 payload length, payload.
  void section(std::string_view tag, const Writer& payload) {
    if (tag.size() != 4) throw std::logic_error("section tags are 4 bytes");
    raw(tag);
    u64(payload.out_.size());
    raw(payload.out_);
  }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* p, std::size_t n) {
    need(n * 4);
    for (std::size_t i = 0; i < n; ++i) p[i] = f32();
  }
  /// Reads the next section, checking its tag.
  Reader section(std::string_view tag) {
    const std::string_view t = take(4);
    if (t != tag) throw FormatError("expected section " + std::string(tag) + ", found " + std::string(t));
    const std::uint64_t n = u64();
    return Reader(take(static_cast<std::size_t>(n)));
  }
  bool done() const { return pos_ == in_.size(); }
  void expect_done(const char* what) const {
    if (!done()) throw FormatError(std::string(what) + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("truncated data");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace slimnet::detail

#endif  // SLIMNET_SRC_BINARY_IO_HPP_
