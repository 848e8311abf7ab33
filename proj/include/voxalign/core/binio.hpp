#pragma once

// Little-endian binary IO. Volumes, token caches and checkpoints are written
// with explicit byte order so artifacts are portable between machines.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

namespace detail {
template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    T out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
  return v;
}
template <typename T>
T from_le(T v) {
  return to_le(v);
}
}  // namespace detail

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back((char)v); }
  void u32(std::uint32_t v) { raw(detail::to_le(v)); }
  void u64(std::uint64_t v) { raw(detail::to_le(v)); }
  void i64(std::int64_t v) { raw(detail::to_le(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64_vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

  const std::string& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(buf_.data(), (std::streamsize)buf_.size());
    if (!out) throw std::runtime_error("short write: " + path);
  }

 private:
  template <typename T>
  void raw(T v) {
    bytes(&v, sizeof(T));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : buf_(std::move(data)) {}

  static ByteReader load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for read: " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
  }

  std::uint8_t u8() { return (std::uint8_t)take(1)[0]; }
  std::uint32_t u32() { return detail::from_le(raw<std::uint32_t>()); }
  std::uint64_t u64() { return detail::from_le(raw<std::uint64_t>()); }
  std::int64_t i64() { return detail::from_le(raw<std::int64_t>()); }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint64_t n = u64();
    const char* p = take(n);
    return std::string(p, n);
  }
  std::vector<double> f64_vec() {
    std::uint64_t n = u64();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

  bool exhausted() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  template <typename T>
  T raw() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::uint64_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("binary read past end");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace voxalign
