#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace voxalign {

// FNV-1a, 64-bit. Stable across platforms; used for run ids, seed derivation,
// and checkpoint checksums. Not cryptographic.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[(std::size_t)i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace voxalign
