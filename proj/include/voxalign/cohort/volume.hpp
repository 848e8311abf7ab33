#pragma once

// 3D scalar volumes with axis-permutation utilities and binary persistence.
// Storage is row-major with the last axis fastest: index (i,j,k) maps to
// (i*dy + j)*dz + k.

#include "voxalign/core/binio.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct Volume3D {
  std::size_t dx = 0, dy = 0, dz = 0;
  std::vector<double> data;

  Volume3D() = default;
  Volume3D(std::size_t x, std::size_t y, std::size_t z, double fill = 0.0)
      : dx(x), dy(y), dz(z), data(x * y * z, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * dy + j) * dz + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dy + j) * dz + k];
  }

  std::array<std::size_t, 3> dims() const { return {dx, dy, dz}; }

  bool same_dims(const Volume3D& o) const {
    return dx == o.dx && dy == o.dy && dz == o.dz;
  }
};

// Axis permutation: perm[k] names the source axis that becomes output axis k.
using AxisPerm = std::array<std::size_t, 3>;

inline constexpr AxisPerm kIdentityPerm{0, 1, 2};

inline bool is_valid_perm(const AxisPerm& p) {
  bool seen[3] = {false, false, false};
  for (std::size_t v : p) {
    if (v > 2 || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

inline AxisPerm inverse_perm(const AxisPerm& p) {
  AxisPerm inv{};
  for (std::size_t k = 0; k < 3; ++k) inv[p[k]] = k;
  return inv;
}

inline Volume3D permute_axes(const Volume3D& v, const AxisPerm& perm) {
  if (!is_valid_perm(perm)) throw std::invalid_argument("invalid axis permutation");
  const std::array<std::size_t, 3> in_dims = v.dims();
  Volume3D out(in_dims[perm[0]], in_dims[perm[1]], in_dims[perm[2]]);
  std::array<std::size_t, 3> src{};
  for (std::size_t i = 0; i < out.dx; ++i)
    for (std::size_t j = 0; j < out.dy; ++j)
      for (std::size_t k = 0; k < out.dz; ++k) {
        const std::array<std::size_t, 3> dst{i, j, k};
        for (std::size_t a = 0; a < 3; ++a) src[perm[a]] = dst[a];
        out.at(i, j, k) = v.at(src[0], src[1], src[2]);
      }
  return out;
}

inline constexpr std::uint32_t kVolumeMagic = 0x564F4C33;  // "VOL3"

inline void save_volume(const std::string& path, const Volume3D& v) {
  ByteWriter w;
  w.u32(kVolumeMagic);
  w.u64(v.dx);
  w.u64(v.dy);
  w.u64(v.dz);
  for (double x : v.data) w.f64(x);
  w.save(path);
}

inline Volume3D load_volume(const std::string& path) {
  ByteReader r = ByteReader::load(path);
  if (r.u32() != kVolumeMagic) throw std::runtime_error("not a volume file: " + path);
  const std::size_t dx = r.u64();
  const std::size_t dy = r.u64();
  const std::size_t dz = r.u64();
  Volume3D v(dx, dy, dz);
  for (double& x : v.data) x = r.f64();
  if (!r.exhausted()) throw std::runtime_error("trailing bytes in volume: " + path);
  return v;
}

}  // namespace voxalign
