#pragma once

// Volume tokenization primitives: patch extraction with zero padding,
// nearest-codebook quantization, background filtering, and the per-minibatch
// random axis-permutation augmentation.

#include "voxalign/cohort/types.hpp"
#include "voxalign/cohort/volume.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

namespace voxalign {

struct PatchSpec {
  std::size_t px = 8, py = 8, pz = 2;
  std::size_t compression = 16;

  std::size_t voxels() const { return px * py * pz; }
  std::size_t latent_dim() const {
    if (voxels() == 0) throw std::invalid_argument("patch with zero voxels");
    if (voxels() % compression != 0)
      throw std::invalid_argument("patch voxels not divisible by compression rate");
    return voxels() / compression;
  }
};

struct Codebook {
  Matrix entries;  // K x d
  std::vector<std::uint64_t> usage_counts;

  std::size_t size() const { return entries.rows(); }
  std::size_t dim() const { return entries.cols(); }

  static Codebook random(std::size_t K, std::size_t d, Rng& rng, double stddev = 0.05) {
    if (K < 2) throw std::invalid_argument("codebook needs K >= 2");
    Codebook cb;
    cb.entries = Matrix(K, d);
    for (std::size_t i = 0; i < cb.entries.size(); ++i)
      cb.entries[i] = rng.normal(0.0, stddev);
    cb.usage_counts.assign(K, 0);
    return cb;
  }
};

struct PatchCoord {
  std::size_t i = 0, j = 0, k = 0;  // patch grid indices, storage axes
  bool operator==(const PatchCoord&) const = default;
};

struct Patch {
  PatchCoord coord;
  Volume3D sub;  // px x py x pz, zero padded at volume edges
};

// Covers ceil(X/px) x ceil(Y/py) x ceil(Z/pz) patches exactly once.
inline std::vector<Patch> patch_volume(const Volume3D& vol, const PatchSpec& spec) {
  if (vol.empty()) throw std::invalid_argument("patch_volume: empty volume");
  for (double v : vol.data)
    if (!std::isfinite(v)) throw std::invalid_argument("patch_volume: non-finite voxel");
  const std::size_t nx = (vol.dx + spec.px - 1) / spec.px;
  const std::size_t ny = (vol.dy + spec.py - 1) / spec.py;
  const std::size_t nz = (vol.dz + spec.pz - 1) / spec.pz;
  std::vector<Patch> out;
  out.reserve(nx * ny * nz);
  for (std::size_t pi = 0; pi < nx; ++pi)
    for (std::size_t pj = 0; pj < ny; ++pj)
      for (std::size_t pk = 0; pk < nz; ++pk) {
        Patch p;
        p.coord = {pi, pj, pk};
        p.sub = Volume3D(spec.px, spec.py, spec.pz, 0.0);
        for (std::size_t a = 0; a < spec.px; ++a)
          for (std::size_t b = 0; b < spec.py; ++b)
            for (std::size_t c = 0; c < spec.pz; ++c) {
              const std::size_t x = pi * spec.px + a, y = pj * spec.py + b,
                                z = pk * spec.pz + c;
              if (x < vol.dx && y < vol.dy && z < vol.dz)
                p.sub.at(a, b, c) = vol.at(x, y, z);
            }
        out.push_back(std::move(p));
      }
  return out;
}

inline std::vector<double> flatten_patch(const Volume3D& sub) { return sub.data; }

inline double patch_mean(const Volume3D& sub) {
  double s = 0.0;
  for (double v : sub.data) s += v;
  return sub.data.empty() ? 0.0 : s / (double)sub.data.size();
}

// Nearest codebook entry by Euclidean distance; ties break to the lowest
// index (strict less-than against running best).
inline std::pair<std::size_t, std::vector<double>> quantize(const std::vector<double>& z_e,
                                                            const Codebook& cb) {
  if (z_e.size() != cb.dim()) throw std::invalid_argument("quantize: dim mismatch");
  for (double v : z_e)
    if (!std::isfinite(v)) throw std::invalid_argument("quantize: non-finite input");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cb.size(); ++j) {
    double d = 0.0;
    for (std::size_t c = 0; c < cb.dim(); ++c) {
      const double diff = z_e[c] - cb.entries(j, c);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  std::vector<double> z_q(cb.dim());
  for (std::size_t c = 0; c < cb.dim(); ++c) z_q[c] = cb.entries(best, c);
  return {best, z_q};
}

// Applies p to a patch: output shape is the permutation of the input shape.
inline Volume3D permute_patch(const Volume3D& sub, const AxisPerm& p) {
  return permute_axes(sub, p);
}

inline AxisPerm random_perm3(Rng& rng) {
  static const std::array<AxisPerm, 6> kPerms{AxisPerm{0, 1, 2}, AxisPerm{0, 2, 1},
                                              AxisPerm{1, 0, 2}, AxisPerm{1, 2, 0},
                                              AxisPerm{2, 0, 1}, AxisPerm{2, 1, 0}};
  return kPerms[rng.below(6)];
}

struct PermutationEvent {
  std::array<std::size_t, 3> bucket_shape{0, 0, 0};
  AxisPerm perm = kIdentityPerm;
  std::size_t affected = 0;
};

// Minibatch augmentation: bucket patches by shape, pick one bucket, apply one
// random axis permutation to every patch in it.
inline PermutationEvent random_axis_permutation(std::vector<Volume3D>& batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("random_axis_permutation: empty batch");
  std::map<std::array<std::size_t, 3>, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < batch.size(); ++i)
    buckets[batch[i].dims()].push_back(i);
  const std::size_t pick = rng.below(buckets.size());
  auto it = buckets.begin();
  std::advance(it, (std::ptrdiff_t)pick);
  PermutationEvent ev;
  ev.bucket_shape = it->first;
  ev.perm = random_perm3(rng);
  ev.affected = it->second.size();
  for (std::size_t idx : it->second) batch[idx] = permute_patch(batch[idx], ev.perm);
  return ev;
}

// kept=false iff mean patch intensity < threshold; monotone in threshold.
inline bool patch_kept(const Volume3D& sub, double threshold) {
  return patch_mean(sub) >= threshold;
}

}  // namespace voxalign
