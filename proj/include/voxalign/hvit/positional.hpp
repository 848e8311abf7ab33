#pragma once

// Sinusoidal 3D positional features for volume tokens. Each patch coordinate
// axis gets an interleaved sin/cos sinusoid; the acquisition plane is appended
// as a 3-dim one-hot. Feature order is versioned: the transformer input row is
// latent ‖ x-sinusoid ‖ y-sinusoid ‖ z-sinusoid ‖ plane one-hot, and cached
// checkpoints depend on it.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/voltok/cache.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace voxalign {

inline constexpr double kPosBase = 10000.0;

// Interleaved sin/cos over one axis: pair i uses frequency base^(-2i/per_axis).
// Integer grid coordinates map to distinct (sin p, cos p) pairs because the
// first pair has period 2*pi, irrational relative to the integers.
inline void append_axis_sinusoid(std::vector<double>& out, double pos,
                                 std::size_t per_axis) {
  if (per_axis < 2 || per_axis % 2 != 0)
    throw std::invalid_argument("sinusoid dims per axis must be even and >= 2");
  for (std::size_t i = 0; i < per_axis / 2; ++i) {
    const double freq = std::pow(kPosBase, -2.0 * (double)i / (double)per_axis);
    out.push_back(std::sin(pos * freq));
    out.push_back(std::cos(pos * freq));
  }
}

inline std::size_t position_dim(std::size_t per_axis) { return 3 * per_axis + 3; }

inline std::vector<double> position_features(const PatchCoord& c, Plane plane,
                                             std::size_t per_axis) {
  std::vector<double> out;
  out.reserve(position_dim(per_axis));
  append_axis_sinusoid(out, (double)c.i, per_axis);
  append_axis_sinusoid(out, (double)c.j, per_axis);
  append_axis_sinusoid(out, (double)c.k, per_axis);
  for (std::size_t p = 0; p < 3; ++p)
    out.push_back(p == (std::size_t)plane ? 1.0 : 0.0);
  return out;
}

// Rows are the kept tokens of the grid, in grid order. The optional codebook
// swaps the continuous encoder latent for its quantized codebook row.
inline Matrix token_feature_matrix(const TokenGrid& grid, std::size_t per_axis,
                                   const Codebook* quantized = nullptr) {
  const std::size_t kept = grid.kept_count();
  if (kept == 0) throw std::invalid_argument("empty sequence after filtering");
  std::size_t latent_dim = 0;
  for (const auto& t : grid.tokens)
    if (t.kept) { latent_dim = t.latent.size(); break; }
  if (quantized && quantized->dim() != latent_dim)
    throw std::invalid_argument("codebook dim does not match token latents");
  Matrix X(kept, latent_dim + position_dim(per_axis));
  std::size_t r = 0;
  for (const auto& t : grid.tokens) {
    if (!t.kept) continue;
    if (t.latent.size() != latent_dim)
      throw std::invalid_argument("ragged token latents in grid");
    std::size_t col = 0;
    for (std::size_t c = 0; c < latent_dim; ++c)
      X(r, col++) = quantized ? quantized->entries(t.code, c) : t.latent[c];
    const auto pos = position_features(t.coord, grid.source_plane, per_axis);
    for (double v : pos) X(r, col++) = v;
    ++r;
  }
  return X;
}

}  // namespace voxalign
