#pragma once

// Token grids and their on-disk cache. Cache records carry the patch mean
// intensity so the background-filter threshold can be re-applied (it varies
// as a training augmentation) without touching raw volumes. Files are keyed
// by (study, sequence, tokenizer checksum); a checksum mismatch is a miss.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/binio.hpp"
#include "voxalign/voltok/vqvae.hpp"
#include "voxalign/voltok/voltok.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace voxalign {

struct VolumeToken {
  PatchCoord coord;
  std::vector<double> latent;  // encoder output z_e
  std::size_t code = 0;        // nearest codebook index
  double mean_intensity = 0.0;
  bool kept = true;
};

struct TokenGrid {
  std::string study_id;
  std::string seq_name;
  AxisPerm source_orientation = kIdentityPerm;
  Plane source_plane = Plane::axial;
  bool t2_like = false;
  std::array<std::size_t, 3> patch_grid{0, 0, 0};  // patches per storage axis
  double threshold = 0.0;
  std::vector<VolumeToken> tokens;

  std::size_t kept_count() const {
    std::size_t n = 0;
    for (const auto& t : tokens) n += t.kept ? 1 : 0;
    return n;
  }
};

inline void apply_threshold(TokenGrid& grid, double threshold) {
  grid.threshold = threshold;
  for (auto& t : grid.tokens) t.kept = t.mean_intensity >= threshold;
}

inline TokenGrid tokenize_sequence(const VolumetricStudy& study, const SequenceVolume& sv,
                                   const VqVae& model, double threshold) {
  const PatchSpec& spec = model.spec();
  TokenGrid grid;
  grid.study_id = study.study_id;
  grid.seq_name = sv.seq_name;
  grid.source_orientation = sv.orientation;
  grid.source_plane = sv.plane;
  grid.t2_like = sv.t2_like;
  grid.patch_grid = {(sv.voxels.dx + spec.px - 1) / spec.px,
                     (sv.voxels.dy + spec.py - 1) / spec.py,
                     (sv.voxels.dz + spec.pz - 1) / spec.pz};
  auto patches = patch_volume(sv.voxels, spec);
  Matrix X(patches.size(), spec.voxels());
  for (std::size_t r = 0; r < patches.size(); ++r) {
    const auto& d = patches[r].sub.data;
    for (std::size_t c = 0; c < d.size(); ++c) X(r, c) = d[c];
  }
  const Matrix Z = model.encode_eval(X);
  const Codebook cb = model.codebook();
  grid.tokens.reserve(patches.size());
  for (std::size_t r = 0; r < patches.size(); ++r) {
    VolumeToken t;
    t.coord = patches[r].coord;
    t.latent = Z.row_vec(r);
    t.code = quantize(t.latent, cb).first;
    t.mean_intensity = patch_mean(patches[r].sub);
    grid.tokens.push_back(std::move(t));
  }
  apply_threshold(grid, threshold);
  return grid;
}

inline constexpr std::uint32_t kTokenCacheMagic = 0x544F4B31;  // "TOK1"

inline std::string token_cache_path(const std::string& dir, const std::string& study_id,
                                    const std::string& seq_name) {
  return (std::filesystem::path(dir) / (study_id + "_" + seq_name + ".tok")).string();
}

inline void save_token_grid(const std::string& path, const TokenGrid& grid,
                            const PatchSpec& spec, std::uint64_t tokenizer_checksum) {
  ByteWriter w;
  w.u32(kTokenCacheMagic);
  w.u64(tokenizer_checksum);
  w.u64(spec.px);
  w.u64(spec.py);
  w.u64(spec.pz);
  w.u64(spec.compression);
  w.str(grid.study_id);
  w.str(grid.seq_name);
  for (std::size_t a : grid.source_orientation) w.u64(a);
  w.u8((std::uint8_t)grid.source_plane);
  w.u8(grid.t2_like ? 1 : 0);
  for (std::size_t g : grid.patch_grid) w.u64(g);
  w.f64(grid.threshold);
  w.u64(grid.tokens.size());
  for (const auto& t : grid.tokens) {
    w.u64(t.coord.i);
    w.u64(t.coord.j);
    w.u64(t.coord.k);
    w.u64(t.code);
    w.f64(t.mean_intensity);
    w.f64_vec(t.latent);
  }
  w.save(path);
}

// nullopt on missing file or checksum mismatch (caller regenerates).
inline std::optional<TokenGrid> load_token_grid(const std::string& path,
                                                std::uint64_t expected_checksum) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  ByteReader r = ByteReader::load(path);
  if (r.u32() != kTokenCacheMagic) return std::nullopt;
  if (r.u64() != expected_checksum) return std::nullopt;
  PatchSpec spec;
  spec.px = r.u64();
  spec.py = r.u64();
  spec.pz = r.u64();
  spec.compression = r.u64();
  TokenGrid grid;
  grid.study_id = r.str();
  grid.seq_name = r.str();
  for (std::size_t a = 0; a < 3; ++a) grid.source_orientation[a] = r.u64();
  grid.source_plane = (Plane)r.u8();
  grid.t2_like = r.u8() != 0;
  for (std::size_t a = 0; a < 3; ++a) grid.patch_grid[a] = r.u64();
  grid.threshold = r.f64();
  const std::uint64_t n = r.u64();
  grid.tokens.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    VolumeToken t;
    t.coord.i = r.u64();
    t.coord.j = r.u64();
    t.coord.k = r.u64();
    t.code = r.u64();
    t.mean_intensity = r.f64();
    t.latent = r.f64_vec();
    grid.tokens.push_back(std::move(t));
  }
  apply_threshold(grid, grid.threshold);
  return grid;
}

// Tokenizes every sequence of a study, reusing cache hits keyed by the
// tokenizer checksum.
inline std::vector<TokenGrid> tokenize_and_cache(const VolumetricStudy& study,
                                                 const VqVae& model, double threshold,
                                                 const std::string& cache_dir) {
  std::filesystem::create_directories(cache_dir);
  const std::uint64_t checksum = model.checksum();
  std::vector<TokenGrid> out;
  for (const auto& sv : study.sequences) {
    const std::string path = token_cache_path(cache_dir, study.study_id, sv.seq_name);
    if (auto cached = load_token_grid(path, checksum)) {
      apply_threshold(*cached, threshold);
      out.push_back(std::move(*cached));
      continue;
    }
    TokenGrid grid = tokenize_sequence(study, sv, model, threshold);
    save_token_grid(path, grid, model.spec(), checksum);
    out.push_back(std::move(grid));
  }
  return out;
}

}  // namespace voxalign
