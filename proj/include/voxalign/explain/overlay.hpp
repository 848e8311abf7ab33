#pragma once

// Attribution exports: binary PPM slice overlays with color-ranked token
// boxes, and a machine-readable JSON file per (study, sequence, class).

#include "voxalign/cohort/volume.hpp"
#include "voxalign/explain/lime.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

namespace detail {

struct Rgb {
  std::uint8_t r, g, b;
};

inline Rgb rank_color(std::size_t rank) {
  static constexpr std::array<Rgb, 3> kRanked{{{255, 64, 64}, {255, 160, 48}, {255, 240, 96}}};
  return rank < kRanked.size() ? kRanked[rank] : Rgb{160, 160, 255};
}

inline void write_ppm(const std::string& path, std::size_t w, std::size_t h,
                      const std::vector<Rgb>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write overlay: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (const Rgb& p : pixels) {
    out.put((char)p.r);
    out.put((char)p.g);
    out.put((char)p.b);
  }
}

}  // namespace detail

// One PPM per storage z-slice that intersects a top-k token box. The slice
// is the (x, y) plane of the volume in storage orientation, min-max scaled;
// box outlines are colored by attribution rank. Returns the files written.
inline std::vector<std::string> write_attribution_overlays(
    const std::string& prefix, const Volume3D& storage_volume, const TokenGrid& grid,
    const AttributionMap& attr, const PatchSpec& spec, std::size_t k = 3) {
  if (storage_volume.empty()) throw std::invalid_argument("overlay: empty volume");
  double lo = storage_volume.data[0], hi = storage_volume.data[0];
  for (double v : storage_volume.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  struct Box {
    std::size_t rank, x0, x1, y0, y1, z0, z1;  // half-open voxel extents
  };
  std::vector<Box> boxes;
  const std::size_t n = std::min(k, attr.ranking.size());
  for (std::size_t r = 0; r < n; ++r) {
    const auto& c = grid.tokens.at(attr.token_indices.at(attr.ranking[r])).coord;
    boxes.push_back({r, c.i * spec.px, std::min((c.i + 1) * spec.px, storage_volume.dx),
                     c.j * spec.py, std::min((c.j + 1) * spec.py, storage_volume.dy),
                     c.k * spec.pz, std::min((c.k + 1) * spec.pz, storage_volume.dz)});
  }

  std::vector<std::string> written;
  for (std::size_t z = 0; z < storage_volume.dz; ++z) {
    bool touched = false;
    for (const Box& b : boxes) touched |= z >= b.z0 && z < b.z1;
    if (!touched) continue;

    std::vector<detail::Rgb> img(storage_volume.dx * storage_volume.dy);
    for (std::size_t x = 0; x < storage_volume.dx; ++x)
      for (std::size_t y = 0; y < storage_volume.dy; ++y) {
        const double v = (storage_volume.at(x, y, z) - lo) / span;
        const auto g = (std::uint8_t)std::clamp(v * 255.0, 0.0, 255.0);
        img[y * storage_volume.dx + x] = {g, g, g};  // row y, column x
      }
    // Outlines drawn highest rank first so the top token wins overlaps.
    for (std::size_t bi = boxes.size(); bi-- > 0;) {
      const Box& b = boxes[bi];
      if (z < b.z0 || z >= b.z1) continue;
      const detail::Rgb col = detail::rank_color(b.rank);
      for (std::size_t x = b.x0; x < b.x1; ++x) {
        img[b.y0 * storage_volume.dx + x] = col;
        img[(b.y1 - 1) * storage_volume.dx + x] = col;
      }
      for (std::size_t y = b.y0; y < b.y1; ++y) {
        img[y * storage_volume.dx + b.x0] = col;
        img[y * storage_volume.dx + (b.x1 - 1)] = col;
      }
    }
    std::string path = prefix + "_z" + (z < 10 ? "0" : "") + std::to_string(z) + ".ppm";
    detail::write_ppm(path, storage_volume.dx, storage_volume.dy, img);
    written.push_back(std::move(path));
  }
  return written;
}

inline nlohmann::json attribution_to_json(const TokenGrid& grid, const AttributionMap& attr,
                                          std::size_t class_index) {
  nlohmann::json j;
  j["study_id"] = grid.study_id;
  j["sequence"] = grid.seq_name;
  j["class_index"] = class_index;
  j["intercept"] = attr.intercept;
  j["tokens"] = nlohmann::json::array();
  for (std::size_t rank = 0; rank < attr.ranking.size(); ++rank) {
    const std::size_t slot = attr.ranking[rank];
    const auto& tok = grid.tokens.at(attr.token_indices.at(slot));
    j["tokens"].push_back({{"rank", rank},
                           {"grid_index", attr.token_indices.at(slot)},
                           {"coord", {tok.coord.i, tok.coord.j, tok.coord.k}},
                           {"weight", attr.weights[slot]}});
  }
  return j;
}

inline void write_attribution_json(const std::string& path, const TokenGrid& grid,
                                   const AttributionMap& attr, std::size_t class_index) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write attribution file: " + path);
  out << attribution_to_json(grid, attr, class_index).dump(2) << "\n";
}

}  // namespace voxalign
