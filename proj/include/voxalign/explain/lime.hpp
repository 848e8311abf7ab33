#pragma once

// LIME over volume tokens. Perturbation is token removal: a masked-out token
// disappears from the sequence entirely (kept = false), it is not zeroed.
// The surrogate is a locality-weighted ridge regression of the observed
// logits on the binary masks; one sequence is perturbed at a time.

#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"
#include "voxalign/heads/heads.hpp"
#include "voxalign/hvit/encoder.hpp"
#include "voxalign/voltok/cache.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct LimeOptions {
  std::size_t n_samples = 3000;
  std::uint64_t seed = 1;
  double keep_p = 0.5;    // per-token Bernoulli keep probability
  double sigma = 0.25;    // locality kernel width
  double ridge = 1e-6;    // surrogate regularization
};

struct MaskSample {
  std::vector<std::uint8_t> mask;  // over the kept tokens of the sequence
  double logit = 0.0;
};

struct AttributionMap {
  std::vector<double> weights;             // surrogate coefficient per token
  double intercept = 0.0;
  std::vector<std::size_t> token_indices;  // weight slot -> grid.tokens index
  std::vector<std::size_t> ranking;        // weight slots, descending weight
};

namespace detail {

inline std::vector<std::size_t> kept_token_indices(const TokenGrid& grid) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < grid.tokens.size(); ++t)
    if (grid.tokens[t].kept) idx.push_back(t);
  return idx;
}

// Bernoulli mask with at least one survivor (resampled otherwise), keeping
// the encoder's nonempty-sequence precondition intact for every evaluation.
inline std::vector<std::uint8_t> draw_mask(std::size_t n, double keep_p, Rng& rng) {
  std::vector<std::uint8_t> mask(n);
  for (;;) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = rng.bernoulli(keep_p) ? 1 : 0;
      any |= mask[i] != 0;
    }
    if (any) return mask;
  }
}

inline double locality_weight(const std::vector<std::uint8_t>& mask, double sigma) {
  const double s =
      (double)std::count(mask.begin(), mask.end(), (std::uint8_t)1);
  const double cos = std::sqrt(s / (double)mask.size());  // cosine(mask, ones)
  const double d = 1.0 - cos;
  return std::exp(-(d * d) / (sigma * sigma));
}

}  // namespace detail

// Generic engine: `model` maps a masked grid to one logit per output. All
// outputs share the mask draws and forward passes; each gets its own fit.
inline std::vector<AttributionMap> lime_attribute_multi(
    const std::function<std::vector<double>(const TokenGrid&)>& model,
    const TokenGrid& grid, std::size_t n_outputs, const LimeOptions& opt = {}) {
  const auto kept = detail::kept_token_indices(grid);
  const std::size_t t = kept.size();
  if (t < 2)
    throw std::invalid_argument("lime: the sequence needs at least 2 kept tokens");
  if (n_outputs == 0) throw std::invalid_argument("lime: no outputs requested");
  if (opt.n_samples < t + 1)
    throw std::invalid_argument(
        "lime: singular design, n_samples " + std::to_string(opt.n_samples) +
        " is below the minimum " + std::to_string(t + 1) + " (kept tokens + 1)");

  Rng rng(opt.seed);
  const std::size_t dim = t + 1;  // intercept + one slot per token
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero((Eigen::Index)dim, (Eigen::Index)dim);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero((Eigen::Index)dim, (Eigen::Index)n_outputs);
  Eigen::VectorXd z((Eigen::Index)dim);

  TokenGrid masked = grid;
  for (std::size_t s = 0; s < opt.n_samples; ++s) {
    const auto mask = detail::draw_mask(t, opt.keep_p, rng);
    for (std::size_t i = 0; i < t; ++i) masked.tokens[kept[i]].kept = mask[i] != 0;
    const std::vector<double> out = model(masked);
    if (out.size() != n_outputs)
      throw std::invalid_argument("lime: model output arity changed between calls");
    const double k = detail::locality_weight(mask, opt.sigma);
    z(0) = 1.0;
    for (std::size_t i = 0; i < t; ++i) z((Eigen::Index)(i + 1)) = (double)mask[i];
    gram.selfadjointView<Eigen::Lower>().rankUpdate(z, k);
    for (std::size_t o = 0; o < n_outputs; ++o)
      rhs.col((Eigen::Index)o) += (k * out[o]) * z;
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  // Penalize the token weights only; an unpenalized intercept keeps constant
  // models at exactly zero attribution.
  gram.diagonal().segment(1, (Eigen::Index)t).array() += opt.ridge;

  const Eigen::MatrixXd beta = gram.ldlt().solve(rhs);
  std::vector<AttributionMap> maps(n_outputs);
  for (std::size_t o = 0; o < n_outputs; ++o) {
    AttributionMap& m = maps[o];
    m.intercept = beta(0, (Eigen::Index)o);
    m.weights.resize(t);
    for (std::size_t i = 0; i < t; ++i) m.weights[i] = beta((Eigen::Index)(i + 1), (Eigen::Index)o);
    m.token_indices = kept;
    m.ranking.resize(t);
    std::iota(m.ranking.begin(), m.ranking.end(), 0);
    std::sort(m.ranking.begin(), m.ranking.end(), [&](std::size_t a, std::size_t b) {
      if (m.weights[a] != m.weights[b]) return m.weights[a] > m.weights[b];
      return a < b;
    });
  }
  return maps;
}

inline AttributionMap lime_attribute(
    const std::function<double(const TokenGrid&)>& model, const TokenGrid& grid,
    const LimeOptions& opt = {}) {
  auto vec_model = [&](const TokenGrid& g) { return std::vector<double>{model(g)}; };
  return lime_attribute_multi(vec_model, grid, 1, opt)[0];
}

// Pipeline wiring: perturb one sequence of a study, score the study embedding
// built from that sequence alone with the diagnosis head, one map per class.
inline std::vector<AttributionMap> lime_attribute_study(
    const HierarchicalEncoder& encoder, const DiagnosisHead& head,
    const TokenGrid& grid, const std::string& study_name,
    const std::vector<std::size_t>& classes, const LimeOptions& opt = {}) {
  if (classes.empty()) throw std::invalid_argument("lime: no classes requested");
  for (std::size_t c : classes)
    if (c >= head.n_classes()) throw std::out_of_range("lime: class index");
  auto model = [&](const TokenGrid& masked) {
    const StudyEmbedding emb = encoder.encode_study({&masked}, study_name);
    const Matrix z = head.logits(emb.vector);
    std::vector<double> out;
    out.reserve(classes.size());
    for (std::size_t c : classes) out.push_back(z(0, c));
    return out;
  };
  return lime_attribute_multi(model, grid, classes.size(), opt);
}

// Voxel extent of one token in canonical axes. Token coords live on the
// storage patch grid; the sequence orientation maps canonical axes to
// storage axes, so the box walks storage voxels and permutes back.
inline bool token_intersects_mask(const TokenGrid& grid, std::size_t token_index,
                                  const PatchSpec& spec, const Volume3D& canon_mask) {
  if (canon_mask.empty()) return false;
  const PatchCoord& pc = grid.tokens.at(token_index).coord;
  const std::size_t lo[3] = {pc.i * spec.px, pc.j * spec.py, pc.k * spec.pz};
  const std::size_t ext[3] = {spec.px, spec.py, spec.pz};
  const AxisPerm& perm = grid.source_orientation;  // canonical -> storage
  const std::array<std::size_t, 3> canon_dims = canon_mask.dims();
  std::array<std::size_t, 3> c{};
  for (std::size_t a = lo[0]; a < lo[0] + ext[0]; ++a)
    for (std::size_t b = lo[1]; b < lo[1] + ext[1]; ++b)
      for (std::size_t d = lo[2]; d < lo[2] + ext[2]; ++d) {
        const std::array<std::size_t, 3> st{a, b, d};
        for (std::size_t ax = 0; ax < 3; ++ax) c[perm[ax]] = st[ax];
        if (c[0] >= canon_dims[0] || c[1] >= canon_dims[1] || c[2] >= canon_dims[2])
          continue;  // zero-padded patch tail
        if (canon_mask.at(c[0], c[1], c[2]) > 0.0) return true;
      }
  return false;
}

// Hit iff any of the top-k ranked tokens' voxel extents touch the mask.
inline bool topk_overlap(const AttributionMap& attr, const TokenGrid& grid,
                         const PatchSpec& spec, const Volume3D& canon_mask,
                         std::size_t k = 3) {
  if (k == 0) throw std::invalid_argument("topk_overlap: k must be positive");
  const std::size_t n = std::min(k, attr.ranking.size());
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t slot = attr.ranking[r];
    if (token_intersects_mask(grid, attr.token_indices.at(slot), spec, canon_mask))
      return true;
  }
  return false;
}

}  // namespace voxalign
