#pragma once

// Cross-modal retrieval scoring over paired embeddings. Ranking follows a
// stable argsort: ties break toward the lower candidate index, so a clump of
// identical embeddings (duplicate normal reports, say) yields at most one hit
// instead of one per member.

#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace voxalign {

inline Matrix l2_normalized_rows(const Matrix& a) {
  Matrix out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) sq += a(r, c) * a(r, c);
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) throw std::invalid_argument("zero-norm row in embeddings");
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) /= n;
  }
  return out;
}

inline Matrix cosine_similarity(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("cosine_similarity: dim mismatch");
  const Matrix an = l2_normalized_rows(a), bn = l2_normalized_rows(b);
  Matrix sim(a.rows(), b.rows());
  sim.map().noalias() = an.map() * bn.map().transpose();
  return sim;
}

// Fraction of rows whose diagonal entry ranks in the top k of its row.
inline double topk_retrieval(const Matrix& sim, std::size_t k) {
  if (sim.rows() != sim.cols() || sim.rows() == 0)
    throw std::invalid_argument("topk_retrieval: square pairwise matrix required");
  if (k == 0) throw std::invalid_argument("topk_retrieval: k must be positive");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < sim.cols(); ++j) {
      if (j == i) continue;
      if (sim(i, j) > sim(i, i) || (sim(i, j) == sim(i, i) && j < i)) ++better;
    }
    if (better < k) ++hits;
  }
  return (double)hits / (double)sim.rows();
}

// Mean top-k accuracy over a seeded random partition into groups of
// group_size paired embeddings. The remainder that does not fill a final
// group is dropped, so every group competes at the same difficulty.
inline double grouped_retrieval(const Matrix& study_emb, const Matrix& report_emb,
                                std::size_t group_size, std::uint64_t seed,
                                std::size_t k = 1) {
  if (study_emb.rows() != report_emb.rows())
    throw std::invalid_argument("grouped_retrieval: pair count mismatch");
  if (group_size < 2) throw std::invalid_argument("grouped_retrieval: group_size < 2");
  const std::size_t n = study_emb.rows();
  const std::size_t n_groups = n / group_size;
  if (n_groups == 0)
    throw std::invalid_argument("grouped_retrieval: fewer pairs than one group");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  double acc = 0.0;
  Matrix a(group_size, study_emb.cols()), b(group_size, report_emb.cols());
  for (std::size_t g = 0; g < n_groups; ++g) {
    for (std::size_t r = 0; r < group_size; ++r) {
      const std::size_t src = order[g * group_size + r];
      for (std::size_t c = 0; c < study_emb.cols(); ++c) a(r, c) = study_emb(src, c);
      for (std::size_t c = 0; c < report_emb.cols(); ++c) b(r, c) = report_emb(src, c);
    }
    acc += topk_retrieval(cosine_similarity(a, b), k);
  }
  return acc / (double)n_groups;
}

}  // namespace voxalign
