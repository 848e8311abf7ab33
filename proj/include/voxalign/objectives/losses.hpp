#pragma once

// Training objectives: bidirectional CLIP loss over study/report projections
// and the patient sequence discrimination loss, combined as
// L_train = L_CLIP + lambda * L_patdis.

#include "voxalign/core/autograd.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

// Self-similarity handling in the discrimination loss. The reference
// pseudocode suppresses the diagonal with a -10 logit fill before the
// softmax, which also makes a single-study batch an exact zero; the raw
// printed formula keeps the self pair in numerator and denominator.
enum class PatdisVariant { kMaskedDiagonal, kRawFormula };

namespace detail {
inline void require_nonzero_rows(const Matrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) sq += m(i, j) * m(i, j);
    if (!(sq > 0.0) || !std::isfinite(sq))
      throw std::invalid_argument(std::string(what) +
                                  ": zero-norm or non-finite embedding at row " +
                                  std::to_string(i));
  }
}
}  // namespace detail

// Symmetric InfoNCE over cosine similarities scaled by exp(tau_log).
// Both directions averaged over the batch, then summed:
// L_CLIP = L_CLIP_M + L_CLIP_R. tau is carried in log space; keeping
// exp(tau) <= 100 is the caller's post-step projection, not enforced here.
inline Var clip_loss(Var study_proj, Var report_proj, Var tau_log) {
  const std::size_t k = study_proj.val().rows();
  if (k < 2) throw std::invalid_argument("clip_loss: need k >= 2 pairs");
  if (report_proj.val().rows() != k || report_proj.val().cols() != study_proj.val().cols())
    throw std::invalid_argument("clip_loss: shape mismatch between sides");
  detail::require_nonzero_rows(study_proj.val(), "clip_loss(study)");
  detail::require_nonzero_rows(report_proj.val(), "clip_loss(report)");

  Var m = ag::normalize_rows(study_proj);
  Var r = ag::normalize_rows(report_proj);
  Var logits = ag::scale_by(ag::matmul_nt(m, r), ag::exp(tau_log));
  std::vector<std::size_t> diag(k);
  for (std::size_t i = 0; i < k; ++i) diag[i] = i;
  Var ce_m = ag::cross_entropy_rows(logits, diag);
  Var ce_r = ag::cross_entropy_rows(ag::transpose(logits), diag);
  return ag::add(ce_m, ce_r);
}

// Patient sequence discrimination. seq_proj holds one projected sequence
// embedding per row; study_of[i] labels the study the row belongs to.
// Per row: -log of the same-study softmax mass, weighted 1/(k * n_study).
// The reference pseudocode omits the 1/k; we keep it so the loss is
// batch-size invariant, matching the printed formula's normalization.
inline Var patient_discrimination_loss(Var seq_proj, const std::vector<std::size_t>& study_of,
                                       Var tau_p,
                                       PatdisVariant variant = PatdisVariant::kMaskedDiagonal) {
  Tape& t = *seq_proj.tape;
  const std::size_t n = seq_proj.val().rows();
  if (n == 0 || study_of.size() != n)
    throw std::invalid_argument("patient_discrimination_loss: row/study label mismatch");
  if (!(tau_p.scalar() > 0.0))
    throw std::invalid_argument("patient_discrimination_loss: tau_p must be positive");
  detail::require_nonzero_rows(seq_proj.val(), "patient_discrimination_loss");

  std::size_t n_studies = 0;
  for (std::size_t s : study_of) n_studies = std::max(n_studies, s + 1);
  std::vector<std::size_t> study_size(n_studies, 0);
  for (std::size_t s : study_of) ++study_size[s];

  Var u = ag::normalize_rows(seq_proj);
  Var logits = ag::scale_by(ag::matmul_nt(u, u), ag::pow_scalar(tau_p, -1.0));
  if (variant == PatdisVariant::kMaskedDiagonal)
    logits = ag::fill_diagonal(logits, -10.0);
  Var p = ag::softmax_rows(logits);

  // Same-study mask includes the self pair in both variants; with the
  // diagonal filled the self entry carries only e^-10 of softmax mass.
  Matrix mask(n, n, 0.0);
  Matrix weights(n, 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (study_of[i] == study_of[j]) mask(i, j) = 1.0;
    weights(i, 0) = 1.0 / ((double)n_studies * (double)study_size[study_of[i]]);
  }
  Var same_study_mass = ag::rowsum(ag::mul(p, t.constant(mask)));
  Var weighted = ag::mul(ag::log(same_study_mass), t.constant(weights));
  return ag::neg(ag::sum_all(weighted));
}

inline Var combined_loss(Var clip, Var patdis, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");
  return ag::add(clip, ag::scale(patdis, lambda));
}

}  // namespace voxalign
