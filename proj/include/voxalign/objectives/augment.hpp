#pragma once

// Training-batch assembly and the contrastive augmentation recipe: shuffling
// summarized-report items, dropping volume tokens, replacing sequence names
// with "unk", re-thresholding the background filter, and dropping whole
// sequences. Every knob is independent; guards keep at least one sequence per
// study and one token per sequence alive.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/rng.hpp"
#include "voxalign/textenc/summarize.hpp"
#include "voxalign/voltok/cache.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct TrainStudy {
  std::string study_id;
  std::string study_name;
  std::vector<TokenGrid> grids;
  SummarizedReport report;
  bool abnormal = false;
};

struct AugmentPolicy {
  double report_shuffle_p = 0.0;    // per study: permute summary items
  double sequence_drop_p = 0.0;     // per sequence: drop it from the study
  double threshold_change_p = 0.0;  // per sequence: re-filter at a new threshold
  std::vector<double> thresholds = {0.0, 0.02, 0.05};
  double token_drop_p = 0.0;        // per kept token: drop it
  double name_unk_p = 0.0;          // per sequence: blank the name to "unk"
};

namespace detail {

template <typename T>
inline void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

// Mutates the batch in place. Application order per study is fixed (sequence
// drop, then per-sequence threshold/token/name edits, then report shuffle) so
// a seeded policy reproduces bit-identical batches.
inline void apply_augmentations(std::vector<TrainStudy>& batch,
                                const AugmentPolicy& pol, Rng& rng) {
  for (auto& study : batch) {
    if (pol.sequence_drop_p > 0.0 && study.grids.size() > 1) {
      std::vector<TokenGrid> kept;
      for (auto& g : study.grids)
        if (!rng.bernoulli(pol.sequence_drop_p)) kept.push_back(std::move(g));
      if (kept.empty()) {
        const std::size_t save = rng.below(study.grids.size());
        kept.push_back(std::move(study.grids[save]));
      }
      study.grids = std::move(kept);
    }
    for (auto& grid : study.grids) {
      if (pol.threshold_change_p > 0.0 && !pol.thresholds.empty() &&
          rng.bernoulli(pol.threshold_change_p)) {
        const double t = pol.thresholds[rng.below(pol.thresholds.size())];
        const double old_threshold = grid.threshold;
        std::vector<bool> old_kept;
        old_kept.reserve(grid.tokens.size());
        for (const auto& tok : grid.tokens) old_kept.push_back(tok.kept);
        apply_threshold(grid, t);
        if (grid.kept_count() == 0) {  // jitter never empties a sequence
          grid.threshold = old_threshold;
          for (std::size_t i = 0; i < grid.tokens.size(); ++i)
            grid.tokens[i].kept = old_kept[i];
        }
      }
      if (pol.token_drop_p > 0.0) {
        std::vector<std::size_t> was_kept;
        for (std::size_t i = 0; i < grid.tokens.size(); ++i)
          if (grid.tokens[i].kept) was_kept.push_back(i);
        for (std::size_t i : was_kept)
          if (rng.bernoulli(pol.token_drop_p)) grid.tokens[i].kept = false;
        if (grid.kept_count() == 0 && !was_kept.empty())
          grid.tokens[was_kept[rng.below(was_kept.size())]].kept = true;
      }
      if (pol.name_unk_p > 0.0 && rng.bernoulli(pol.name_unk_p))
        grid.seq_name = "unk";
    }
    if (pol.report_shuffle_p > 0.0 && rng.bernoulli(pol.report_shuffle_p))
      detail::shuffle_in_place(study.report.items, rng);
  }
}

// Tokenizes and summarizes a cohort into the batch form the trainer consumes.
inline std::vector<TrainStudy> build_training_set(
    const std::vector<VolumetricStudy>& cohort, const VqVae& model,
    double threshold) {
  std::vector<TrainStudy> out;
  out.reserve(cohort.size());
  for (const auto& study : cohort) {
    TrainStudy t;
    t.study_id = study.study_id;
    t.study_name = study.study_name;
    for (const auto& sv : study.sequences)
      t.grids.push_back(tokenize_sequence(study, sv, model, threshold));
    t.report = summarize(study);
    t.abnormal = !study.report.findings.empty();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace voxalign
