#pragma once

// Subgroup disparity estimation: equalized-odds TPR/FPR gaps against the
// population, and the bootstrap experiment protocol with a one-sided
// Mann-Whitney test over replicate TPRs.

#include "voxalign/core/rng.hpp"
#include "voxalign/eval/metrics.hpp"
#include "voxalign/fairness/stats.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct SubgroupSpec {
  std::string name;
  std::function<bool(const SensitiveAttributes&)> predicate;
  bool intersectional = false;
};

inline SubgroupSpec intersect(const SubgroupSpec& a, const SubgroupSpec& b) {
  if (!a.predicate || !b.predicate)
    throw std::invalid_argument("intersect: subgroup predicate missing");
  SubgroupSpec s;
  s.name = a.name + " & " + b.name;
  s.predicate = [pa = a.predicate, pb = b.predicate](const SensitiveAttributes& at) {
    return pa(at) && pb(at);
  };
  s.intersectional = true;
  return s;
}

// Rates are NaN with tpr_defined/fpr_defined false when the subgroup or the
// population lacks the outcomes needed for them; `note` names the missing
// side. Disparity is subgroup minus population, computed only when defined.
struct DisparityResult {
  std::size_t class_index = 0;
  std::string subgroup;
  double tpr_subgroup = std::numeric_limits<double>::quiet_NaN();
  double tpr_population = std::numeric_limits<double>::quiet_NaN();
  double tpr_disparity = std::numeric_limits<double>::quiet_NaN();
  double fpr_subgroup = std::numeric_limits<double>::quiet_NaN();
  double fpr_population = std::numeric_limits<double>::quiet_NaN();
  double fpr_disparity = std::numeric_limits<double>::quiet_NaN();
  bool tpr_defined = false;
  bool fpr_defined = false;
  std::string note;
  std::vector<double> tpr_replicates_subgroup;    // bootstrap only
  std::vector<double> tpr_replicates_population;  // bootstrap only
  double p_value = std::numeric_limits<double>::quiet_NaN();  // bootstrap only
};

namespace detail {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return fp + tn; }
  double tpr() const { return (double)tp / (double)(tp + fn); }
  double fpr() const { return (double)fp / (double)(fp + tn); }
};

inline bool predicted_positive(const PredictionRecord& r, std::size_t c) {
  return r.logits[c] > 0.0;  // logit 0 == probability 0.5
}

inline void check_fairness_records(const std::vector<PredictionRecord>& records,
                                   std::size_t class_index) {
  if (records.empty()) throw std::invalid_argument("fairness: no records");
  for (const auto& r : records) {
    if (class_index >= r.logits.size() || class_index >= r.labels.size())
      throw std::invalid_argument("fairness: class index out of range for study " + r.study_id);
    if (r.labels[class_index] != 0 && r.labels[class_index] != 1)
      throw std::invalid_argument("fairness: labels must be 0/1");
  }
}

template <typename Pred>
Confusion count_confusion(const std::vector<PredictionRecord>& records,
                          std::size_t class_index, Pred&& in_group) {
  Confusion c;
  for (const auto& r : records) {
    if (!in_group(r)) continue;
    const bool y = r.labels[class_index] == 1;
    const bool yhat = predicted_positive(r, class_index);
    if (y && yhat)
      ++c.tp;
    else if (y)
      ++c.fn;
    else if (yhat)
      ++c.fp;
    else
      ++c.tn;
  }
  return c;
}

}  // namespace detail

// Point estimates from brute-force confusion counting. A subgroup without
// positives (or negatives) yields an explicitly undefined rate, never 0/0.
inline DisparityResult tpr_fpr(const std::vector<PredictionRecord>& records,
                               const SubgroupSpec& spec, std::size_t class_index) {
  detail::check_fairness_records(records, class_index);
  if (!spec.predicate) throw std::invalid_argument("tpr_fpr: subgroup predicate missing");
  const auto pop =
      detail::count_confusion(records, class_index, [](const PredictionRecord&) { return true; });
  const auto sub = detail::count_confusion(
      records, class_index,
      [&](const PredictionRecord& r) { return spec.predicate(r.attributes); });

  DisparityResult out;
  out.class_index = class_index;
  out.subgroup = spec.name;
  auto append_note = [&](const std::string& s) {
    if (!out.note.empty()) out.note += "; ";
    out.note += s;
  };

  if (pop.positives() > 0) out.tpr_population = pop.tpr();
  if (pop.positives() == 0)
    append_note("insufficient positives in population");
  else if (sub.positives() == 0)
    append_note("insufficient positives in subgroup '" + spec.name + "'");
  else {
    out.tpr_subgroup = sub.tpr();
    out.tpr_disparity = out.tpr_subgroup - out.tpr_population;
    out.tpr_defined = true;
  }

  if (pop.negatives() > 0) out.fpr_population = pop.fpr();
  if (pop.negatives() == 0)
    append_note("insufficient negatives in population");
  else if (sub.negatives() == 0)
    append_note("insufficient negatives in subgroup '" + spec.name + "'");
  else {
    out.fpr_subgroup = sub.fpr();
    out.fpr_disparity = out.fpr_subgroup - out.fpr_population;
    out.fpr_defined = true;
  }
  return out;
}

struct BootstrapConfig {
  std::size_t n_samples = 200;  // draws per replicate, with replacement
  std::size_t iterations = 20;  // replicates per side
  std::uint64_t seed = 0;
};

// Experiment protocol: per iteration, n_samples subgroup positives and
// n_samples diagnosis-matched population positives (positives for the class
// under test) are drawn with replacement; replicate TPR pairs feed a one-sided
// Mann-Whitney test of subgroup TPR < population TPR. Deterministic per seed.
inline DisparityResult bootstrap_disparity(const std::vector<PredictionRecord>& records,
                                           const SubgroupSpec& spec, std::size_t class_index,
                                           const BootstrapConfig& cfg = {}) {
  if (cfg.n_samples == 0 || cfg.iterations == 0)
    throw std::invalid_argument("bootstrap_disparity: n_samples and iterations must be positive");
  DisparityResult out = tpr_fpr(records, spec, class_index);

  std::vector<std::size_t> sub_pos, pop_pos;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].labels[class_index] != 1) continue;
    pop_pos.push_back(i);
    if (spec.predicate(records[i].attributes)) sub_pos.push_back(i);
  }
  if (sub_pos.empty())
    throw std::invalid_argument("bootstrap_disparity: subgroup '" + spec.name +
                                "' has no positive records for class " +
                                std::to_string(class_index));

  Rng rng(cfg.seed);
  auto replicate = [&](const std::vector<std::size_t>& pool) {
    std::size_t hits = 0;
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
      const auto& r = records[pool[(std::size_t)rng.below(pool.size())]];
      if (detail::predicted_positive(r, class_index)) ++hits;
    }
    return (double)hits / (double)cfg.n_samples;
  };
  out.tpr_replicates_subgroup.reserve(cfg.iterations);
  out.tpr_replicates_population.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    out.tpr_replicates_subgroup.push_back(replicate(sub_pos));
    out.tpr_replicates_population.push_back(replicate(pop_pos));
  }
  out.p_value =
      mann_whitney_one_sided_p(out.tpr_replicates_subgroup, out.tpr_replicates_population);
  return out;
}

}  // namespace voxalign
