#pragma once

// Experiment harnesses built on the scalar metrics: modality-drop evaluation
// (per-class AUC deltas under sequence removal at inference) and the
// data-scaling sweep with a monotone-trend report over seed medians.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/rng.hpp"
#include "voxalign/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct ModalityDropResult {
  std::size_t class_index = 0;
  double auc_full = std::numeric_limits<double>::quiet_NaN();
  double auc_dropped = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();  // full minus dropped
  bool defined = false;  // class has both outcomes in the cohort
};

// Evaluates a predictor twice per study: once on every sequence, once with the
// sequences matching `drop` removed at inference. `predict` receives the study
// and a keep-predicate over sequence names and returns one logit per class.
template <typename PredictFn>
std::vector<ModalityDropResult> modality_drop_eval(const std::vector<VolumetricStudy>& studies,
                                                   PredictFn&& predict,
                                                   const std::function<bool(const std::string&)>& drop) {
  if (studies.empty()) throw std::invalid_argument("modality_drop_eval: no studies");
  if (!drop) throw std::invalid_argument("modality_drop_eval: drop predicate missing");
  for (const auto& st : studies) {
    std::size_t kept = 0;
    for (const auto& seq : st.sequences)
      if (!drop(seq.seq_name)) ++kept;
    if (kept == 0)
      throw std::invalid_argument("modality_drop_eval: drop predicate removes every sequence of " +
                                  st.study_id);
  }

  const std::size_t n_classes = studies.front().labels.size();
  const auto keep_all = [](const std::string&) { return true; };
  const auto keep_rest = [&](const std::string& name) { return !drop(name); };

  std::vector<std::vector<double>> full(n_classes), dropped(n_classes);
  std::vector<std::vector<int>> labels(n_classes);
  for (const auto& st : studies) {
    if (st.labels.size() != n_classes)
      throw std::invalid_argument("modality_drop_eval: ragged labels");
    const std::vector<double> lf = predict(st, keep_all);
    const std::vector<double> ld = predict(st, keep_rest);
    if (lf.size() != n_classes || ld.size() != n_classes)
      throw std::invalid_argument("modality_drop_eval: predictor returned wrong class count");
    for (std::size_t c = 0; c < n_classes; ++c) {
      full[c].push_back(lf[c]);
      dropped[c].push_back(ld[c]);
      labels[c].push_back(st.labels[c]);
    }
  }

  std::vector<ModalityDropResult> out(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    out[c].class_index = c;
    const bool has_pos = std::count(labels[c].begin(), labels[c].end(), 1) > 0;
    const bool has_neg = std::count(labels[c].begin(), labels[c].end(), 0) > 0;
    if (!has_pos || !has_neg) continue;
    out[c].auc_full = auroc(full[c], labels[c]);
    out[c].auc_dropped = auroc(dropped[c], labels[c]);
    out[c].delta = out[c].auc_full - out[c].auc_dropped;
    out[c].defined = true;
  }
  return out;
}

// Deterministic cohort subsample: the first ceil(fraction * n) entries of a
// seeded permutation. fraction = 1 returns a reordered copy of everything.
inline std::vector<std::size_t> subsample_indices(std::size_t n, double fraction,
                                                  std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("subsample_indices: fraction must be in (0, 1]");
  if (n == 0) throw std::invalid_argument("subsample_indices: empty cohort");
  Rng rng(seed);
  std::vector<std::size_t> order = rng.permutation(n);
  const std::size_t take = std::max<std::size_t>(1, (std::size_t)std::ceil(fraction * (double)n));
  order.resize(std::min(take, n));
  return order;
}

struct ScalingPoint {
  double fraction = 0.0;
  std::map<std::string, std::vector<double>> runs;  // metric -> per-seed values
  std::map<std::string, double> median;             // metric -> median over seeds
};

struct ScalingReport {
  std::vector<ScalingPoint> points;  // fraction ascending
  std::string trend_metric;
  std::size_t inversions = 0;  // strict decreases of consecutive trend medians
  bool non_decreasing = false;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Runs `run(fraction, seed)` for every fraction x seed, reduces each metric to
// its median over seeds, and reports the monotone trend of `trend_metric`
// across ascending fractions.
template <typename RunFn>
ScalingReport scaling_harness(std::vector<double> fractions,
                              const std::vector<std::uint64_t>& seeds,
                              const std::string& trend_metric, RunFn&& run) {
  if (fractions.empty()) throw std::invalid_argument("scaling_harness: no fractions");
  if (seeds.empty()) throw std::invalid_argument("scaling_harness: no seeds");
  for (double f : fractions)
    if (!(f > 0.0) || f > 1.0)
      throw std::invalid_argument("scaling_harness: fractions must be in (0, 1]");
  std::sort(fractions.begin(), fractions.end());
  if (std::adjacent_find(fractions.begin(), fractions.end()) != fractions.end())
    throw std::invalid_argument("scaling_harness: duplicate fraction");

  ScalingReport rep;
  rep.trend_metric = trend_metric;
  for (double f : fractions) {
    ScalingPoint pt;
    pt.fraction = f;
    for (std::uint64_t s : seeds) {
      const std::map<std::string, double> metrics = run(f, s);
      if (!metrics.count(trend_metric))
        throw std::invalid_argument("scaling_harness: run did not report metric '" +
                                    trend_metric + "'");
      for (const auto& [name, value] : metrics) pt.runs[name].push_back(value);
    }
    for (const auto& [name, values] : pt.runs) pt.median[name] = detail::median_of(values);
    rep.points.push_back(std::move(pt));
  }
  for (std::size_t i = 0; i + 1 < rep.points.size(); ++i)
    if (rep.points[i + 1].median.at(trend_metric) < rep.points[i].median.at(trend_metric))
      ++rep.inversions;
  rep.non_decreasing = rep.inversions == 0;
  return rep;
}

}  // namespace voxalign
