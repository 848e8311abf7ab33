#pragma once

// Scalar evaluation metrics over prediction records: AUROC with midrank tie
// handling, macro AUC, Pearson correlation, reliability diagrams, neighbor
// purity (NPR), and the logit/label co-occurrence matrix.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/eval/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct PredictionRecord {
  std::string study_id;
  std::vector<double> logits;  // one per class, already through sigmoid or not;
                               // AUROC is rank-based so either works
  LabelVector labels;
  SensitiveAttributes attributes;
  std::string split;
};

// Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked correctly,
// ties counted half. Computed through midranks, which is exact in doubles for
// the sample sizes used here.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: score/label size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    (y == 1 ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: needs at least one positive and one negative");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("auroc: non-finite score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups; accumulate the positive rank sum directly.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (double)(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double u = pos_rank_sum - 0.5 * (double)n_pos * (double)(n_pos + 1);
  return u / ((double)n_pos * (double)n_neg);
}

// Per-class AUROC over records; classes lacking both outcomes get NaN.
inline std::vector<double> per_class_auroc(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("per_class_auroc: no records");
  const std::size_t L = records[0].labels.size();
  std::vector<double> out(L, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < L; ++c) {
    std::vector<double> s;
    std::vector<int> y;
    s.reserve(records.size());
    y.reserve(records.size());
    for (const auto& r : records) {
      if (r.labels.size() != L || r.logits.size() != L)
        throw std::invalid_argument("per_class_auroc: ragged record");
      s.push_back(r.logits[c]);
      y.push_back(r.labels[c]);
    }
    const bool has_pos = std::count(y.begin(), y.end(), 1) > 0;
    const bool has_neg = std::count(y.begin(), y.end(), 0) > 0;
    if (has_pos && has_neg) out[c] = auroc(s, y);
  }
  return out;
}

// Unweighted mean of the defined per-class AUROCs.
inline double mauc(const std::vector<PredictionRecord>& records) {
  const auto per = per_class_auroc(records);
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : per)
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mauc: no class has both outcomes");
  return sum / (double)n;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson: need two same-length samples");
  const double n = (double)x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::invalid_argument("pearson: zero variance sample");
  return sxy / std::sqrt(sxx * syy);
}

struct ReliabilityBin {
  double lo = 0.0, hi = 0.0;     // bin edges over predicted probability
  double mean_confidence = 0.0;  // mean predicted probability inside the bin
  double balanced_accuracy = 0.0;
  std::size_t count = 0;
};

// Probabilities binned in fixed 0.1-wide intervals; per bin, the balanced
// accuracy of the 0.5-thresholded prediction. Classes absent from a bin do
// not dilute the balance: the mean runs over the recalls that are defined.
inline std::vector<ReliabilityBin> reliability_diagram(const std::vector<double>& probs,
                                                       const std::vector<int>& labels,
                                                       double bin_width = 0.1) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("reliability_diagram: size mismatch");
  if (bin_width <= 0.0 || bin_width > 1.0)
    throw std::invalid_argument("reliability_diagram: bad bin width");
  const std::size_t n_bins = (std::size_t)std::ceil(1.0 / bin_width - 1e-12);
  std::vector<ReliabilityBin> bins(n_bins);
  std::vector<std::array<std::size_t, 4>> tally(n_bins, {0, 0, 0, 0});  // tp, fn, tn, fp
  std::vector<double> conf_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("reliability_diagram: probability outside [0,1]");
    std::size_t b = (std::size_t)(p / bin_width);
    if (b >= n_bins) b = n_bins - 1;  // p == 1.0 lands in the top bin
    const int pred = p >= 0.5 ? 1 : 0;
    if (labels[i] == 1)
      tally[b][pred == 1 ? 0 : 1]++;
    else
      tally[b][pred == 0 ? 2 : 3]++;
    conf_sum[b] += p;
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = (double)b * bin_width;
    bins[b].hi = std::min(1.0, (double)(b + 1) * bin_width);
    const auto& [tp, fn, tn, fp] = tally[b];
    bins[b].count = tp + fn + tn + fp;
    if (bins[b].count == 0) continue;
    bins[b].mean_confidence = conf_sum[b] / (double)bins[b].count;
    double acc = 0.0;
    std::size_t parts = 0;
    if (tp + fn > 0) {
      acc += (double)tp / (double)(tp + fn);
      ++parts;
    }
    if (tn + fp > 0) {
      acc += (double)tn / (double)(tn + fp);
      ++parts;
    }
    bins[b].balanced_accuracy = acc / (double)parts;
  }
  return bins;
}

struct NprResult {
  double npr_all = 0.0;  // averaged over every study
  double npr_pos = 0.0;  // averaged over positive studies only
  double dataset_rate = 0.0;
};

// Normalized positive rate of the k nearest cosine neighbors (self excluded).
// Label-independent embeddings give 1 in expectation.
inline NprResult npr(const Matrix& embeddings, const std::vector<int>& labels,
                     std::size_t k = 20) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n) throw std::invalid_argument("npr: label count mismatch");
  if (k == 0 || n < k + 1)
    throw std::invalid_argument("npr: need at least k+1 studies");
  const std::size_t n_pos = (std::size_t)std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0) throw std::invalid_argument("npr: class has no positives");
  const double rate = (double)n_pos / (double)n;

  const Matrix sim = cosine_similarity(embeddings, embeddings);
  double sum_all = 0.0, sum_pos = 0.0;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    idx.erase(idx.begin() + (std::ptrdiff_t)i);
    std::nth_element(idx.begin(), idx.begin() + (std::ptrdiff_t)(k - 1), idx.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
                       return a < b;  // stable under ties
                     });
    std::size_t hits = 0;
    for (std::size_t t = 0; t < k; ++t) hits += (std::size_t)(labels[idx[t]] == 1);
    const double nr = (double)hits / (double)k;
    sum_all += nr;
    if (labels[i] == 1) sum_pos += nr;
  }
  NprResult r;
  r.dataset_rate = rate;
  r.npr_all = (sum_all / (double)n) / rate;
  r.npr_pos = (sum_pos / (double)n_pos) / rate;
  return r;
}

struct CooccurrenceResult {
  Matrix auc;         // auc(c, l): logit of class c scored against label l
  Matrix label_corr;  // Pearson correlation between label columns
};

// Cross-class AUC matrix; the diagonal is the ordinary per-class AUROC.
// Degenerate cells (single-outcome labels, zero-variance columns) are NaN.
inline CooccurrenceResult cooccurrence_matrix(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("cooccurrence_matrix: no records");
  const std::size_t L = records[0].labels.size();
  CooccurrenceResult out{Matrix(L, L, std::numeric_limits<double>::quiet_NaN()),
                         Matrix(L, L, std::numeric_limits<double>::quiet_NaN())};
  std::vector<std::vector<double>> scores(L, std::vector<double>(records.size()));
  std::vector<std::vector<int>> labels(L, std::vector<int>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].labels.size() != L || records[i].logits.size() != L)
      throw std::invalid_argument("cooccurrence_matrix: ragged record");
    for (std::size_t c = 0; c < L; ++c) {
      scores[c][i] = records[i].logits[c];
      labels[c][i] = records[i].labels[c];
    }
  }
  for (std::size_t c = 0; c < L; ++c) {
    for (std::size_t l = 0; l < L; ++l) {
      const bool has_pos = std::count(labels[l].begin(), labels[l].end(), 1) > 0;
      const bool has_neg = std::count(labels[l].begin(), labels[l].end(), 0) > 0;
      if (has_pos && has_neg) out.auc(c, l) = auroc(scores[c], labels[l]);
      std::vector<double> xc(labels[c].begin(), labels[c].end());
      std::vector<double> xl(labels[l].begin(), labels[l].end());
      try {
        out.label_corr(c, l) = pearson(xc, xl);
      } catch (const std::invalid_argument&) {
        // zero-variance label column stays NaN
      }
    }
  }
  return out;
}

}  // namespace voxalign
