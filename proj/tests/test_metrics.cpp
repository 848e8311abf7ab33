#include <catch2/catch_amalgamated.hpp>

#include "voxalign/core/rng.hpp"
#include "voxalign/eval/metrics.hpp"
#include "voxalign/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace voxalign;

namespace {

// Independent oracle: direct positive>negative pair counting, ties half.
double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        num += 1.0;
      else if (s[i] == s[j])
        num += 0.5;
    }
  }
  return num / (double)pairs;
}

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, sd);
  return m;
}

}  // namespace

TEST_CASE("auroc equals brute-force pair counting, ties included") {
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Catch::Approx(0.75));

  // Perfect separation and perfect anti-separation.
  CHECK(auroc({1, 2, 3, 10, 11}, {0, 0, 0, 1, 1}) == 1.0);
  CHECK(auroc({10, 11, 1, 2, 3}, {0, 0, 1, 1, 1}) == 0.0);

  // Random instances with deliberate tie mass: scores drawn from 8 levels.
  Rng rng(404);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 20 + rng.below(180);
    std::vector<double> s(n);
    std::vector<int> y(n);
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = (double)rng.below(8) / 7.0;
      y[i] = (int)rng.below(2);
      (y[i] ? pos : neg) = true;
    }
    if (!pos) y[0] = 1;
    if (!neg) y[1] = 0;
    CHECK(auroc(s, y) == auroc_pairs(s, y));  // exact, not approximate
  }
}

TEST_CASE("auroc on label-independent scores sits near one half") {
  Rng rng(11);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    y[i] = (int)rng.below(2);
  }
  CHECK_THAT(auroc(s, y), Catch::Matchers::WithinAbs(0.5, 0.02));
}

TEST_CASE("auroc input contracts") {
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.1}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.1, std::nan("")}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 2}), std::invalid_argument);
}

TEST_CASE("per-class auroc skips single-outcome classes and mauc averages the rest") {
  std::vector<PredictionRecord> recs;
  // Class 0 separable, class 1 anti-separable, class 2 all-negative.
  const double logits[4][3] = {{0.9, 0.1, 0.5}, {0.8, 0.2, 0.5}, {0.1, 0.9, 0.5}, {0.2, 0.8, 0.5}};
  const int labels[4][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 0}, {0, 0, 0}};
  for (int i = 0; i < 4; ++i) {
    PredictionRecord r;
    r.study_id = "s" + std::to_string(i);
    r.logits.assign(logits[i], logits[i] + 3);
    r.labels.assign(labels[i], labels[i] + 3);
    recs.push_back(r);
  }
  const auto per = per_class_auroc(recs);
  REQUIRE(per.size() == 3);
  CHECK(per[0] == 1.0);
  CHECK(per[1] == 0.0);
  CHECK(std::isnan(per[2]));
  CHECK(mauc(recs) == Catch::Approx(0.5));

  recs[1].labels.pop_back();
  CHECK_THROWS_AS(per_class_auroc(recs), std::invalid_argument);
}

TEST_CASE("pearson correlation on hand samples") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == Catch::Approx(1.0));
  CHECK(pearson({1, 2, 3}, {6, 4, 2}) == Catch::Approx(-1.0));
  CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(0.8));
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(pearson({1}, {2}), std::invalid_argument);
}

TEST_CASE("grouped retrieval drops the remainder and scores per seeded group") {
  // Orthogonal paired embeddings: every group retrieves perfectly.
  const std::size_t n = 57;
  Matrix eye(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  CHECK(grouped_retrieval(eye, eye, 10, 7) == 1.0);

  // Label-free random pairs: top-1 within a group of 10 sits near 1/10.
  Rng rng(21);
  const Matrix a = gaussian(400, 12, rng), b = gaussian(400, 12, rng);
  const double acc = grouped_retrieval(a, b, 10, 5);
  CHECK(acc < 0.25);

  // Deterministic per seed.
  CHECK(grouped_retrieval(a, b, 10, 5) == acc);

  CHECK_THROWS_AS(grouped_retrieval(eye, eye, 100, 1), std::invalid_argument);
  CHECK_THROWS_AS(grouped_retrieval(eye, eye, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(grouped_retrieval(eye, Matrix(n + 1, n, 0.0), 10, 1),
                  std::invalid_argument);
}

TEST_CASE("reliability diagram bins probabilities and scores balance") {
  // Oracle classifier: probability equals the label.
  std::vector<double> p;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    p.push_back(i % 2 ? 1.0 : 0.0);
    y.push_back(i % 2);
  }
  auto bins = reliability_diagram(p, y);
  REQUIRE(bins.size() == 10);
  CHECK(bins[9].count == 20);
  CHECK(bins[9].balanced_accuracy == 1.0);
  CHECK(bins[0].count == 20);
  CHECK(bins[0].balanced_accuracy == 1.0);
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == 40);

  // Constant 0.5 output occupies exactly one bin.
  bins = reliability_diagram(std::vector<double>(30, 0.5), std::vector<int>(30, 1));
  std::size_t nonempty = 0;
  for (const auto& b : bins) nonempty += (std::size_t)(b.count > 0);
  CHECK(nonempty == 1);
  CHECK(bins[5].count == 30);
  CHECK(bins[5].mean_confidence == Catch::Approx(0.5));

  // Overconfident model: labels fire at rate p^2 < p, so upper bins fall
  // below the identity line.
  Rng rng(33);
  p.clear();
  y.clear();
  for (int i = 0; i < 4000; ++i) {
    const double q = rng.uniform();
    p.push_back(q);
    y.push_back(rng.uniform() < q * q ? 1 : 0);
  }
  bins = reliability_diagram(p, y);
  for (std::size_t bi = 6; bi < 9; ++bi) {
    REQUIRE(bins[bi].count > 100);
    CHECK(bins[bi].balanced_accuracy < bins[bi].mean_confidence);
  }

  CHECK_THROWS_AS(reliability_diagram({1.2}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(reliability_diagram({0.5}, {1, 0}), std::invalid_argument);
}

TEST_CASE("npr normalizes neighbor purity by the dataset rate") {
  // All-positive dataset: NPR is exactly 1 whatever the embeddings.
  Rng rng(91);
  Matrix e = gaussian(40, 6, rng);
  const auto all_pos = npr(e, std::vector<int>(40, 1), 5);
  CHECK(all_pos.npr_all == 1.0);
  CHECK(all_pos.npr_pos == 1.0);

  // The published-scale arithmetic: neighbor rate 4.057/20 against dataset
  // rate 335/221147.
  CHECK_THAT((4.057 / 20.0) / (335.0 / 221147.0),
             Catch::Matchers::WithinAbs(133.91, 0.01));

  // Label-independent embeddings: NPR near 1.
  Matrix big = gaussian(2000, 8, rng);
  std::vector<int> labels(2000, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (int)rng.below(4) == 0;
  const auto base = npr(big, labels, 20);
  CHECK(base.npr_all > 0.8);
  CHECK(base.npr_all < 1.2);

  // Planted cluster: positives huddle in a tight ball far from the rest.
  Matrix planted = gaussian(300, 4, rng, 0.05);
  std::vector<int> plabels(300, 0);
  for (std::size_t i = 0; i < 30; ++i) {
    plabels[i] = 1;
    planted(i, 0) += 50.0;
  }
  const auto hot = npr(planted, plabels, 10);
  CHECK(hot.npr_pos > 5.0);
  CHECK(hot.npr_pos <= 1.0 / hot.dataset_rate + 1e-9);

  CHECK_THROWS_AS(npr(e, std::vector<int>(40, 0), 5), std::invalid_argument);
  CHECK_THROWS_AS(npr(e, std::vector<int>(40, 1), 40), std::invalid_argument);
}

TEST_CASE("cooccurrence matrix holds per-class auroc on its diagonal") {
  Rng rng(55);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 200; ++i) {
    PredictionRecord r;
    const int y0 = (int)rng.below(2);
    const int y1 = rng.uniform() < 0.8 ? y0 : 1 - y0;  // correlated with class 0
    r.labels = {y0, y1, 0};
    r.logits = {y0 + rng.normal(0.0, 0.4), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
    recs.push_back(r);
  }
  const auto res = cooccurrence_matrix(recs);
  const auto per = per_class_auroc(recs);
  CHECK(res.auc(0, 0) == per[0]);
  CHECK(res.auc(1, 1) == per[1]);
  CHECK(std::isnan(res.auc(2, 2)));  // class 2 has no positives

  // Class 0's logit also ranks class 1's labels well through the correlation.
  CHECK(res.auc(0, 1) > 0.7);

  CHECK(res.label_corr(0, 0) == Catch::Approx(1.0));
  CHECK(res.label_corr(0, 1) == Catch::Approx(res.label_corr(1, 0)));
  CHECK(res.label_corr(0, 1) > 0.3);
  CHECK(std::isnan(res.label_corr(2, 2)));  // constant label column
}
