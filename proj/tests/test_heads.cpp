#include <catch2/catch_amalgamated.hpp>

#include "voxalign/core/serialize.hpp"
#include "voxalign/heads/context.hpp"
#include "voxalign/heads/heads.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace voxalign;

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, sd);
  return m;
}

HeadTrainHp fast_hp() {
  HeadTrainHp hp;
  hp.epochs = 30;
  hp.batch_size = 32;
  hp.seed = 5;
  return hp;
}

// Embeddings whose first coordinate linearly encodes a binary class.
struct PlantedBinary {
  Matrix x;
  std::vector<LabelVector> labels;
};

PlantedBinary planted_binary(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  PlantedBinary out{gaussian(n, d, rng), {}};
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = out.x(i, 0) > 0.0 ? 1 : 0;
    out.x(i, 0) += y ? 1.0 : -1.0;  // widen the margin
    out.labels[i] = {y, (int)rng.below(2)};
  }
  return out;
}

}  // namespace

TEST_CASE("context fusion concatenates exact dimensions") {
  Rng rng(3);
  const Matrix emb = gaussian(5, 64, rng);
  HashContextProvider provider(16);
  std::vector<ContextEmbedding> ctx(5);
  for (auto& c : ctx) c.v.assign(16, 0.25);
  const Matrix fused = fuse_context(emb, ctx);
  CHECK(fused.rows() == 5);
  CHECK(fused.cols() == 80);
  CHECK(fused(2, 10) == emb(2, 10));
  CHECK(fused(2, 64) == 0.25);

  ctx[3].v.resize(15);
  CHECK_THROWS_AS(fuse_context(emb, ctx), std::invalid_argument);
  CHECK_THROWS_AS(fuse_context(emb, std::vector<ContextEmbedding>(4)),
                  std::invalid_argument);
}

TEST_CASE("hash context provider is deterministic and order-free over findings") {
  HashContextProvider provider(12, 77);
  VolumetricStudy a;
  a.report.findings = {{2, 0, 1, "x"}, {5, 1, 2, "y"}};
  VolumetricStudy b;
  b.report.findings = {{5, 1, 2, "different text"}, {2, 0, 1, "also different"}};

  const auto ea = provider.embed(a);
  const auto eb = provider.embed(b);
  REQUIRE(ea.dim() == 12);
  CHECK(ea.v == eb.v);  // keyed on (class, laterality, severity) only

  VolumetricStudy c = a;
  c.report.findings[0].class_index = 3;
  CHECK(provider.embed(c).v != ea.v);

  VolumetricStudy normal;  // no findings
  CHECK(provider.embed(normal).v == provider.embed(normal).v);
  CHECK(provider.embed(normal).v != ea.v);

  CHECK_THROWS_AS(HashContextProvider(0), std::invalid_argument);
}

TEST_CASE("positive weights are the exact train-split negative/positive ratios") {
  const auto data = planted_binary(60, 8, 19);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    HeadTrainHp hp = fast_hp();
    hp.epochs = 1;
    hp.seed = seed;
    const auto trained = train_diagnosis_head(data.x, data.labels, hp);
    const auto& rep = trained.report;
    for (std::size_t c = 0; c < 2; ++c) {
      std::size_t pos = 0;
      for (std::size_t i : rep.split.train) pos += (std::size_t)data.labels[i][c];
      REQUIRE(pos > 0);
      const double expected = (double)(rep.split.train.size() - pos) / (double)pos;
      CHECK(rep.pos_weight[c] == expected);  // exact, no tolerance
      CHECK(trained.head.pos_weight()[c] == expected);
    }
  }
}

TEST_CASE("a zero-positive class is excluded with a warning") {
  auto data = planted_binary(40, 6, 23);
  for (auto& row : data.labels) row.push_back(0);  // class 2 never fires
  const auto trained = train_diagnosis_head(data.x, data.labels, fast_hp());
  const auto& rep = trained.report;
  CHECK_FALSE(rep.excluded[0]);
  CHECK(rep.excluded[2]);
  CHECK(std::isnan(rep.pos_weight[2]));
  CHECK(std::isnan(rep.per_class_val_auroc[2]));
  REQUIRE(rep.warnings.size() == 1);
  CHECK(rep.warnings[0].find("class 2") != std::string::npos);

  // The excluded column predicts the uninformative constant.
  const Matrix probs = trained.head.predict(data.x);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    CHECK(probs(r, 2) == 0.5);
    CHECK(probs(r, 0) > 0.0);
    CHECK(probs(r, 0) < 1.0);
  }

  std::vector<LabelVector> hopeless(40, LabelVector{0, 0, 0});
  CHECK_THROWS_AS(train_diagnosis_head(data.x, hopeless, fast_hp()),
                  std::invalid_argument);
}

TEST_CASE("a linearly separable class reaches high validation auroc") {
  const auto data = planted_binary(160, 12, 31);
  const auto trained = train_diagnosis_head(data.x, data.labels, fast_hp());
  CHECK(trained.report.per_class_val_auroc[0] >= 0.95);
  // The noise class stays unlearnable.
  CHECK(trained.report.per_class_val_auroc[1] < 0.85);
}

TEST_CASE("dropping an output column leaves the other classes byte-identical") {
  const auto data = planted_binary(80, 8, 47);
  const auto trained = train_diagnosis_head(data.x, data.labels, fast_hp());
  const DiagnosisHead reduced = trained.head.without_class(1);
  REQUIRE(reduced.n_classes() == 1);

  const Matrix full = trained.head.logits(data.x);
  const Matrix cut = reduced.logits(data.x);
  for (std::size_t r = 0; r < full.rows(); ++r)
    CHECK(cut(r, 0) == full(r, 0));  // bitwise: the output layer factorizes

  CHECK_THROWS_AS(trained.head.without_class(5), std::out_of_range);
  CHECK_THROWS_AS(reduced.without_class(0), std::invalid_argument);
}

TEST_CASE("head training never touches an encoder parameter store") {
  ParamStore encoder;
  Rng rng(9);
  encoder.add("enc.w", gaussian(6, 6, rng));
  encoder.add("enc.b", Matrix(1, 6, 0.1), false);
  const std::uint64_t before = store_fingerprint(encoder);

  const auto data = planted_binary(40, 6, 53);
  (void)train_diagnosis_head(data.x, data.labels, fast_hp());
  CHECK(store_fingerprint(encoder) == before);

  // The fingerprint itself is value-sensitive.
  encoder.at("enc.b").value(0, 3) += 1e-9;
  CHECK(store_fingerprint(encoder) != before);
}

TEST_CASE("acuity head learns ordered tiers and its priority tracks them") {
  Rng rng(61);
  const std::size_t n = 180;
  Matrix x = gaussian(n, 8, rng, 0.3);
  std::vector<std::size_t> tiers(n);
  for (std::size_t i = 0; i < n; ++i) {
    tiers[i] = rng.below(3);
    x(i, 0) = (double)tiers[i] + rng.normal(0.0, 0.25);
  }

  HeadTrainHp hp = fast_hp();
  hp.lr = 1e-2;
  hp.epochs = 60;
  const auto trained = train_acuity_head(x, tiers, hp);
  CHECK(trained.report.best_val_accuracy >= 0.85);

  const Matrix probs = trained.head.class_probs(x);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) sum += probs(r, c);
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }

  const auto prio = trained.head.priority(x);
  std::vector<double> ord(tiers.begin(), tiers.end());
  CHECK(pearson(prio, ord) > 0.5);
  for (double p : prio) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("acuity confuses adjacent tiers more than the extremes") {
  Rng rng(67);
  const std::size_t n = 240;
  Matrix x = gaussian(n, 6, rng, 0.2);
  std::vector<std::size_t> tiers(n);
  for (std::size_t i = 0; i < n; ++i) {
    tiers[i] = rng.below(3);
    x(i, 0) = (double)tiers[i] + rng.normal(0.0, 0.55);  // adjacent overlap
  }
  const auto trained = train_acuity_head(x, tiers, fast_hp());
  const auto pred = trained.head.predict_class(x);
  std::size_t adjacent = 0, extreme = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = tiers[i], p = pred[i];
    if (t == p) continue;
    const std::size_t gap = t > p ? t - p : p - t;
    (gap == 2 ? extreme : adjacent)++;
  }
  CHECK(extreme < adjacent);
}

TEST_CASE("ordinal acuity variants train on the same data") {
  Rng rng(71);
  const std::size_t n = 150;
  Matrix x = gaussian(n, 6, rng, 0.2);
  std::vector<std::size_t> tiers(n);
  for (std::size_t i = 0; i < n; ++i) {
    tiers[i] = rng.below(3);
    x(i, 0) = (double)tiers[i] + rng.normal(0.0, 0.2);
  }
  HeadTrainHp hp = fast_hp();
  hp.lr = 1e-2;
  hp.epochs = 60;
  for (AcuityLoss mode : {AcuityLoss::kBinaryOrdinal, AcuityLoss::kExpectedOrdinalL2}) {
    const auto trained = train_acuity_head(x, tiers, hp, mode);
    CHECK(trained.report.best_val_accuracy >= 0.8);
    const Matrix probs = trained.head.class_probs(x);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        sum += probs(r, c);
        CHECK(probs(r, c) >= 0.0);
      }
      CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
    const auto prio = trained.head.priority(x);
    for (double p : prio) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("an all-normal cohort trains to perfect acuity accuracy") {
  Rng rng(73);
  const Matrix x = gaussian(40, 6, rng);
  HeadTrainHp hp = fast_hp();
  hp.lr = 1e-2;
  const auto trained = train_acuity_head(x, std::vector<std::size_t>(40, 0), hp);
  CHECK(trained.report.best_val_accuracy == 1.0);
  CHECK_THROWS_AS(train_acuity_head(x, std::vector<std::size_t>(40, 3), hp),
                  std::invalid_argument);
}

TEST_CASE("age regression beats the population standard deviation") {
  Rng rng(83);
  const std::size_t n = 200;
  Matrix x = gaussian(n, 8, rng, 0.3);
  std::vector<double> age(n);
  for (std::size_t i = 0; i < n; ++i) {
    age[i] = rng.uniform(18.0, 90.0);
    x(i, 0) = (age[i] - 54.0) / 36.0 + rng.normal(0.0, 0.05);
  }
  HeadTrainHp hp = fast_hp();
  hp.epochs = 120;
  hp.lr = 3e-3;
  const auto trained = train_age_head(x, age, hp);

  double mean = 0.0;
  for (double a : age) mean += a;
  mean /= (double)n;
  double ss = 0.0;
  for (double a : age) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / (double)n);
  CHECK(trained.report.population_sd == Catch::Approx(sd));
  CHECK(trained.report.val_mae < sd);
}

TEST_CASE("a constant-age cohort regresses to near-zero error") {
  Rng rng(89);
  const Matrix x = gaussian(60, 6, rng);
  HeadTrainHp hp = fast_hp();
  hp.epochs = 60;
  const auto trained = train_age_head(x, std::vector<double>(60, 47.0), hp);
  CHECK(trained.report.val_mae < 1.0);
}

TEST_CASE("label-relevant context lifts a class the embeddings cannot carry") {
  Rng rng(97);
  const std::size_t n = 160;
  const Matrix mri = gaussian(n, 10, rng);  // pure noise w.r.t. the class

  std::vector<VolumetricStudy> studies(n);
  std::vector<LabelVector> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = (int)rng.below(2);
    labels[i] = {y};
    if (y) studies[i].report.findings.push_back({0, 0, 1, "finding"});
  }

  HeadTrainHp hp = fast_hp();
  const auto mri_only = train_diagnosis_head(mri, labels, hp);

  HashContextProvider provider(8);
  const Matrix fused = fuse_context(mri, embed_studies(provider, studies));
  CHECK(fused.cols() == 18);
  const auto with_ctx = train_diagnosis_head(fused, labels, hp);

  CHECK(with_ctx.report.per_class_val_auroc[0] >= 0.95);
  CHECK(mri_only.report.per_class_val_auroc[0] < 0.8);

  // Zero-vector context degrades gracefully to the MRI-only setting: the
  // extra inputs carry nothing, so the planted coordinate still dominates.
  const auto planted = planted_binary(n, 10, 101);
  std::vector<ContextEmbedding> zero_ctx(n);
  for (auto& c : zero_ctx) c.v.assign(8, 0.0);
  const auto plain = train_diagnosis_head(planted.x, planted.labels, hp);
  const auto padded =
      train_diagnosis_head(fuse_context(planted.x, zero_ctx), planted.labels, hp);
  CHECK(plain.report.per_class_val_auroc[0] >= 0.95);
  CHECK(padded.report.per_class_val_auroc[0] >= 0.95);
}
