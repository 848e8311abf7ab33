#include "voxalign/cohort/generate.hpp"
#include "voxalign/cohort/io.hpp"
#include "voxalign/cohort/types.hpp"
#include "voxalign/cohort/volume.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

using namespace voxalign;

namespace {

CohortConfig small_config(std::size_t n) {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = n;
  return cfg;
}

// Mean intensity over a mask region on the sequence where the class is most
// conspicuous; negatives use a label-independent placebo region.
double masked_mean_feature(const CohortConfig& cfg, const VolumetricStudy& st,
                           std::size_t cls) {
  const bool want_t2 = cfg.classes[cls].t2_contrast > cfg.classes[cls].t1_contrast;
  const SequenceVolume* seq = nullptr;
  for (const auto& sv : st.sequences)
    if (sv.t2_like == want_t2 && sv.orientation == kIdentityPerm) {
      seq = &sv;
      break;
    }
  REQUIRE(seq != nullptr);
  Volume3D region;
  auto it = st.masks.find(cls);
  if (st.labels[cls] == 1) {
    REQUIRE(it != st.masks.end());
    region = it->second;
  } else {
    region = placebo_mask(cfg, st.study_id, cls);
  }
  double sum = 0.0, count = 0.0;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region.data[i] > 0.5) {
      sum += seq->voxels.data[i];
      count += 1.0;
    }
  REQUIRE(count > 0.0);
  return sum / count;
}

// Pair-counting AUROC with midrank tie handling; the reference the metrics
// module is later checked against.
double pair_count_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  return pairs > 0.0 ? wins / pairs : 0.5;
}

}  // namespace

TEST_CASE("forced prevalence yields all-positive class and empty class") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 4;
  cfg.classes.resize(2);
  cfg.classes[0].prevalence = 1.0;
  cfg.classes[1].prevalence = 0.0;
  cfg.cooccur_source = 0;
  cfg.cooccur_target = 1;
  cfg.cooccur_prob = 0.0;
  auto cohort = generate_cohort(cfg, 7);
  REQUIRE(cohort.size() == 4);
  for (const auto& st : cohort) {
    CHECK(st.labels[0] == 1);
    CHECK(st.labels[1] == 0);
  }
}

TEST_CASE("same config and seed give bit-identical cohorts") {
  CohortConfig cfg = small_config(500);
  auto a = generate_cohort(cfg, 1);
  auto b = generate_cohort(cfg, 1);
  CHECK(cohort_fingerprint(a) == cohort_fingerprint(b));
  auto c = generate_cohort(cfg, 2);
  CHECK(cohort_fingerprint(a) != cohort_fingerprint(c));
}

TEST_CASE("normal fraction lands within the binomial tolerance band") {
  CohortConfig cfg = small_config(500);
  cfg.normal_fraction = 0.4;
  auto cohort = generate_cohort(cfg, 11);
  std::size_t normals = 0;
  for (const auto& st : cohort) {
    bool any = false;
    for (int v : st.labels) any = any || v;
    if (!any) ++normals;
  }
  const double frac = (double)normals / 500.0;
  CHECK(frac >= 0.36);
  CHECK(frac <= 0.44);
}

TEST_CASE("every study satisfies the structural invariants") {
  CohortConfig cfg = small_config(120);
  auto cohort = generate_cohort(cfg, 3);
  for (const auto& st : cohort) {
    CHECK(st.sequences.size() >= 2);
    for (const auto& sv : st.sequences) {
      CHECK(sv.voxels.size() == cfg.grid_x * cfg.grid_y * cfg.grid_z);
      bool in_range = true;
      for (double v : sv.voxels.data)
        in_range = in_range && std::isfinite(v) && v >= 0.0 && v <= 1.0;
      CHECK(in_range);
    }
    for (std::size_t c = 0; c < st.labels.size(); ++c) {
      if (st.labels[c] == 1) {
        auto it = st.masks.find(c);
        REQUIRE(it != st.masks.end());
        double voxels = 0.0;
        for (double v : it->second.data) voxels += v;
        CHECK(voxels > 0.0);
        CHECK(it->second.dx == cfg.grid_x);
        CHECK(it->second.dy == cfg.grid_y);
        CHECK(it->second.dz == cfg.grid_z);
      } else {
        CHECK(st.masks.find(c) == st.masks.end());
      }
    }
    // Findings appear verbatim in prose.
    for (const auto& f : st.report.findings)
      CHECK(st.report.prose.find(f.text) != std::string::npos);
  }
}

TEST_CASE("masked-region intensity linearly separates every planted class") {
  CohortConfig cfg = small_config(500);
  auto cohort = generate_cohort(cfg, 1);
  for (std::size_t c = 0; c < cfg.n_classes(); ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    std::size_t positives = 0;
    for (const auto& st : cohort) {
      scores.push_back(masked_mean_feature(cfg, st, c));
      labels.push_back(st.labels[c]);
      positives += (std::size_t)st.labels[c];
    }
    REQUIRE(positives >= 5);
    INFO("class " << cfg.classes[c].name);
    CHECK(pair_count_auroc(scores, labels) >= 0.95);
  }
}

TEST_CASE("weekend turnaround odds ratio is recovered within 20 percent") {
  CohortConfig cfg = small_config(2000);
  cfg.bias.b0 = -0.85;
  cfg.bias.b_weekend = std::log(2.5);
  cfg.bias.b_quartile = 0.0;
  cfg.bias.b_region_hi = 0.0;
  auto cohort = generate_cohort(cfg, 5);
  double a = 0, b = 0, c = 0, d = 0;  // a: weekend&slow, b: weekend&fast, ...
  for (const auto& st : cohort) {
    const bool slow = st.attributes.turnaround_days > cfg.bias.slow_threshold_days;
    if (st.attributes.weekend_flag)
      (slow ? a : b) += 1.0;
    else
      (slow ? c : d) += 1.0;
  }
  const double or_hat = (a * d) / (b * c);
  CHECK(or_hat >= 2.0);
  CHECK(or_hat <= 3.0);
}

TEST_CASE("attribute marginals match configuration at sampling tolerance") {
  CohortConfig cfg = small_config(2000);
  auto cohort = generate_cohort(cfg, 9);
  double weekend = 0.0, male = 0.0, age_sum = 0.0;
  for (const auto& st : cohort) {
    weekend += st.attributes.weekend_flag;
    male += st.attributes.sex;
    age_sum += st.attributes.age_years;
    CHECK(st.attributes.turnaround_days >= 0.0);
  }
  CHECK(weekend / 2000.0 == Catch::Approx(2.0 / 7.0).margin(0.03));
  CHECK(male / 2000.0 == Catch::Approx(0.5).margin(0.03));
  CHECK(age_sum / 2000.0 == Catch::Approx(54.0).margin(1.5));
}

TEST_CASE("co-occurrence rule links obstructive mass to ventriculomegaly") {
  CohortConfig cfg = small_config(2000);
  auto cohort = generate_cohort(cfg, 13);
  double sources = 0.0, linked = 0.0;
  for (const auto& st : cohort)
    if (st.labels[cfg.cooccur_source] == 1) {
      sources += 1.0;
      linked += st.labels[cfg.cooccur_target];
    }
  REQUIRE(sources >= 30.0);
  CHECK(linked / sources >= 0.7);
}

TEST_CASE("acuity and referral mapping follows max-rank and union semantics") {
  auto classes = default_classes();
  MappingTable table = mapping_table_from_classes(classes);
  const std::size_t L = classes.size();

  LabelVector subdural(L, 0);
  subdural[0] = 1;  // subdural-hematoma
  auto [a1, r1] = acuity_referral_map(subdural, table);
  CHECK(a1 == Acuity::high);
  CHECK(r1[0] == 1);  // neurosurgery

  LabelVector cyst(L, 0);
  cyst[10] = 1;  // arachnoid-cyst
  auto [a2, r2] = acuity_referral_map(cyst, table);
  CHECK(a2 == Acuity::normal);
  CHECK(std::count(r2.begin(), r2.end(), 1) == 0);

  LabelVector none(L, 0);
  auto [a3, r3] = acuity_referral_map(none, table);
  CHECK(a3 == Acuity::normal);
  CHECK(std::count(r3.begin(), r3.end(), 1) == 0);

  LabelVector multi(L, 0);
  multi[10] = 1;  // normal acuity
  multi[4] = 1;   // medium, oncology
  multi[8] = 1;   // high, neurology+stroke
  auto [a4, r4] = acuity_referral_map(multi, table);
  CHECK(a4 == Acuity::high);
  CHECK(r4[1] == 1);
  CHECK(r4[2] == 1);
  CHECK(r4[3] == 1);

  LabelVector wrong(L + 1, 0);
  CHECK_THROWS(acuity_referral_map(wrong, table));
}

TEST_CASE("invalid configs are rejected with the offending field named") {
  CohortConfig cfg = default_cohort_config();
  cfg.sequences.clear();
  CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("sequences"));

  cfg = default_cohort_config();
  cfg.classes[2].prevalence = 1.5;
  CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("prevalence"));

  cfg = default_cohort_config();
  cfg.grid_z = 0;
  CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("grid"));
}

TEST_CASE("axis permutation round-trips and tags match stored dims") {
  CohortConfig cfg = small_config(8);
  auto cohort = generate_cohort(cfg, 21);
  for (const auto& st : cohort)
    for (const auto& sv : st.sequences) {
      Volume3D back = permute_axes(sv.voxels, inverse_perm(sv.orientation));
      CHECK(back.dx == cfg.grid_x);
      CHECK(back.dy == cfg.grid_y);
      CHECK(back.dz == cfg.grid_z);
      if (sv.orientation == kIdentityPerm) CHECK(back.data == sv.voxels.data);
    }
  Volume3D v(3, 4, 5);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = (double)i;
  AxisPerm p{2, 0, 1};
  Volume3D w = permute_axes(v, p);
  CHECK(w.dx == 5);
  CHECK(w.dy == 3);
  CHECK(w.dz == 4);
  Volume3D back = permute_axes(w, inverse_perm(p));
  CHECK(back.data == v.data);
}

TEST_CASE("cohort writes to disk and loads back identically") {
  CohortConfig cfg = small_config(12);
  auto cohort = generate_cohort(cfg, 17);
  const std::string dir = "_tmp_cohort_roundtrip";
  std::filesystem::remove_all(dir);
  write_cohort(dir, cohort, mapping_table_from_classes(cfg.classes));
  auto loaded = load_cohort(dir);
  REQUIRE(loaded.size() == cohort.size());
  CHECK(cohort_fingerprint(loaded) == cohort_fingerprint(cohort));
  std::filesystem::remove_all(dir);
}
