#pragma once

// Aggregated fairness report: per-(class, subgroup) disparities with bootstrap
// p-values, odds-ratio tables for operational bias exposures, intersectional
// and diagnostic-subgroup sections. Bonferroni correction is applied here, at
// the report layer, per family of tests.

#include "voxalign/fairness/disparity.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct DisparityEntry {
  DisparityResult result;
  double p_bonferroni = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;  // |disparity| beyond the report threshold
};

struct ExposureOddsEntry {
  std::string exposure;    // "weekend", "region=3", "population_quartile=0", ...
  ContingencyTable table;  // exposure x slow-turnaround counts
  double odds_ratio = 0.0;
  bool haldane_corrected = false;
  double p_raw = 1.0;
  double p_bonferroni = 1.0;
};

// Subgroup defined by carrying another diagnosis rather than by a sensitive
// attribute: TPR gap for class_under_test among records positive for
// conditioning_class.
struct DiagnosticSubgroupEntry {
  std::size_t class_under_test = 0;
  std::size_t conditioning_class = 0;
  double tpr_subgroup = std::numeric_limits<double>::quiet_NaN();
  double tpr_population = std::numeric_limits<double>::quiet_NaN();
  double disparity = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
  bool flagged = false;
  std::string note;
};

struct FairnessReportConfig {
  double threshold = 0.1;             // |disparity| flag level
  double slow_turnaround_days = 2.0;  // exposure outcome: turnaround beyond this
  bool run_bootstrap = true;
  BootstrapConfig bootstrap;
};

struct FairnessReport {
  double threshold = 0.1;
  std::vector<DisparityEntry> subgroups;
  std::vector<DisparityEntry> intersectional;
  std::vector<ExposureOddsEntry> exposure_odds;
  std::vector<DiagnosticSubgroupEntry> diagnostic;
};

namespace detail {

inline bool disparity_flagged(const DisparityResult& r, double threshold) {
  return (r.tpr_defined && std::abs(r.tpr_disparity) > threshold) ||
         (r.fpr_defined && std::abs(r.fpr_disparity) > threshold);
}

}  // namespace detail

inline FairnessReport fairness_report(const std::vector<PredictionRecord>& records,
                                      const std::vector<SubgroupSpec>& specs,
                                      const FairnessReportConfig& cfg = {}) {
  if (records.empty()) throw std::invalid_argument("fairness_report: no records");
  const std::size_t n_classes = records.front().labels.size();
  for (const auto& r : records)
    if (r.labels.size() != n_classes || r.logits.size() != n_classes)
      throw std::invalid_argument("fairness_report: ragged records");
  for (const auto& s : specs)
    if (!s.predicate)
      throw std::invalid_argument("fairness_report: subgroup '" + s.name + "' has no predicate");

  FairnessReport rep;
  rep.threshold = cfg.threshold;

  // Subgroup disparities. Bootstrap runs when the subgroup has a positive for
  // the class; otherwise the entry keeps the point estimate with its note.
  std::vector<std::pair<bool, DisparityEntry>> entries;  // (intersectional, entry)
  for (const auto& spec : specs) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      bool has_pos = false;
      for (const auto& r : records)
        if (r.labels[c] == 1 && spec.predicate(r.attributes)) {
          has_pos = true;
          break;
        }
      DisparityEntry e;
      if (cfg.run_bootstrap && has_pos)
        e.result = bootstrap_disparity(records, spec, c, cfg.bootstrap);
      else
        e.result = tpr_fpr(records, spec, c);
      e.flagged = detail::disparity_flagged(e.result, cfg.threshold);
      entries.emplace_back(spec.intersectional, std::move(e));
    }
  }
  std::size_t n_tests = 0;
  for (const auto& [inter, e] : entries)
    if (std::isfinite(e.result.p_value)) ++n_tests;
  for (auto& [inter, e] : entries) {
    if (std::isfinite(e.result.p_value))
      e.p_bonferroni = std::min(1.0, e.result.p_value * (double)n_tests);
    (inter ? rep.intersectional : rep.subgroups).push_back(std::move(e));
  }

  // Odds-ratio table: each exposure against slow turnaround. Exposures whose
  // table has a zero margin (absent value, constant outcome) are omitted.
  auto slow = [&](const PredictionRecord& r) {
    return r.attributes.turnaround_days > cfg.slow_turnaround_days;
  };
  auto add_exposure = [&](const std::string& name, auto&& exposed) {
    ContingencyTable t;
    for (const auto& r : records) {
      const bool e = exposed(r.attributes), s = slow(r);
      if (e && s)
        ++t.a;
      else if (e)
        ++t.b;
      else if (s)
        ++t.c;
      else
        ++t.d;
    }
    if (t.a + t.b == 0 || t.c + t.d == 0 || t.a + t.c == 0 || t.b + t.d == 0) return;
    ExposureOddsEntry ent;
    ent.exposure = name;
    ent.table = t;
    const OddsRatioResult orr = odds_ratio(t);
    ent.odds_ratio = orr.odds_ratio;
    ent.haldane_corrected = orr.haldane_corrected;
    ent.p_raw = orr.p_two_sided;
    rep.exposure_odds.push_back(std::move(ent));
  };
  add_exposure("weekend", [](const SensitiveAttributes& a) { return a.weekend_flag != 0; });
  std::set<int> quartiles, regions;
  for (const auto& r : records) {
    quartiles.insert(r.attributes.population_quartile);
    regions.insert(r.attributes.region_code);
  }
  for (int q : quartiles)
    add_exposure("population_quartile=" + std::to_string(q),
                 [q](const SensitiveAttributes& a) { return a.population_quartile == q; });
  for (int g : regions)
    add_exposure("region=" + std::to_string(g),
                 [g](const SensitiveAttributes& a) { return a.region_code == g; });
  for (auto& e : rep.exposure_odds)
    e.p_bonferroni = std::min(1.0, e.p_raw * (double)rep.exposure_odds.size());

  // Diagnostic subgroups: condition on carrying each other diagnosis.
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto pop = detail::count_confusion(records, c, [](const PredictionRecord&) { return true; });
    for (std::size_t d = 0; d < n_classes; ++d) {
      if (d == c) continue;
      DiagnosticSubgroupEntry ent;
      ent.class_under_test = c;
      ent.conditioning_class = d;
      const auto sub = detail::count_confusion(
          records, c, [&](const PredictionRecord& r) { return r.labels[d] == 1; });
      if (pop.positives() == 0)
        ent.note = "insufficient positives in population";
      else if (sub.positives() == 0)
        ent.note = "insufficient positives under conditioning class";
      else {
        ent.tpr_subgroup = sub.tpr();
        ent.tpr_population = pop.tpr();
        ent.disparity = ent.tpr_subgroup - ent.tpr_population;
        ent.defined = true;
        ent.flagged = std::abs(ent.disparity) > cfg.threshold;
      }
      rep.diagnostic.push_back(std::move(ent));
    }
  }
  return rep;
}

namespace detail {

inline nlohmann::json disparity_entry_json(const DisparityEntry& e) {
  nlohmann::json j;
  j["class_index"] = e.result.class_index;
  j["subgroup"] = e.result.subgroup;
  j["flagged"] = e.flagged;
  if (e.result.tpr_defined) {
    j["tpr_subgroup"] = e.result.tpr_subgroup;
    j["tpr_population"] = e.result.tpr_population;
    j["tpr_disparity"] = e.result.tpr_disparity;
  }
  if (e.result.fpr_defined) {
    j["fpr_subgroup"] = e.result.fpr_subgroup;
    j["fpr_population"] = e.result.fpr_population;
    j["fpr_disparity"] = e.result.fpr_disparity;
  }
  if (!e.result.note.empty()) j["note"] = e.result.note;
  if (std::isfinite(e.result.p_value)) {
    j["p_value"] = e.result.p_value;
    j["p_bonferroni"] = e.p_bonferroni;
    j["tpr_replicates_subgroup"] = e.result.tpr_replicates_subgroup;
    j["tpr_replicates_population"] = e.result.tpr_replicates_population;
  }
  return j;
}

}  // namespace detail

inline nlohmann::json fairness_report_to_json(const FairnessReport& rep) {
  nlohmann::json j;
  j["threshold"] = rep.threshold;
  j["subgroups"] = nlohmann::json::array();
  for (const auto& e : rep.subgroups) j["subgroups"].push_back(detail::disparity_entry_json(e));
  j["intersectional"] = nlohmann::json::array();
  for (const auto& e : rep.intersectional)
    j["intersectional"].push_back(detail::disparity_entry_json(e));
  j["exposure_odds"] = nlohmann::json::array();
  for (const auto& e : rep.exposure_odds) {
    nlohmann::json o;
    o["exposure"] = e.exposure;
    o["table"] = {{"a", e.table.a}, {"b", e.table.b}, {"c", e.table.c}, {"d", e.table.d}};
    o["odds_ratio"] = e.odds_ratio;
    o["haldane_corrected"] = e.haldane_corrected;
    o["p_raw"] = e.p_raw;
    o["p_bonferroni"] = e.p_bonferroni;
    j["exposure_odds"].push_back(std::move(o));
  }
  j["diagnostic_subgroups"] = nlohmann::json::array();
  for (const auto& e : rep.diagnostic) {
    nlohmann::json o;
    o["class_under_test"] = e.class_under_test;
    o["conditioning_class"] = e.conditioning_class;
    o["defined"] = e.defined;
    if (e.defined) {
      o["tpr_subgroup"] = e.tpr_subgroup;
      o["tpr_population"] = e.tpr_population;
      o["disparity"] = e.disparity;
      o["flagged"] = e.flagged;
    } else {
      o["note"] = e.note;
    }
    j["diagnostic_subgroups"].push_back(std::move(o));
  }
  return j;
}

inline void write_fairness_report_json(const std::string& path, const FairnessReport& rep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << fairness_report_to_json(rep).dump(2) << "\n";
}

// Region tile map: one tile per region code, blue (subgroup TPR below the
// population) through white to red, gray when undefined. A stand-in for a
// choropleth that needs no geography.
inline std::string write_region_disparity_map(const std::string& path,
                                              const std::vector<PredictionRecord>& records,
                                              std::size_t class_index) {
  detail::check_fairness_records(records, class_index);
  std::set<int> regions;
  for (const auto& r : records) regions.insert(r.attributes.region_code);

  std::vector<double> disparity;
  std::vector<bool> defined;
  double scale = 0.0;
  for (int g : regions) {
    SubgroupSpec spec{"region=" + std::to_string(g),
                      [g](const SensitiveAttributes& a) { return a.region_code == g; }, false};
    const DisparityResult r = tpr_fpr(records, spec, class_index);
    defined.push_back(r.tpr_defined);
    disparity.push_back(r.tpr_defined ? r.tpr_disparity : 0.0);
    if (r.tpr_defined) scale = std::max(scale, std::abs(r.tpr_disparity));
  }
  if (scale == 0.0) scale = 1.0;

  const std::size_t tile = 48, border = 2;
  const std::size_t w = tile * regions.size(), h = tile;
  std::vector<unsigned char> px(w * h * 3, 0);
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    unsigned char cr = 128, cg = 128, cb = 128;
    if (defined[i]) {
      const double v = disparity[i] / scale;  // [-1, 1]
      const double t = 1.0 - std::abs(v);
      if (v >= 0.0) {
        cr = 255;
        cg = cb = (unsigned char)std::lround(255.0 * t);
      } else {
        cb = 255;
        cr = cg = (unsigned char)std::lround(255.0 * t);
      }
    }
    for (std::size_t y = 0; y < tile; ++y)
      for (std::size_t x = 0; x < tile; ++x) {
        const bool edge = x < border || y < border || x >= tile - border || y >= tile - border;
        const std::size_t o = (y * w + i * tile + x) * 3;
        px[o] = edge ? 32 : cr;
        px[o + 1] = edge ? 32 : cg;
        px[o + 2] = edge ? 32 : cb;
      }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write((const char*)px.data(), (std::streamsize)px.size());
  return path;
}

}  // namespace voxalign
