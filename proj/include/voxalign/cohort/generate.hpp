#pragma once

// Synthetic cohort generator: planted ellipsoid lesions with per-modality
// contrast, templated prose reports with distractor boilerplate, sensitive
// attributes with a configurable turnaround-time bias model, and exact masks.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct ClassDef {
  std::string name;          // machine id, e.g. "subdural-hematoma"
  std::string phrase;        // report phrase, e.g. "subdural hematoma collection"
  std::string region;        // anatomic flavor for the sentence
  std::string category;
  Acuity acuity = Acuity::medium;
  std::vector<int> referrals;          // multi-hot over referral_specialties()
  double prevalence = 0.05;            // unconditional target rate
  double t1_contrast = 0.0;            // intensity delta on T1-like sequences
  double t2_contrast = 0.0;            // intensity delta on T2-like sequences
  double base_radius = 2.4;            // voxels, scaled by severity
  std::vector<std::string> keywords;   // AND-group for the labeling prefilter
};

struct SequenceDef {
  std::string name;
  Plane plane = Plane::axial;
  bool t2_like = false;
  AxisPerm orientation = kIdentityPerm;
  double include_prob = 1.0;  // always-on sequences use 1.0
};

struct BiasModel {
  // P(slow turnaround) = sigmoid(b0 + b_weekend*weekend + b_quartile*quartile
  //                              + b_region_hi*[region == high-bias region])
  double b0 = -0.85;
  double b_weekend = 0.9163;  // ln 2.5
  double b_quartile = 0.0;
  double b_region_hi = 0.0;
  int high_bias_region = 3;
  double slow_threshold_days = 2.0;
};

struct AttributeMarginals {
  double p_male = 0.5;
  double age_min = 18.0, age_max = 90.0;
  std::vector<double> race_probs{0.60, 0.20, 0.12, 0.08};
  std::vector<double> region_probs{0.25, 0.25, 0.25, 0.25};
  std::vector<double> quartile_probs{0.25, 0.25, 0.25, 0.25};
  double p_weekend = 2.0 / 7.0;
  std::vector<double> insurer_probs{0.5, 0.3, 0.2};
  std::vector<double> scanner_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
};

struct CohortConfig {
  std::size_t n_studies = 500;
  std::size_t grid_x = 32, grid_y = 32, grid_z = 8;
  double normal_fraction = 0.4;
  double qualifier_prob = 0.35;        // chance a finding gets a comparison sentence
  double cooccur_prob = 0.8;           // obstructive-mass => ventriculomegaly
  std::size_t cooccur_source = 3;      // class indices under default_classes()
  std::size_t cooccur_target = 9;
  double age_intensity_coef = 0.08;    // tissue brightness fades with age
  double noise_sigma = 0.02;
  std::vector<ClassDef> classes;
  std::vector<SequenceDef> sequences;
  AttributeMarginals marginals;
  BiasModel bias;

  std::size_t n_classes() const { return classes.size(); }
};

inline const std::vector<std::string>& referral_specialties() {
  static const std::vector<std::string> kSpecialties{"neurosurgery", "oncology",
                                                     "neurology", "stroke"};
  return kSpecialties;
}

namespace detail {
inline std::vector<int> refs(std::initializer_list<int> on) {
  std::vector<int> v(referral_specialties().size(), 0);
  for (int i : on) v[(std::size_t)i] = 1;
  return v;
}
}  // namespace detail

// 12 classes in 4 categories. Contrast signatures make half the set
// T2-conspicuous (bright on T2-like, faint dark on T1-like) and the rest
// T1-conspicuous, which is what the modality-dropping analysis leans on.
inline std::vector<ClassDef> default_classes() {
  using detail::refs;
  const double kBright = 0.45, kFaint = -0.10;
  std::vector<ClassDef> c;
  c.push_back({"subdural-hematoma", "subdural hematoma collection", "frontal convexity",
               "hemorrhage", Acuity::high, refs({0}), 0.07, kBright, kFaint, 2.6,
               {"subdural", "hemat"}});
  c.push_back({"epidural-hematoma", "epidural hematoma", "temporal convexity",
               "hemorrhage", Acuity::high, refs({0}), 0.05, kBright, kFaint, 2.4,
               {"epidural", "hemat"}});
  c.push_back({"intraparenchymal-hemorrhage", "intraparenchymal hemorrhage",
               "basal ganglia", "hemorrhage", Acuity::high, refs({0}), 0.06, kBright,
               kFaint, 2.2, {"intraparenchymal", "hemorrhage"}});
  c.push_back({"obstructive-mass", "obstructive mass lesion", "fourth ventricle region",
               "mass", Acuity::high, refs({0, 1}), 0.06, kFaint, kBright, 2.8,
               {"obstructive", "mass"}});
  c.push_back({"glioma-like-mass", "infiltrative glioma-like mass", "frontal lobe",
               "mass", Acuity::medium, refs({1}), 0.07, kFaint, kBright, 2.8,
               {"glioma"}});
  c.push_back({"metastasis-like-lesion", "enhancing metastasis-like lesion",
               "gray-white junction", "mass", Acuity::medium, refs({1}), 0.06, kBright,
               kFaint, 2.0, {"metastasis"}});
  c.push_back({"demyelinating-lesion", "demyelinating lesion", "periventricular white matter",
               "white-matter", Acuity::medium, refs({2}), 0.08, kFaint, kBright, 2.0,
               {"demyelinating"}});
  c.push_back({"small-vessel-ischemia", "chronic small vessel ischemic change",
               "subcortical white matter", "white-matter", Acuity::medium, refs({2}),
               0.09, kFaint, kBright, 2.2, {"small vessel", "ischemic"}});
  c.push_back({"acute-infarct", "acute cortical infarct", "parietal cortex",
               "white-matter", Acuity::high, refs({2, 3}), 0.06, kFaint, kBright, 2.4,
               {"infarct"}});
  c.push_back({"ventriculomegaly", "ventriculomegaly with dilated lateral ventricles",
               "ventricular system", "csf-space", Acuity::medium, refs({0}), 0.05,
               kFaint, kBright, 3.0, {"ventriculomegaly"}});
  c.push_back({"arachnoid-cyst", "arachnoid cyst", "middle cranial fossa", "csf-space",
               Acuity::normal, refs({}), 0.07, kFaint, kBright, 2.4,
               {"arachnoid", "cyst"}});
  c.push_back({"focal-atrophy", "focal volume loss with gliosis", "anterior temporal lobe",
               "csf-space", Acuity::normal, refs({}), 0.06, kBright, kFaint, 2.4,
               {"volume loss"}});
  return c;
}

inline std::vector<SequenceDef> default_sequences() {
  return {
      {"AX_T1", Plane::axial, false, kIdentityPerm, 1.0},
      {"AX_T2_FLAIR", Plane::axial, true, kIdentityPerm, 1.0},
      {"COR_T2", Plane::coronal, true, AxisPerm{0, 2, 1}, 0.5},
      {"SAG_T1_POST", Plane::sagittal, false, AxisPerm{2, 1, 0}, 0.5},
  };
}

inline CohortConfig default_cohort_config() {
  CohortConfig cfg;
  cfg.classes = default_classes();
  cfg.sequences = default_sequences();
  return cfg;
}

inline MappingTable mapping_table_from_classes(const std::vector<ClassDef>& classes) {
  MappingTable t;
  t.referral_dim = referral_specialties().size();
  for (const auto& c : classes) t.per_class.push_back({c.acuity, c.referrals});
  return t;
}

inline void validate_config(const CohortConfig& cfg) {
  if (cfg.sequences.empty()) throw std::invalid_argument("config.sequences: empty");
  if (cfg.classes.empty()) throw std::invalid_argument("config.classes: empty");
  if (cfg.grid_x == 0 || cfg.grid_y == 0 || cfg.grid_z == 0)
    throw std::invalid_argument("config.grid: zero dimension");
  for (const auto& c : cfg.classes)
    if (c.prevalence < 0.0 || c.prevalence > 1.0)
      throw std::invalid_argument("config.classes[" + c.name +
                                  "].prevalence: outside [0,1]");
  if (cfg.normal_fraction < 0.0 || cfg.normal_fraction >= 1.0)
    throw std::invalid_argument("config.normal_fraction: outside [0,1)");
  std::size_t always_on = 0;
  for (const auto& s : cfg.sequences)
    if (s.include_prob >= 1.0) ++always_on;
  if (always_on < 2)
    throw std::invalid_argument(
        "config.sequences: need >= 2 always-included sequences per study");
  if (cfg.cooccur_source >= cfg.classes.size() || cfg.cooccur_target >= cfg.classes.size())
    throw std::invalid_argument("config.cooccur: class index out of range");
}

namespace detail {

inline const char* severity_word(int s) {
  return s == 0 ? "small" : (s == 1 ? "moderate" : "large");
}
inline const char* laterality_word(int l) {
  return l == 0 ? "left" : (l == 1 ? "right" : "midline");
}

inline std::string finding_sentence(const ClassDef& cls, int laterality, int severity) {
  std::ostringstream os;
  os << "There is a " << severity_word(severity) << " " << cls.phrase << " in the "
     << laterality_word(laterality) << " " << cls.region << ".";
  return os.str();
}

inline const std::vector<std::string>& boilerplate_pool() {
  static const std::vector<std::string> kPool{
      "TECHNIQUE: Multiplanar multisequence imaging of the brain was performed.",
      "CLINICAL HISTORY: Headache.",
      "CLINICAL HISTORY: Follow-up examination.",
      "The examination was acquired on a 3 Tesla scanner.",
      "FINDINGS: The visualized paranasal sinuses are clear.",
      "The orbits are unremarkable in appearance.",
  };
  return kPool;
}

inline const std::vector<std::string>& qualifier_pool() {
  static const std::vector<std::string> kPool{
      "This is stable compared to the prior examination.",
      "This demonstrates progression from the previous study.",
      "This has improved since the previous examination.",
  };
  return kPool;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Lesion {
  double cx, cy, cz;       // center on the canonical grid
  double rx, ry, rz;       // semi-axes
};

inline bool inside_ellipsoid(double x, double y, double z, const Lesion& e) {
  const double a = (x - e.cx) / e.rx, b = (y - e.cy) / e.ry, c = (z - e.cz) / e.rz;
  return a * a + b * b + c * c <= 1.0;
}

// Lesion geometry from (class, laterality, severity); shared across all
// sequences of the study so masks are exact.
inline Lesion sample_lesion(const CohortConfig& cfg, const ClassDef& cls, int laterality,
                            int severity, Rng& rng) {
  const double sev_scale = severity == 0 ? 1.0 : (severity == 1 ? 1.45 : 2.0);
  Lesion e;
  e.rx = cls.base_radius * sev_scale;
  e.ry = cls.base_radius * sev_scale * rng.uniform(0.85, 1.15);
  e.rz = std::max(1.0, e.rx * (double)cfg.grid_z / (double)cfg.grid_x);
  const double gx = (double)cfg.grid_x, gy = (double)cfg.grid_y, gz = (double)cfg.grid_z;
  // Laterality along x: left third, right third, or central band.
  double lo, hi;
  if (laterality == 0) {
    lo = 0.22 * gx;
    hi = 0.38 * gx;
  } else if (laterality == 1) {
    lo = 0.62 * gx;
    hi = 0.78 * gx;
  } else {
    lo = 0.44 * gx;
    hi = 0.56 * gx;
  }
  e.cx = rng.uniform(lo, hi);
  e.cy = rng.uniform(0.30 * gy, 0.70 * gy);
  e.cz = rng.uniform(0.35 * gz, 0.65 * gz);
  return e;
}

// Head boundary: centered ellipsoid occupying most of the grid.
inline bool inside_head(const CohortConfig& cfg, std::size_t i, std::size_t j,
                        std::size_t k) {
  const double x = ((double)i + 0.5) / (double)cfg.grid_x - 0.5;
  const double y = ((double)j + 0.5) / (double)cfg.grid_y - 0.5;
  const double z = ((double)k + 0.5) / (double)cfg.grid_z - 0.5;
  return (x * x + y * y) / (0.42 * 0.42) + (z * z) / (0.46 * 0.46) <= 1.0;
}

}  // namespace detail

// A deterministic placebo region of lesion-like size for label-negative
// studies; gives probing code a matched "where to look" without leaking the
// label (it is label-independent by construction).
inline Volume3D placebo_mask(const CohortConfig& cfg, const std::string& study_id,
                             std::size_t class_index) {
  std::uint64_t h = 0xABCDEF12345ULL;
  for (char c : study_id) h = h * 1315423911ULL + (unsigned char)c;
  Rng rng(h + 0x9E37 * (class_index + 1));
  const ClassDef& cls = cfg.classes[class_index];
  detail::Lesion e = detail::sample_lesion(cfg, cls, (int)rng.below(3), 0, rng);
  Volume3D m(cfg.grid_x, cfg.grid_y, cfg.grid_z, 0.0);
  for (std::size_t i = 0; i < cfg.grid_x; ++i)
    for (std::size_t j = 0; j < cfg.grid_y; ++j)
      for (std::size_t k = 0; k < cfg.grid_z; ++k)
        if (detail::inside_ellipsoid((double)i, (double)j, (double)k, e))
          m.at(i, j, k) = 1.0;
  return m;
}

inline VolumetricStudy generate_study(const CohortConfig& cfg, std::size_t index,
                                      Rng& rng) {
  VolumetricStudy st;
  {
    std::ostringstream os;
    os << "study_" << index;
    st.study_id = os.str();
    st.patient_id = "patient_" + std::to_string(index);
  }
  st.study_name = rng.bernoulli(0.5) ? "MRI BRAIN WITH AND WITHOUT CONTRAST"
                                     : "MRI BRAIN WITHOUT CONTRAST";

  // Attributes.
  SensitiveAttributes& A = st.attributes;
  const AttributeMarginals& M = cfg.marginals;
  A.sex = rng.bernoulli(M.p_male) ? 1 : 0;
  A.age_years = rng.uniform(M.age_min, M.age_max);
  A.race_code = (int)rng.pick_weighted(M.race_probs);
  A.region_code = (int)rng.pick_weighted(M.region_probs);
  A.population_quartile = (int)rng.pick_weighted(M.quartile_probs);
  A.weekend_flag = rng.bernoulli(M.p_weekend) ? 1 : 0;
  A.insurer_code = (int)rng.pick_weighted(M.insurer_probs);
  A.scanner_code = (int)rng.pick_weighted(M.scanner_probs);
  {
    const BiasModel& B = cfg.bias;
    const double logit = B.b0 + B.b_weekend * A.weekend_flag +
                         B.b_quartile * A.population_quartile +
                         B.b_region_hi * (A.region_code == B.high_bias_region ? 1 : 0);
    const bool slow = rng.bernoulli(detail::sigmoid(logit));
    A.turnaround_days = slow ? B.slow_threshold_days + 0.5 + rng.uniform(0.0, 7.0)
                             : rng.uniform(0.0, B.slow_threshold_days);
  }

  // Labels. Classes with prevalence 1.0 are force-positive; otherwise a
  // normal/abnormal draw gates per-class conditional sampling.
  const std::size_t L = cfg.n_classes();
  st.labels.assign(L, 0);
  const bool abnormal = !rng.bernoulli(cfg.normal_fraction);
  double prev_total = 0.0;
  for (const auto& c : cfg.classes) prev_total += c.prevalence;
  for (std::size_t c = 0; c < L; ++c) {
    const double p = cfg.classes[c].prevalence;
    if (p >= 1.0) {
      st.labels[c] = 1;
    } else if (abnormal && cfg.normal_fraction < 1.0) {
      const double cond = std::min(1.0, p / (1.0 - cfg.normal_fraction));
      if (rng.bernoulli(cond)) st.labels[c] = 1;
    }
  }
  if (abnormal && prev_total > 0.0) {
    bool any = false;
    for (int v : st.labels) any = any || v;
    if (!any) {
      std::vector<double> w;
      for (const auto& c : cfg.classes) w.push_back(c.prevalence);
      const std::size_t pick = rng.pick_weighted(w);
      if (pick < L) st.labels[pick] = 1;
    }
  }
  if (st.labels[cfg.cooccur_source] == 1 && rng.bernoulli(cfg.cooccur_prob))
    st.labels[cfg.cooccur_target] = 1;

  // Findings: one per positive class, with lesion geometry shared across
  // sequences.
  struct Planted {
    std::size_t cls;
    detail::Lesion lesion;
  };
  std::vector<Planted> planted;
  for (std::size_t c = 0; c < L; ++c) {
    if (st.labels[c] == 0) continue;
    FindingRecord f;
    f.class_index = c;
    f.laterality = (int)rng.below(3);
    f.severity = (int)rng.below(3);
    f.text = detail::finding_sentence(cfg.classes[c], f.laterality, f.severity);
    st.report.findings.push_back(f);
    planted.push_back({c, detail::sample_lesion(cfg, cfg.classes[c], f.laterality,
                                                f.severity, rng)});
  }

  // Prose: boilerplate distractors, findings verbatim, optional comparison
  // qualifier sentences right after their finding.
  {
    std::ostringstream prose;
    const auto& pool = detail::boilerplate_pool();
    prose << pool[0] << " ";
    prose << pool[1 + rng.below(2)] << " ";
    prose << pool[3 + rng.below(3)] << " ";
    if (st.report.findings.empty()) {
      prose << "No acute intracranial abnormality is identified.";
    } else {
      for (const auto& f : st.report.findings) {
        prose << f.text << " ";
        if (rng.bernoulli(cfg.qualifier_prob)) {
          const auto& q = detail::qualifier_pool();
          prose << q[rng.below(q.size())] << " ";
        }
      }
    }
    st.report.prose = prose.str();
  }

  // Masks on the canonical grid.
  for (const auto& pl : planted) {
    Volume3D m(cfg.grid_x, cfg.grid_y, cfg.grid_z, 0.0);
    for (std::size_t i = 0; i < cfg.grid_x; ++i)
      for (std::size_t j = 0; j < cfg.grid_y; ++j)
        for (std::size_t k = 0; k < cfg.grid_z; ++k)
          if (detail::inside_ellipsoid((double)i, (double)j, (double)k, pl.lesion))
            m.at(i, j, k) = 1.0;
    auto it = st.masks.find(pl.cls);
    if (it == st.masks.end()) {
      st.masks.emplace(pl.cls, std::move(m));
    } else {
      for (std::size_t v = 0; v < m.size(); ++v)
        it->second.data[v] = std::max(it->second.data[v], m.data[v]);
    }
  }

  // Sequences: canonical volume per roster entry, then acquisition
  // orientation applied. Tissue brightness carries the age signal.
  const double age_term =
      cfg.age_intensity_coef * (55.0 - st.attributes.age_years) / 35.0;
  for (const auto& sd : cfg.sequences) {
    if (sd.include_prob < 1.0 && !rng.bernoulli(sd.include_prob)) continue;
    Volume3D canon(cfg.grid_x, cfg.grid_y, cfg.grid_z, 0.0);
    const double base = (sd.t2_like ? 0.45 : 0.55) + age_term;
    for (std::size_t i = 0; i < cfg.grid_x; ++i)
      for (std::size_t j = 0; j < cfg.grid_y; ++j)
        for (std::size_t k = 0; k < cfg.grid_z; ++k) {
          if (!detail::inside_head(cfg, i, j, k)) continue;
          double v = base + rng.normal(0.0, cfg.noise_sigma);
          for (const auto& pl : planted)
            if (detail::inside_ellipsoid((double)i, (double)j, (double)k, pl.lesion))
              v += sd.t2_like ? cfg.classes[pl.cls].t2_contrast
                              : cfg.classes[pl.cls].t1_contrast;
          canon.at(i, j, k) = std::clamp(v, 0.0, 1.0);
        }
    SequenceVolume sv;
    sv.seq_name = sd.name;
    sv.plane = sd.plane;
    sv.t2_like = sd.t2_like;
    sv.orientation = sd.orientation;
    sv.voxels = (sd.orientation == kIdentityPerm) ? std::move(canon)
                                                  : permute_axes(canon, sd.orientation);
    st.sequences.push_back(std::move(sv));
  }
  return st;
}

inline std::vector<VolumetricStudy> generate_cohort(const CohortConfig& cfg,
                                                    std::uint64_t seed) {
  validate_config(cfg);
  Rng master(seed);
  std::vector<VolumetricStudy> out;
  out.reserve(cfg.n_studies);
  for (std::size_t i = 0; i < cfg.n_studies; ++i) {
    Rng study_rng = master.child(0x5700000ULL + i);
    out.push_back(generate_study(cfg, i, study_rng));
  }
  return out;
}

}  // namespace voxalign
