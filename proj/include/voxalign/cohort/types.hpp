#pragma once

// Domain types for synthetic volumetric studies: sequences, reports, labels,
// sensitive attributes, lesion masks, and the acuity/referral mapping.

#include "voxalign/cohort/volume.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

enum class Plane : std::uint8_t { axial = 0, coronal = 1, sagittal = 2 };

inline const char* plane_name(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "?";
}

enum class Acuity : std::uint8_t { normal = 0, medium = 1, high = 2 };

inline const char* acuity_name(Acuity a) {
  switch (a) {
    case Acuity::normal: return "normal";
    case Acuity::medium: return "medium";
    case Acuity::high: return "high";
  }
  return "?";
}

struct SequenceVolume {
  std::string seq_name;
  Volume3D voxels;       // stored in acquisition orientation
  AxisPerm orientation;  // canonical axes -> storage axes
  Plane plane = Plane::axial;
  bool t2_like = false;
};

struct FindingRecord {
  std::size_t class_index = 0;
  int laterality = 0;  // 0 left, 1 right, 2 midline
  int severity = 0;    // 0 small, 1 moderate, 2 large
  std::string text;    // verbatim sentence as it appears in the prose
};

struct RawReport {
  std::string prose;
  std::vector<FindingRecord> findings;
};

using LabelVector = std::vector<int>;  // entries in {0,1}

struct SensitiveAttributes {
  int sex = 0;  // 0 female, 1 male
  double age_years = 0.0;
  int race_code = 0;
  int region_code = 0;
  int population_quartile = 0;  // 0 = least dense
  int weekend_flag = 0;
  int insurer_code = 0;
  int scanner_code = 0;
  double turnaround_days = 0.0;
};

struct VolumetricStudy {
  std::string study_id;
  std::string patient_id;
  std::string study_name;
  std::vector<SequenceVolume> sequences;
  RawReport report;
  LabelVector labels;
  SensitiveAttributes attributes;
  // Per positive class: binary lesion mask on the canonical (axial) grid.
  std::map<std::size_t, Volume3D> masks;
};

struct ReferralSet {
  // Multi-hot over referral specialties.
  std::vector<int> flags;
};

struct MappingTable {
  struct Entry {
    Acuity acuity = Acuity::normal;
    std::vector<int> referrals;  // multi-hot, shared dimension across entries
  };
  std::vector<Entry> per_class;
  std::size_t referral_dim = 0;
};

// Acuity = max positive-label rank; referrals = union. All-negative labels
// map to (normal, empty).
inline std::pair<Acuity, std::vector<int>> acuity_referral_map(const LabelVector& labels,
                                                               const MappingTable& table) {
  if (labels.size() != table.per_class.size())
    throw std::invalid_argument("mapping table does not cover all label classes");
  Acuity acuity = Acuity::normal;
  std::vector<int> referrals(table.referral_dim, 0);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] == 0) continue;
    const auto& e = table.per_class[c];
    if ((int)e.acuity > (int)acuity) acuity = e.acuity;
    if (e.referrals.size() != table.referral_dim)
      throw std::invalid_argument("mapping table entry has wrong referral dimension");
    for (std::size_t r = 0; r < referrals.size(); ++r)
      referrals[r] = referrals[r] | e.referrals[r];
  }
  return {acuity, referrals};
}

}  // namespace voxalign
