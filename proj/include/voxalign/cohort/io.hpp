#pragma once

// Cohort persistence: line-delimited JSON manifest, binary volume files,
// plain-text reports, binary masks. Schema is versioned; loaders reject
// records from other schema versions.

#include "voxalign/cohort/generate.hpp"
#include "voxalign/cohort/types.hpp"
#include "voxalign/core/binio.hpp"
#include "voxalign/core/hash.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

inline constexpr int kManifestSchemaVersion = 1;

namespace detail {
inline nlohmann::json attributes_to_json(const SensitiveAttributes& a) {
  return {{"sex", a.sex},
          {"age_years", a.age_years},
          {"race_code", a.race_code},
          {"region_code", a.region_code},
          {"population_quartile", a.population_quartile},
          {"weekend_flag", a.weekend_flag},
          {"insurer_code", a.insurer_code},
          {"scanner_code", a.scanner_code},
          {"turnaround_days", a.turnaround_days}};
}

inline SensitiveAttributes attributes_from_json(const nlohmann::json& j) {
  SensitiveAttributes a;
  a.sex = j.at("sex");
  a.age_years = j.at("age_years");
  a.race_code = j.at("race_code");
  a.region_code = j.at("region_code");
  a.population_quartile = j.at("population_quartile");
  a.weekend_flag = j.at("weekend_flag");
  a.insurer_code = j.at("insurer_code");
  a.scanner_code = j.at("scanner_code");
  a.turnaround_days = j.at("turnaround_days");
  return a;
}
}  // namespace detail

inline void write_cohort(const std::string& dir, const std::vector<VolumetricStudy>& studies,
                         const MappingTable& table) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "volumes");
  fs::create_directories(fs::path(dir) / "reports");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& st : studies) {
    nlohmann::json rec;
    rec["schema_version"] = kManifestSchemaVersion;
    rec["study_id"] = st.study_id;
    rec["patient_id"] = st.patient_id;
    rec["study_name"] = st.study_name;
    rec["labels"] = st.labels;
    rec["attributes"] = detail::attributes_to_json(st.attributes);
    auto [acuity, referrals] = acuity_referral_map(st.labels, table);
    rec["acuity"] = (int)acuity;
    rec["referrals"] = referrals;
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& sv : st.sequences) {
      const std::string file = "volumes/" + st.study_id + "_" + sv.seq_name + ".vol";
      save_volume((fs::path(dir) / file).string(), sv.voxels);
      seqs.push_back({{"name", sv.seq_name},
                      {"plane", (int)sv.plane},
                      {"t2_like", sv.t2_like},
                      {"orientation", sv.orientation},
                      {"file", file}});
    }
    rec["sequences"] = seqs;
    const std::string report_file = "reports/" + st.study_id + ".txt";
    {
      std::ofstream rf(fs::path(dir) / report_file, std::ios::trunc);
      rf << st.report.prose;
      nlohmann::json fj = nlohmann::json::array();
      for (const auto& f : st.report.findings)
        fj.push_back({{"class_index", f.class_index},
                      {"laterality", f.laterality},
                      {"severity", f.severity},
                      {"text", f.text}});
      rec["findings"] = fj;
    }
    rec["report_file"] = report_file;
    nlohmann::json masks = nlohmann::json::object();
    for (const auto& [cls, m] : st.masks) {
      const std::string file =
          "masks/" + st.study_id + "_c" + std::to_string(cls) + ".vol";
      save_volume((fs::path(dir) / file).string(), m);
      masks[std::to_string(cls)] = file;
    }
    rec["masks"] = masks;
    manifest << rec.dump() << "\n";
  }
}

inline std::vector<VolumetricStudy> load_cohort(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("no manifest in " + dir);
  std::vector<VolumetricStudy> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    if (rec.at("schema_version").get<int>() != kManifestSchemaVersion)
      throw std::runtime_error("unsupported manifest schema version");
    VolumetricStudy st;
    st.study_id = rec.at("study_id");
    st.patient_id = rec.at("patient_id");
    st.study_name = rec.at("study_name");
    st.labels = rec.at("labels").get<LabelVector>();
    st.attributes = detail::attributes_from_json(rec.at("attributes"));
    for (const auto& sj : rec.at("sequences")) {
      SequenceVolume sv;
      sv.seq_name = sj.at("name");
      sv.plane = (Plane)sj.at("plane").get<int>();
      sv.t2_like = sj.at("t2_like");
      const auto ov = sj.at("orientation").get<std::vector<std::size_t>>();
      sv.orientation = {ov.at(0), ov.at(1), ov.at(2)};
      sv.voxels = load_volume((fs::path(dir) / sj.at("file").get<std::string>()).string());
      st.sequences.push_back(std::move(sv));
    }
    {
      std::ifstream rf(fs::path(dir) / rec.at("report_file").get<std::string>());
      std::string prose((std::istreambuf_iterator<char>(rf)),
                        std::istreambuf_iterator<char>());
      st.report.prose = prose;
      for (const auto& fj : rec.at("findings")) {
        FindingRecord f;
        f.class_index = fj.at("class_index");
        f.laterality = fj.at("laterality");
        f.severity = fj.at("severity");
        f.text = fj.at("text");
        st.report.findings.push_back(f);
      }
    }
    for (const auto& [key, file] : rec.at("masks").items())
      st.masks.emplace((std::size_t)std::stoul(key),
                       load_volume((fs::path(dir) / file.get<std::string>()).string()));
    out.push_back(std::move(st));
  }
  return out;
}

// Content hash over everything a downstream consumer can observe; two cohorts
// with equal fingerprints are byte-identical for our purposes.
inline std::uint64_t cohort_fingerprint(const std::vector<VolumetricStudy>& studies) {
  ByteWriter w;
  for (const auto& st : studies) {
    w.str(st.study_id);
    w.str(st.patient_id);
    w.str(st.study_name);
    w.str(st.report.prose);
    w.u64(st.report.findings.size());
    for (const auto& f : st.report.findings) {
      w.u64(f.class_index);
      w.i64(f.laterality);
      w.i64(f.severity);
      w.str(f.text);
    }
    w.u64(st.labels.size());
    for (int v : st.labels) w.i64(v);
    const auto& a = st.attributes;
    w.i64(a.sex);
    w.f64(a.age_years);
    w.i64(a.race_code);
    w.i64(a.region_code);
    w.i64(a.population_quartile);
    w.i64(a.weekend_flag);
    w.i64(a.insurer_code);
    w.i64(a.scanner_code);
    w.f64(a.turnaround_days);
    for (const auto& sv : st.sequences) {
      w.str(sv.seq_name);
      w.u8((std::uint8_t)sv.plane);
      w.u8(sv.t2_like ? 1 : 0);
      for (std::size_t d : sv.orientation) w.u64(d);
      w.u64(sv.voxels.dx);
      w.u64(sv.voxels.dy);
      w.u64(sv.voxels.dz);
      for (double v : sv.voxels.data) w.f64(v);
    }
    w.u64(st.masks.size());
    for (const auto& [cls, m] : st.masks) {
      w.u64(cls);
      for (double v : m.data) w.f64(v);
    }
  }
  return fnv1a64(w.buffer());
}

}  // namespace voxalign
