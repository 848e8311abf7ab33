#pragma once

// Report summarization: reduce free-text prose to the itemized findings,
// dropping boilerplate and comparison-to-prior statements.

#include "voxalign/cohort/types.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace voxalign {

struct SummarizedReport {
  std::vector<std::string> items;
  std::string source_id;
};

// Canonical single item for studies without findings.
inline const std::string& no_abnormality_item() {
  static const std::string kItem = "No significant abnormality.";
  return kItem;
}

namespace detail {

inline const std::array<std::string_view, 4>& comparison_terms() {
  static const std::array<std::string_view, 4> kTerms{"stable", "progression",
                                                      "previous", "improved"};
  return kTerms;
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return (char)std::tolower(c); });
  return out;
}

inline bool contains_comparison_term(std::string_view sentence) {
  const std::string low = lowercase(sentence);
  for (auto term : comparison_terms())
    if (low.find(term) != std::string::npos) return true;
  return false;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace((unsigned char)s[b])) ++b;
  while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

// Sentences end at '.' boundaries; the period stays with the sentence.
inline std::vector<std::string> split_sentences(std::string_view prose) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < prose.size(); ++i) {
    if (prose[i] == '.') {
      std::string s = trim(prose.substr(start, i - start + 1));
      if (!s.empty()) out.push_back(std::move(s));
      start = i + 1;
    }
  }
  std::string tail = trim(prose.substr(start));
  if (!tail.empty()) out.push_back(tail + ".");
  return out;
}

inline bool is_finding_sentence(std::string_view s) {
  return s.rfind("There is ", 0) == 0 || s.rfind("There are ", 0) == 0;
}

// Drops comma-separated clauses that compare against priors, keeping the
// finding itself: "..., stable compared to prior." -> "...".
inline std::string strip_comparison_clauses(const std::string& sentence) {
  std::string body = sentence;
  if (!body.empty() && body.back() == '.') body.pop_back();
  std::vector<std::string> clauses;
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t comma = body.find(", ", start);
    if (comma == std::string::npos) {
      clauses.push_back(body.substr(start));
      break;
    }
    clauses.push_back(body.substr(start, comma - start));
    start = comma + 2;
  }
  std::string out;
  for (const auto& c : clauses) {
    if (contains_comparison_term(c)) continue;
    if (!out.empty()) out += ", ";
    out += c;
  }
  return out + ".";
}

}  // namespace detail

inline SummarizedReport summarize(const RawReport& report, std::string source_id = "") {
  SummarizedReport out;
  out.source_id = std::move(source_id);
  for (const auto& sentence : detail::split_sentences(report.prose)) {
    if (!detail::is_finding_sentence(sentence)) continue;
    if (detail::contains_comparison_term(sentence)) {
      out.items.push_back(detail::strip_comparison_clauses(sentence));
    } else {
      out.items.push_back(sentence);
    }
  }
  if (out.items.empty()) out.items.push_back(no_abnormality_item());
  return out;
}

inline SummarizedReport summarize(const VolumetricStudy& study) {
  return summarize(study.report, study.study_id);
}

// Summary rendered back to prose, e.g. to feed the summarizer its own output
// or to train the report language model on clean text.
inline std::string summary_text(const SummarizedReport& s) {
  std::string out;
  for (const auto& item : s.items) {
    if (!out.empty()) out += " ";
    out += item;
  }
  return out;
}

}  // namespace voxalign
