#pragma once

// LLM-style report labeling behind a client seam: a keyword prefilter
// short-circuits obvious negatives, everything else goes to a LabelClient
// (deterministic mock for offline runs, HTTP client for a real endpoint).

#include "voxalign/cohort/generate.hpp"
#include "voxalign/cohort/types.hpp"
#include "voxalign/textenc/summarize.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace voxalign {

// Tri-state labels: 0/1 decided, -1 means the client could not answer.
// -1 must be surfaced downstream, never coerced to negative.
inline constexpr int kLabelUnknown = -1;

struct KeywordRule {
  std::string class_name;
  std::vector<std::string> required;  // all must match (case-insensitive) to consult the client
};

inline std::vector<KeywordRule> keyword_rules_from_classes(const std::vector<ClassDef>& classes) {
  std::vector<KeywordRule> rules;
  rules.reserve(classes.size());
  for (const auto& c : classes) rules.push_back({c.name, c.keywords});
  return rules;
}

struct LabelQuery {
  std::string report_text;
  std::string class_name;
};

class LabelClient {
 public:
  virtual ~LabelClient() = default;
  // nullopt signals timeout/refusal; the caller records kLabelUnknown.
  virtual std::optional<bool> ask(const LabelQuery& q) = 0;
};

// Answers by matching the class finding phrase against the report text.
// Exact on the synthetic grammar, where each positive class contributes a
// finding sentence containing its phrase verbatim.
class MockLabelClient : public LabelClient {
 public:
  explicit MockLabelClient(std::vector<ClassDef> classes) : classes_(std::move(classes)) {}

  std::optional<bool> ask(const LabelQuery& q) override {
    ++calls_;
    for (const auto& c : classes_) {
      if (c.name != q.class_name) continue;
      return detail::lowercase(q.report_text).find(detail::lowercase(c.phrase)) !=
             std::string::npos;
    }
    return std::nullopt;  // unknown class: refuse rather than guess
  }

  std::size_t calls() const { return calls_; }

 private:
  std::vector<ClassDef> classes_;
  std::size_t calls_ = 0;
};

// Client that always fails; stands in for a timed-out endpoint.
class UnavailableLabelClient : public LabelClient {
 public:
  std::optional<bool> ask(const LabelQuery&) override {
    ++calls_;
    return std::nullopt;
  }
  std::size_t calls() const { return calls_; }

 private:
  std::size_t calls_ = 0;
};

struct HttpClientConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/label";
  std::string model = "labeler-v1";
  std::string auth_token;       // sent as a bearer header when non-empty
  int max_retries = 3;
  int backoff_ms = 50;          // doubled per retry
  int timeout_sec = 5;
  std::string transcript_path;  // jsonl audit log, appended per attempt
};

namespace detail {
inline void append_transcript(const std::string& path, const nlohmann::json& row) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  out << row.dump() << "\n";
}
}  // namespace detail

// POSTs {"report", "class_name", "model"} and expects {"answer": "yes"|"no"}.
// Declared here, defined in labeling_http.hpp to keep httplib out of hot
// translation units.
class HttpLabelClient : public LabelClient {
 public:
  explicit HttpLabelClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {}
  std::optional<bool> ask(const LabelQuery& q) override;

 private:
  HttpClientConfig cfg_;
};

// Keyword prefilter first: a class whose required patterns are not all
// present is negative without a client call. Remaining classes go to the
// client; a refusal yields kLabelUnknown for that class.
inline std::vector<int> label_report(const RawReport& report,
                                     const std::vector<KeywordRule>& rules,
                                     LabelClient& client) {
  std::vector<int> labels(rules.size(), 0);
  const std::string low = detail::lowercase(report.prose);
  for (std::size_t c = 0; c < rules.size(); ++c) {
    bool candidate = true;
    for (const auto& kw : rules[c].required)
      if (low.find(detail::lowercase(kw)) == std::string::npos) {
        candidate = false;
        break;
      }
    if (!candidate) continue;
    auto answer = client.ask({report.prose, rules[c].class_name});
    labels[c] = answer.has_value() ? (*answer ? 1 : 0) : kLabelUnknown;
  }
  return labels;
}

}  // namespace voxalign
