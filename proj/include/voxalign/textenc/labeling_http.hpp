#pragma once

// HTTP transport for HttpLabelClient. Separate header because httplib is
// heavy to compile; include only where the real endpoint is wired up.

#include "voxalign/textenc/labeling.hpp"

#include <httplib.h>

// glibc's resolv.h, pulled in by httplib on Linux, leaks a `_res` object
// macro that mangles any later declaration using that identifier (Eigen's
// GEMM kernels among them). Scrub it here so include order stays a non-issue.
#ifdef _res
#undef _res
#endif

namespace voxalign {

inline std::optional<bool> HttpLabelClient::ask(const LabelQuery& q) {
  nlohmann::json body{{"report", q.report_text},
                      {"class_name", q.class_name},
                      {"model", cfg_.model}};
  int backoff = cfg_.backoff_ms;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    httplib::Client cli(cfg_.host, cfg_.port);
    cli.set_connection_timeout(cfg_.timeout_sec);
    cli.set_read_timeout(cfg_.timeout_sec);
    httplib::Headers headers;
    if (!cfg_.auth_token.empty())
      headers.emplace("Authorization", "Bearer " + cfg_.auth_token);
    auto res = cli.Post(cfg_.path, headers, body.dump(), "application/json");

    nlohmann::json row{{"attempt", attempt},
                       {"class_name", q.class_name},
                       {"status", res ? res->status : -1}};
    if (res && res->status == 200) {
      try {
        auto parsed = nlohmann::json::parse(res->body);
        const std::string answer = parsed.at("answer").get<std::string>();
        row["answer"] = answer;
        detail::append_transcript(cfg_.transcript_path, row);
        if (answer == "yes") return true;
        if (answer == "no") return false;
        return std::nullopt;  // malformed answer counts as refusal
      } catch (const nlohmann::json::exception&) {
        row["error"] = "unparseable body";
        detail::append_transcript(cfg_.transcript_path, row);
        return std::nullopt;
      }
    }
    detail::append_transcript(cfg_.transcript_path, row);
  }
  return std::nullopt;
}

}  // namespace voxalign
