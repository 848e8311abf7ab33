#include "voxalign/cohort/generate.hpp"
#include "voxalign/textenc/labeling.hpp"
#include "voxalign/textenc/labeling_http.hpp"
#include "voxalign/textenc/lm.hpp"
#include "voxalign/textenc/name_encoder.hpp"
#include "voxalign/textenc/summarize.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace voxalign;

namespace {
std::vector<std::string> cohort_summaries(const std::vector<VolumetricStudy>& cohort) {
  std::vector<std::string> texts;
  for (const auto& st : cohort) texts.push_back(summary_text(summarize(st)));
  return texts;
}

// Mean silhouette over points with euclidean distance on unit-norm vectors;
// singleton clusters contribute 0.
double silhouette(const std::vector<std::vector<double>>& points,
                  const std::vector<int>& cluster) {
  auto dist = [&](std::size_t a, std::size_t b) {
    double na = 0, nb = 0, d = 0;
    for (std::size_t c = 0; c < points[a].size(); ++c) {
      na += points[a][c] * points[a][c];
      nb += points[b][c] * points[b][c];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    for (std::size_t c = 0; c < points[a].size(); ++c) {
      const double diff = points[a][c] / na - points[b][c] / nb;
      d += diff * diff;
    }
    return std::sqrt(d);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double a_sum = 0.0;
    std::size_t a_count = 0;
    std::map<int, std::pair<double, std::size_t>> other;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      if (cluster[j] == cluster[i]) {
        a_sum += dist(i, j);
        ++a_count;
      } else {
        auto& [s, n] = other[cluster[j]];
        s += dist(i, j);
        ++n;
      }
    }
    if (a_count == 0 || other.empty()) continue;  // singleton: contributes 0
    const double a = a_sum / (double)a_count;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [c, sn] : other) b = std::min(b, sn.first / (double)sn.second);
    total += (b - a) / std::max(a, b);
  }
  return total / (double)points.size();
}
}  // namespace

TEST_CASE("summaries are exactly the ordered findings") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 40;
  auto cohort = generate_cohort(cfg, 71);
  bool saw_normal = false, saw_abnormal = false;
  for (const auto& st : cohort) {
    auto s = summarize(st);
    CHECK(s.source_id == st.study_id);
    if (st.report.findings.empty()) {
      saw_normal = true;
      REQUIRE(s.items.size() == 1);
      CHECK(s.items[0] == no_abnormality_item());
    } else {
      saw_abnormal = true;
      REQUIRE(s.items.size() == st.report.findings.size());
      for (std::size_t i = 0; i < s.items.size(); ++i)
        CHECK(s.items[i] == st.report.findings[i].text);
    }
    // No boilerplate or comparison terms survive.
    for (const auto& item : s.items) {
      CHECK(item.rfind("TECHNIQUE", 0) == std::string::npos);
      CHECK_FALSE(detail::contains_comparison_term(item));
    }
  }
  CHECK(saw_normal);
  CHECK(saw_abnormal);
}

TEST_CASE("comparison clause inside a finding sentence is stripped, finding kept") {
  RawReport r;
  r.prose =
      "CLINICAL HISTORY: Headache. "
      "There is a small subdural hematoma collection in the left frontal convexity, "
      "stable compared to the prior examination. "
      "This has improved since the previous examination.";
  auto s = summarize(r);
  REQUIRE(s.items.size() == 1);
  CHECK(s.items[0] ==
        "There is a small subdural hematoma collection in the left frontal convexity.");
}

TEST_CASE("summarization is idempotent") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 15;
  auto cohort = generate_cohort(cfg, 73);
  for (const auto& st : cohort) {
    auto once = summarize(st);
    RawReport as_report;
    as_report.prose = summary_text(once);
    auto twice = summarize(as_report);
    CHECK(twice.items == once.items);
  }
}

TEST_CASE("mock labeling reproduces generator labels exactly") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 40;
  auto cohort = generate_cohort(cfg, 79);
  auto rules = keyword_rules_from_classes(cfg.classes);
  MockLabelClient client(cfg.classes);
  for (const auto& st : cohort) {
    auto labels = label_report(st.report, rules, client);
    REQUIRE(labels.size() == st.labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) REQUIRE(labels[c] == st.labels[c]);
  }
}

TEST_CASE("keyword prefilter answers obvious negatives without the client") {
  CohortConfig cfg = default_cohort_config();
  auto rules = keyword_rules_from_classes(cfg.classes);
  RawReport r;
  r.prose = "There is a large metastatic mass lesion in the right parietal lobe.";

  // Count candidate classes the same way the oracle rules define them.
  const std::string low = detail::lowercase(r.prose);
  std::size_t candidates = 0;
  bool subdural_candidate = false;
  for (const auto& rule : rules) {
    bool all = true;
    for (const auto& kw : rule.required)
      all = all && low.find(detail::lowercase(kw)) != std::string::npos;
    candidates += all ? 1 : 0;
    if (rule.class_name == "subdural-hematoma") subdural_candidate = all;
  }
  REQUIRE_FALSE(subdural_candidate);  // lacks "subdural" and "hemat"
  REQUIRE(candidates < rules.size());

  MockLabelClient client(cfg.classes);
  auto labels = label_report(r, rules, client);
  CHECK(client.calls() == candidates);
  for (std::size_t c = 0; c < rules.size(); ++c)
    if (rules[c].class_name == "subdural-hematoma") CHECK(labels[c] == 0);
}

TEST_CASE("client refusal surfaces as unlabeled, never silent negative") {
  CohortConfig cfg = default_cohort_config();
  auto rules = keyword_rules_from_classes(cfg.classes);
  CohortConfig small = cfg;
  small.n_studies = 10;
  small.normal_fraction = 0.0;
  auto cohort = generate_cohort(small, 83);
  UnavailableLabelClient client;
  bool saw_unknown = false;
  for (const auto& st : cohort) {
    auto labels = label_report(st.report, rules, client);
    const std::string low = detail::lowercase(st.report.prose);
    for (std::size_t c = 0; c < rules.size(); ++c) {
      bool all = true;
      for (const auto& kw : rules[c].required)
        all = all && low.find(detail::lowercase(kw)) != std::string::npos;
      if (all) {
        CHECK(labels[c] == kLabelUnknown);
        saw_unknown = true;
      } else {
        CHECK(labels[c] == 0);
      }
    }
  }
  CHECK(saw_unknown);
}

TEST_CASE("http labeling client parses answers, retries, and logs transcripts") {
  httplib::Server svr;
  std::atomic<int> hits{0};
  svr.Post("/label", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    if (n == 1) {  // first attempt fails; client must retry
      res.status = 500;
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    const bool yes = body.at("class_name").get<std::string>() == "target-class";
    res.set_content(nlohmann::json{{"answer", yes ? "yes" : "no"}}.dump(),
                    "application/json");
  });
  const int port = svr.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();

  const std::string transcript = "_tmp_label_transcript.jsonl";
  std::filesystem::remove(transcript);
  HttpClientConfig cfg;
  cfg.port = port;
  cfg.max_retries = 2;
  cfg.backoff_ms = 1;
  cfg.transcript_path = transcript;
  HttpLabelClient client(cfg);

  auto yes = client.ask({"report text", "target-class"});
  REQUIRE(yes.has_value());
  CHECK(*yes);
  auto no = client.ask({"report text", "other-class"});
  REQUIRE(no.has_value());
  CHECK_FALSE(*no);

  svr.stop();
  server.join();

  std::ifstream in(transcript);
  std::size_t rows = 0;
  std::string line;
  bool saw_retry = false;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.at("attempt").get<int>() > 0) saw_retry = true;
    ++rows;
  }
  CHECK(rows >= 3);  // failed attempt + retry + second query
  CHECK(saw_retry);
  std::filesystem::remove(transcript);
}

TEST_CASE("lm next-token distributions are normalized") {
  Vocab v = Vocab::build({"there is a small lesion .", "there is a large lesion ."});
  LmHp hp;
  hp.epochs = 0;
  ReportLmModel model(v, hp);
  auto ids = v.encode("there is a", hp.max_len);
  auto dist = model.lm().next_token_dist(ids);
  REQUIRE(dist.size() == v.size());
  double sum = 0.0;
  for (double p : dist) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("lm pretraining drives validation perplexity down") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 120;
  auto cohort = generate_cohort(cfg, 89);
  auto texts = cohort_summaries(cohort);

  LmHp hp;
  hp.epochs = 4;
  hp.seed = 5;
  auto res = pretrain_report_lm(texts, hp);
  REQUIRE(res.val_perplexity.size() == hp.epochs);
  CHECK(std::isfinite(res.initial_val_perplexity));
  // Strict decrease over the early epochs, large improvement overall.
  double prev = res.initial_val_perplexity;
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(res.val_perplexity[e] < prev);
    prev = res.val_perplexity[e];
  }
  CHECK(res.val_perplexity.back() < 0.25 * res.initial_val_perplexity);
}

TEST_CASE("more pretraining data gives lower final perplexity") {
  CohortConfig cfg = default_cohort_config();
  cfg.n_studies = 200;
  auto cohort = generate_cohort(cfg, 97);
  auto texts = cohort_summaries(cohort);
  std::vector<std::string> small_corpus(texts.begin(), texts.begin() + 24);

  LmHp hp;
  hp.epochs = 4;
  hp.seed = 6;
  auto small_res = pretrain_report_lm(small_corpus, hp);
  auto big_res = pretrain_report_lm(texts, hp);
  INFO("small " << small_res.val_perplexity.back() << " big "
                << big_res.val_perplexity.back());
  CHECK(big_res.val_perplexity.back() < small_res.val_perplexity.back());
}

TEST_CASE("report embeddings live in clip space and are deterministic") {
  Vocab v = Vocab::build({"there is a small lesion .", "no significant abnormality ."});
  LmHp hp;
  ReportLmModel model(v, hp);
  Matrix a = model.lm().encode_text_eval("there is a small lesion .");
  Matrix b = model.lm().encode_text_eval("there is a small lesion .");
  REQUIRE(a.rows() == 1);
  REQUIRE(a.cols() == hp.clip_dim);
  CHECK(a.storage() == b.storage());
  // Unseen words fall back to unk; long text truncates instead of failing.
  std::string lots = "completely novel wording";
  for (int i = 0; i < 30; ++i) lots += " extra tokens here";
  Matrix c = model.lm().encode_text_eval(lots);
  CHECK(std::isfinite(c(0, 0)));
}

TEST_CASE("name encoder is deterministic and separates names") {
  ParamStore store;
  Rng rng(3);
  NameEncoder enc(store, "esn", NameEncoderHp{}, rng);
  auto a1 = enc.encode("AX_T1");
  auto a2 = enc.encode("AX_T1");
  CHECK(a1 == a2);
  auto b = enc.encode("COR_T2");
  double dist = 0.0;
  for (std::size_t i = 0; i < a1.size(); ++i) dist += (a1[i] - b[i]) * (a1[i] - b[i]);
  CHECK(dist > 0.0);
  CHECK(enc.encode("unk").size() == NameEncoderHp{}.out_dim);
  CHECK(enc.encode("").size() == NameEncoderHp{}.out_dim);  // empty maps to unk
}

TEST_CASE("grid latent mean averages kept tokens only") {
  TokenGrid g;
  g.patch_grid = {2, 1, 1};
  VolumeToken t0;
  t0.latent = {1.0, 3.0};
  t0.kept = true;
  VolumeToken t1;
  t1.latent = {5.0, 7.0};
  t1.kept = true;
  VolumeToken t2;
  t2.latent = {100.0, 100.0};
  t2.kept = false;
  g.tokens = {t0, t1, t2};
  CHECK(grid_latent_mean(g) == std::vector<double>{3.0, 5.0});
  TokenGrid empty;
  empty.tokens = {t2};
  CHECK_THROWS(grid_latent_mean(empty));
}

TEST_CASE("name pretraining aligns names with volume summaries") {
  // Four names with distinct latent prototypes; plane dominates the
  // prototype so embeddings should organize by plane after training.
  const std::vector<std::string> names{"AX_T1", "AX_T2_FLAIR", "COR_T2", "SAG_T1_POST"};
  const std::vector<int> plane{0, 0, 1, 2};
  auto prototype = [&](std::size_t i) {
    std::vector<double> p(8, 0.0);
    p[(std::size_t)plane[i]] = 2.0;  // plane component, dominant
    p[3 + i] = 0.7;                  // sequence-type component
    return p;
  };

  NamePretrainHp hp;
  hp.seed = 9;
  hp.epochs = 40;
  Rng rng(15);
  std::vector<NamePair> train;
  for (int rep = 0; rep < 20; ++rep)
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto v = prototype(i);
      for (auto& x : v) x += rng.normal(0.0, 0.05);
      train.push_back({names[i], v});
    }
  std::vector<NamePair> val;
  for (std::size_t i = 0; i < names.size(); ++i) val.push_back({names[i], prototype(i)});

  auto res = pretrain_name_encoder(train, val, hp);
  INFO("top1 " << res.initial_top1 << " -> " << res.final_top1);
  CHECK(res.final_top1 > 0.25);  // above chance on 4 held-out pairs
  CHECK(res.final_top1 >= res.initial_top1);

  // Single-pair batch retrieval is trivially perfect.
  CHECK(res.aligner->top1_retrieval({val[0]}) == 1.0);

  // Plane clustering: trained embeddings beat an untrained encoder's
  // silhouette over the plane partition.
  std::vector<std::vector<double>> trained_pts, fresh_pts;
  NameVolumeAligner fresh(hp);
  for (const auto& n : names) {
    trained_pts.push_back(res.aligner->encoder().encode(n));
    fresh_pts.push_back(fresh.encoder().encode(n));
  }
  const double s_trained = silhouette(trained_pts, plane);
  const double s_fresh = silhouette(fresh_pts, plane);
  INFO("silhouette " << s_fresh << " -> " << s_trained);
  CHECK(s_trained > s_fresh);
}
