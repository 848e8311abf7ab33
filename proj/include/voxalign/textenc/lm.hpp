#pragma once

// Report language model: word-level vocabulary over the report grammar, a
// small causal transformer trained by next-word prediction, and the linear
// projection into the shared CLIP space.

#include "voxalign/core/autograd.hpp"
#include "voxalign/core/nn.hpp"
#include "voxalign/core/optim.hpp"
#include "voxalign/core/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

namespace detail {
// Lowercased words plus standalone punctuation tokens.
inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'' || c == '-' || c == '_') {
      cur.push_back((char)std::tolower(c));
    } else if (c == '.' || c == ',' || c == ':' || c == ';') {
      flush();
      out.push_back(std::string(1, (char)c));
    } else {
      flush();
    }
  }
  flush();
  return out;
}
}  // namespace detail

struct Vocab {
  static constexpr std::size_t kBos = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kUnk = 2;

  std::vector<std::string> words{"<bos>", "<eos>", "<unk>"};
  std::map<std::string, std::size_t> to_id;

  static Vocab build(const std::vector<std::string>& corpus) {
    Vocab v;
    for (const auto& text : corpus)
      for (const auto& w : detail::tokenize_words(text))
        if (!v.to_id.count(w)) {
          v.to_id.emplace(w, v.words.size());
          v.words.push_back(w);
        }
    return v;
  }

  std::size_t size() const { return words.size(); }

  std::size_t id_of(const std::string& w) const {
    auto it = to_id.find(w);
    return it == to_id.end() ? kUnk : it->second;
  }

  // [bos, tokens..., eos], truncated to max_len ids total.
  std::vector<std::size_t> encode(const std::string& text, std::size_t max_len) const {
    std::vector<std::size_t> ids{kBos};
    for (const auto& w : detail::tokenize_words(text)) {
      if (ids.size() + 1 >= max_len) break;
      ids.push_back(id_of(w));
    }
    ids.push_back(kEos);
    return ids;
  }

  nlohmann::json to_json() const { return nlohmann::json(words); }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    v.words.clear();
    v.to_id.clear();
    for (const auto& w : j) {
      v.to_id.emplace(w.get<std::string>(), v.words.size());
      v.words.push_back(w.get<std::string>());
    }
    if (v.words.size() < 3) throw std::invalid_argument("vocab json missing specials");
    return v;
  }
};

struct LmHp {
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t max_len = 48;
  std::size_t clip_dim = 128;
  double lr = 3e-3;
  std::size_t epochs = 8;
  std::size_t batch_size = 8;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
};

// Causal transformer component; registers parameters into the caller's
// store under `prefix` so CLIP training can keep updating them.
class ReportLm {
 public:
  ReportLm() = default;
  ReportLm(ParamStore& store, const std::string& prefix, Vocab vocab, const LmHp& hp,
           Rng& rng)
      : vocab_(std::move(vocab)), hp_(hp) {
    emb_ = Embedding(store, prefix + ".emb", vocab_.size(), hp.d_model, rng);
    pos_ = &store.add(prefix + ".pos", normal_init(rng, hp.max_len, hp.d_model, 0.02));
    for (std::size_t l = 0; l < hp.layers; ++l)
      blocks_.emplace_back(store, prefix + ".blk" + std::to_string(l), hp.d_model,
                           hp.heads, rng);
    lnf_ = LayerNorm(store, prefix + ".lnf", hp.d_model);
    out_ = Linear(store, prefix + ".out", hp.d_model, vocab_.size(), rng);
    proj_ = Linear(store, prefix + ".proj", hp.d_model, hp.clip_dim, rng);
  }

  const Vocab& vocab() const { return vocab_; }
  const LmHp& hp() const { return hp_; }

  // Final-layer hidden states for a token sequence, causally masked.
  Var hidden(TapeBinding& B, const std::vector<std::size_t>& ids) const {
    if (ids.empty()) throw std::invalid_argument("lm: empty token sequence");
    if (ids.size() > hp_.max_len) throw std::invalid_argument("lm: sequence exceeds max_len");
    const std::size_t n = ids.size();
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    Var x = ag::add(emb_.forward(B, ids), ag::gather_rows(B(*pos_), positions));
    Matrix causal(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) causal(i, j) = -1e9;
    for (const auto& blk : blocks_) x = blk.forward(B, x, &causal);
    return lnf_.forward(B, x);
  }

  // Mean next-token negative log likelihood of a [bos ... eos] sequence.
  Var nll_mean(TapeBinding& B, const std::vector<std::size_t>& ids) const {
    if (ids.size() < 2) throw std::invalid_argument("lm: need >= 2 tokens for nll");
    std::vector<std::size_t> inputs(ids.begin(), ids.end() - 1);
    std::vector<std::size_t> targets(ids.begin() + 1, ids.end());
    Var logits = out_.forward(B, hidden(B, inputs));
    return ag::cross_entropy_rows(logits, targets);
  }

  // Distribution over the next token after the given prefix (eval path).
  std::vector<double> next_token_dist(const std::vector<std::size_t>& prefix) const {
    Tape t;
    TapeBinding B(t);
    Var logits = out_.forward(B, hidden(B, prefix));
    Var p = ag::softmax_rows(logits);
    const Matrix& m = p.val();
    return m.row_vec(m.rows() - 1);
  }

  // exp(total nll / total predicted tokens) over a corpus.
  double perplexity(const std::vector<std::string>& texts) const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& text : texts) {
      const auto ids = vocab_.encode(text, hp_.max_len);
      Tape t;
      TapeBinding B(t);
      const double mean_nll = nll_mean(B, ids).scalar();
      total += mean_nll * (double)(ids.size() - 1);
      count += ids.size() - 1;
    }
    if (count == 0) throw std::invalid_argument("lm: empty evaluation corpus");
    return std::exp(total / (double)count);
  }

  // Report embedding in CLIP space: mean-pooled hidden states, projected.
  Var encode_text(TapeBinding& B, const std::string& text) const {
    const auto ids = vocab_.encode(text, hp_.max_len);
    Var h = hidden(B, ids);
    const std::size_t n = h.val().rows();
    Matrix pool(1, n, 1.0 / (double)n);
    return proj_.forward(B, ag::matmul(B.tape().constant(pool), h));
  }

  Matrix encode_text_eval(const std::string& text) const {
    Tape t;
    TapeBinding B(t);
    return encode_text(B, text).val();
  }

 private:
  Vocab vocab_;
  LmHp hp_;
  Embedding emb_;
  Param* pos_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNorm lnf_;
  Linear out_, proj_;
};

// Own-store wrapper used by the pretraining stage and checkpointing.
class ReportLmModel {
 public:
  ReportLmModel(Vocab vocab, const LmHp& hp) : hp_(hp) {
    Rng rng(hp.seed ^ 0x1A36ULL);
    lm_ = ReportLm(store_, "lm", std::move(vocab), hp, rng);
  }
  ReportLmModel(const ReportLmModel&) = delete;
  ReportLmModel& operator=(const ReportLmModel&) = delete;

  ReportLm& lm() { return lm_; }
  const ReportLm& lm() const { return lm_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const LmHp& hp() const { return hp_; }

 private:
  LmHp hp_;
  ParamStore store_;
  ReportLm lm_;
};

struct LmPretrainResult {
  std::unique_ptr<ReportLmModel> model;
  double initial_val_perplexity = 0.0;
  std::vector<double> val_perplexity;  // one entry per epoch
};

inline LmPretrainResult pretrain_report_lm(const std::vector<std::string>& texts,
                                           const LmHp& hp) {
  if (texts.size() < 2) throw std::invalid_argument("pretrain_report_lm: need >= 2 texts");
  Rng rng(hp.seed ^ 0x1A37ULL);
  auto order = rng.permutation(texts.size());
  const std::size_t n_val =
      std::max<std::size_t>(1, (std::size_t)((double)texts.size() * hp.val_fraction));
  std::vector<std::string> val, train;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val : train).push_back(texts[order[i]]);
  if (train.empty()) throw std::invalid_argument("pretrain_report_lm: empty train split");

  LmPretrainResult res;
  res.model = std::make_unique<ReportLmModel>(Vocab::build(train), hp);
  ReportLm& lm = res.model->lm();
  ParamStore& store = res.model->store();
  AdamW::Config oc;
  oc.lr = hp.lr;
  AdamW opt(oc);
  res.initial_val_perplexity = lm.perplexity(val);

  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(idx);
    for (std::size_t start = 0; start < idx.size(); start += hp.batch_size) {
      const std::size_t end = std::min(idx.size(), start + hp.batch_size);
      store.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        Tape t;
        TapeBinding B(t);
        const auto ids = lm.vocab().encode(train[idx[i]], hp.max_len);
        Var loss = ag::scale(lm.nll_mean(B, ids), 1.0 / (double)(end - start));
        t.backward(loss);
        B.harvest();
      }
      AdamW::clip_grad_norm(store, 1.0);
      opt.step(store);
    }
    res.val_perplexity.push_back(lm.perplexity(val));
  }
  return res;
}

}  // namespace voxalign
