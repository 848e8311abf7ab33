#pragma once

// Character-level name encoders for sequence and study names, and the
// CLIP-style pretraining that aligns sequence-name embeddings with volume
// token summaries.

#include "voxalign/core/nn.hpp"
#include "voxalign/core/optim.hpp"
#include "voxalign/objectives/losses.hpp"
#include "voxalign/voltok/cache.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace voxalign {

struct NameEncoderHp {
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t layers = 3;
  std::size_t out_dim = 32;
  std::size_t max_len = 24;
};

// 3-layer character transformer; printable ASCII vocabulary with a shared
// id for everything else, so the literal name "unk" needs no special case.
class NameEncoder {
 public:
  static constexpr std::size_t kVocab = 97;  // 95 printable + other + reserved 0

  NameEncoder() = default;
  NameEncoder(ParamStore& store, const std::string& prefix, const NameEncoderHp& hp,
              Rng& rng)
      : hp_(hp) {
    emb_ = Embedding(store, prefix + ".emb", kVocab, hp.d_model, rng);
    pos_ = &store.add(prefix + ".pos", normal_init(rng, hp.max_len, hp.d_model, 0.02));
    for (std::size_t l = 0; l < hp.layers; ++l)
      blocks_.emplace_back(store, prefix + ".blk" + std::to_string(l), hp.d_model,
                           hp.heads, rng);
    lnf_ = LayerNorm(store, prefix + ".lnf", hp.d_model);
    out_ = Linear(store, prefix + ".out", hp.d_model, hp.out_dim, rng);
  }

  const NameEncoderHp& hp() const { return hp_; }

  static std::size_t char_id(char c) {
    const unsigned char u = (unsigned char)c;
    return (u >= 32 && u <= 126) ? (std::size_t)(u - 31) : (std::size_t)96;
  }

  std::vector<std::size_t> encode_chars(const std::string& name) const {
    std::string src = name.empty() ? std::string("unk") : name;
    if (src.size() > hp_.max_len) src.resize(hp_.max_len);
    std::vector<std::size_t> ids;
    ids.reserve(src.size());
    for (char c : src) ids.push_back(char_id(c));
    return ids;
  }

  Var encode_var(TapeBinding& B, const std::string& name) const {
    const auto ids = encode_chars(name);
    const std::size_t n = ids.size();
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    Var x = ag::add(emb_.forward(B, ids), ag::gather_rows(B(*pos_), positions));
    for (const auto& blk : blocks_) x = blk.forward(B, x);
    Var h = lnf_.forward(B, x);
    Matrix pool(1, n, 1.0 / (double)n);
    return out_.forward(B, ag::matmul(B.tape().constant(pool), h));
  }

  std::vector<double> encode(const std::string& name) const {
    Tape t;
    TapeBinding B(t);
    return encode_var(B, name).val().row_vec(0);
  }

 private:
  NameEncoderHp hp_;
  Embedding emb_;
  Param* pos_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNorm lnf_;
  Linear out_;
};

// V(F(Z)): mean latent over kept tokens, the volume-side summary the name
// embedding is aligned against.
inline std::vector<double> grid_latent_mean(const TokenGrid& grid) {
  std::vector<double> mean;
  std::size_t kept = 0;
  for (const auto& tok : grid.tokens) {
    if (!tok.kept) continue;
    if (mean.empty()) mean.assign(tok.latent.size(), 0.0);
    for (std::size_t c = 0; c < tok.latent.size(); ++c) mean[c] += tok.latent[c];
    ++kept;
  }
  if (kept == 0) throw std::invalid_argument("grid_latent_mean: no kept tokens");
  for (auto& x : mean) x /= (double)kept;
  return mean;
}

struct NamePair {
  std::string name;
  std::vector<double> volume_summary;
};

struct NamePretrainHp {
  NameEncoderHp encoder;
  std::size_t latent_dim = 8;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
};

// Owns the sequence-name encoder plus the volume projection and temperature
// used only during alignment pretraining.
class NameVolumeAligner {
 public:
  explicit NameVolumeAligner(const NamePretrainHp& hp) : hp_(hp) {
    Rng rng(hp.seed ^ 0xE5A0ULL);
    enc_ = NameEncoder(store_, "esn", hp.encoder, rng);
    vproj_ = Linear(store_, "vproj", hp.latent_dim, hp.encoder.out_dim, rng);
    tau_ = &store_.add("tau", Matrix(1, 1, 0.07), false);
  }
  NameVolumeAligner(const NameVolumeAligner&) = delete;
  NameVolumeAligner& operator=(const NameVolumeAligner&) = delete;

  const NameEncoder& encoder() const { return enc_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  Var encode_names(TapeBinding& B, const std::vector<std::string>& names) const {
    std::vector<Var> rows;
    rows.reserve(names.size());
    for (const auto& n : names) rows.push_back(enc_.encode_var(B, n));
    return ag::concat_rows(rows);
  }

  Var encode_volumes(TapeBinding& B, const std::vector<std::vector<double>>& summaries) const {
    Matrix m(summaries.size(), hp_.latent_dim);
    for (std::size_t i = 0; i < summaries.size(); ++i) m.set_row(i, summaries[i]);
    return vproj_.forward(B, B.tape().constant(m));
  }

  double train_step(const std::vector<NamePair>& batch, AdamW& opt) {
    Tape t;
    TapeBinding B(t);
    std::vector<std::string> names;
    std::vector<std::vector<double>> vols;
    for (const auto& p : batch) {
      names.push_back(p.name);
      vols.push_back(p.volume_summary);
    }
    Var loss = clip_loss(encode_names(B, names), encode_volumes(B, vols), B(*tau_));
    const double value = loss.scalar();
    store_.zero_grad();
    t.backward(loss);
    B.harvest();
    AdamW::clip_grad_norm(store_, 1.0);
    opt.step(store_);
    // Keep exp(tau) <= 100.
    tau_->value(0, 0) = std::min(tau_->value(0, 0), std::log(100.0));
    return value;
  }

  // Fraction of rows whose matched pair has the highest cosine similarity.
  double top1_retrieval(const std::vector<NamePair>& pairs) const {
    Tape t;
    TapeBinding B(t);
    std::vector<std::string> names;
    std::vector<std::vector<double>> vols;
    for (const auto& p : pairs) {
      names.push_back(p.name);
      vols.push_back(p.volume_summary);
    }
    Matrix n = ag::normalize_rows(encode_names(B, names)).val();
    Matrix v = ag::normalize_rows(encode_volumes(B, vols)).val();
    Matrix sim = matmul_nt(n, v);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sim.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < sim.cols(); ++j)
        if (sim(i, j) > sim(i, best)) best = j;
      hits += best == i ? 1 : 0;
    }
    return (double)hits / (double)sim.rows();
  }

 private:
  NamePretrainHp hp_;
  ParamStore store_;
  NameEncoder enc_;
  Linear vproj_;
  Param* tau_ = nullptr;
};

struct NamePretrainResult {
  std::unique_ptr<NameVolumeAligner> aligner;
  double initial_top1 = 0.0;
  double final_top1 = 0.0;
};

inline NamePretrainResult pretrain_name_encoder(const std::vector<NamePair>& train_pairs,
                                                const std::vector<NamePair>& val_pairs,
                                                const NamePretrainHp& hp) {
  if (train_pairs.size() < 2)
    throw std::invalid_argument("pretrain_name_encoder: need >= 2 pairs");
  NamePretrainResult res;
  res.aligner = std::make_unique<NameVolumeAligner>(hp);
  res.initial_top1 = val_pairs.empty() ? 0.0 : res.aligner->top1_retrieval(val_pairs);

  AdamW::Config oc;
  oc.lr = hp.lr;
  AdamW opt(oc);
  Rng rng(hp.seed ^ 0xE5A1ULL);
  std::vector<std::size_t> idx(train_pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(idx);
    for (std::size_t start = 0; start + 1 < idx.size(); start += hp.batch_size) {
      const std::size_t end = std::min(idx.size(), start + hp.batch_size);
      if (end - start < 2) break;  // CLIP needs >= 2 pairs
      std::vector<NamePair> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_pairs[idx[i]]);
      res.aligner->train_step(batch, opt);
    }
  }
  res.final_top1 = val_pairs.empty() ? 0.0 : res.aligner->top1_retrieval(val_pairs);
  return res;
}

}  // namespace voxalign
