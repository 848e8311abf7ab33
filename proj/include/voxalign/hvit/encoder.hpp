#pragma once

// Two-level hierarchical encoder over tokenized MRI studies. A sequence
// transformer runs per sequence over [registers ‖ name embedding ‖ volume
// tokens] with shared weights across sequences; its register readout becomes
// one row per sequence in the study transformer, alongside the study-name
// embedding and study registers. The study vector is the concatenation of the
// final-layer study registers.

#include "voxalign/core/nn.hpp"
#include "voxalign/core/serialize.hpp"
#include "voxalign/hvit/positional.hpp"
#include "voxalign/textenc/name_encoder.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct SequenceEncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t width = 16;
  std::size_t n_registers = 3;
  std::size_t output_dim = 24;
  std::size_t pos_per_axis = 6;  // sinusoid dims per coordinate axis, even

  static SequenceEncoderConfig reference() {
    SequenceEncoderConfig c;
    c.layers = 15;
    c.heads = 16;
    c.head_dim = 64;
    c.width = 1024;
    c.n_registers = 20;
    c.output_dim = 1024;
    c.pos_per_axis = 10;
    return c;
  }
};

struct StudyEncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t width = 16;
  std::size_t n_registers = 2;
  std::size_t output_dim = 32;  // n_registers * width when registers are read

  static StudyEncoderConfig reference() {
    StudyEncoderConfig c;
    c.layers = 4;
    c.heads = 8;
    c.head_dim = 64;
    c.width = 1024;
    c.n_registers = 10;
    c.output_dim = 10240;
    return c;
  }
};

struct HvitConfig {
  SequenceEncoderConfig seq;
  StudyEncoderConfig study;
  std::size_t latent_dim = 8;  // tokenizer latent width the input rows carry
  NameEncoderHp seq_name{.d_model = 16, .heads = 2, .layers = 2, .out_dim = 0,
                         .max_len = 24};
  NameEncoderHp study_name{.d_model = 16, .heads = 2, .layers = 2, .out_dim = 0,
                           .max_len = 32};
  // Ablation: read mean-pooled content rows instead of register tokens.
  bool use_registers = true;
  // Feed quantized codebook rows instead of continuous encoder latents.
  bool use_quantized = false;

  std::size_t token_input_dim() const {
    return latent_dim + position_dim(seq.pos_per_axis);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SequenceEncoderConfig, layers, heads, head_dim,
                                   width, n_registers, output_dim, pos_per_axis)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StudyEncoderConfig, layers, heads, head_dim, width,
                                   n_registers, output_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NameEncoderHp, d_model, heads, layers, out_dim,
                                   max_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(HvitConfig, seq, study, latent_dim, seq_name,
                                   study_name, use_registers, use_quantized)

struct StudyEmbedding {
  Matrix vector;  // 1 x study output_dim
  std::vector<std::pair<std::string, std::vector<double>>> per_sequence;
};

inline std::size_t count_parameters(const ParamStore& store,
                                    const std::string& prefix = "") {
  std::size_t n = 0;
  for (const auto& [name, p] : store)
    if (prefix.empty() || name.rfind(prefix, 0) == 0) n += p.value.size();
  return n;
}

namespace detail {

inline std::size_t linear_params(std::size_t in, std::size_t out) {
  return in * out + out;
}

inline std::size_t block_params(std::size_t w, std::size_t heads, std::size_t head_dim) {
  const std::size_t d = head_dim ? head_dim : w / heads;
  const std::size_t inner = heads * d;
  return 2 * w + 3 * linear_params(w, inner) + linear_params(inner, w) + 2 * w +
         linear_params(w, 4 * w) + linear_params(4 * w, w);
}

inline std::size_t name_encoder_params(const NameEncoderHp& hp) {
  return NameEncoder::kVocab * hp.d_model + hp.max_len * hp.d_model +
         hp.layers * block_params(hp.d_model, hp.heads, 0) + 2 * hp.d_model +
         linear_params(hp.d_model, hp.out_dim);
}

}  // namespace detail

// Closed-form parameter count for a config, without allocating the model.
// Must mirror the registration in HierarchicalEncoder exactly; the unit tests
// pin the two against each other on small configs.
inline std::size_t hvit_parameter_count(const HvitConfig& cfg) {
  NameEncoderHp esn = cfg.seq_name;
  esn.out_dim = cfg.seq.width;
  NameEncoderHp estn = cfg.study_name;
  estn.out_dim = cfg.study.width;
  const std::size_t seq_pool =
      cfg.use_registers ? cfg.seq.n_registers * cfg.seq.width : cfg.seq.width;
  std::size_t n = 0;
  n += detail::linear_params(cfg.token_input_dim(), cfg.seq.width);
  if (cfg.use_registers) n += cfg.seq.n_registers * cfg.seq.width;
  n += detail::name_encoder_params(esn);
  n += cfg.seq.layers * detail::block_params(cfg.seq.width, cfg.seq.heads,
                                             cfg.seq.head_dim);
  n += 2 * cfg.seq.width;
  n += detail::linear_params(seq_pool, cfg.seq.output_dim);
  n += detail::linear_params(cfg.seq.output_dim, cfg.study.width);
  n += detail::name_encoder_params(estn);
  if (cfg.use_registers) n += cfg.study.n_registers * cfg.study.width;
  n += cfg.study.layers * detail::block_params(cfg.study.width, cfg.study.heads,
                                               cfg.study.head_dim);
  n += 2 * cfg.study.width;
  if (!cfg.use_registers)
    n += detail::linear_params(cfg.study.width, cfg.study.output_dim);
  return n;
}

class HierarchicalEncoder {
 public:
  HierarchicalEncoder() = default;
  HierarchicalEncoder(ParamStore& store, const std::string& prefix, HvitConfig cfg,
                      Rng& rng)
      : cfg_(std::move(cfg)) {
    validate(cfg_);
    cfg_.seq_name.out_dim = cfg_.seq.width;
    cfg_.study_name.out_dim = cfg_.study.width;
    tokproj_ = Linear(store, prefix + ".seq.tokproj", cfg_.token_input_dim(),
                      cfg_.seq.width, rng);
    if (cfg_.use_registers)
      seq_reg_ = &store.add(prefix + ".seq.reg",
                            normal_init(rng, cfg_.seq.n_registers, cfg_.seq.width, 0.02),
                            /*decay=*/false);
    esn_ = NameEncoder(store, prefix + ".esn", cfg_.seq_name, rng);
    for (std::size_t l = 0; l < cfg_.seq.layers; ++l)
      seq_blocks_.emplace_back(store, prefix + ".seq.blk" + std::to_string(l),
                               cfg_.seq.width, cfg_.seq.heads, rng, cfg_.seq.head_dim);
    seq_lnf_ = LayerNorm(store, prefix + ".seq.lnf", cfg_.seq.width);
    const std::size_t seq_pool = cfg_.use_registers
                                     ? cfg_.seq.n_registers * cfg_.seq.width
                                     : cfg_.seq.width;
    seq_head_ = Linear(store, prefix + ".seq.head", seq_pool, cfg_.seq.output_dim, rng);
    p_ = Linear(store, prefix + ".p", cfg_.seq.output_dim, cfg_.study.width, rng);
    estn_ = NameEncoder(store, prefix + ".estn", cfg_.study_name, rng);
    if (cfg_.use_registers)
      st_reg_ = &store.add(
          prefix + ".st.reg",
          normal_init(rng, cfg_.study.n_registers, cfg_.study.width, 0.02),
          /*decay=*/false);
    for (std::size_t l = 0; l < cfg_.study.layers; ++l)
      st_blocks_.emplace_back(store, prefix + ".st.blk" + std::to_string(l),
                              cfg_.study.width, cfg_.study.heads, rng,
                              cfg_.study.head_dim);
    st_lnf_ = LayerNorm(store, prefix + ".st.lnf", cfg_.study.width);
    if (!cfg_.use_registers)
      st_head_ = Linear(store, prefix + ".st.head", cfg_.study.width,
                        cfg_.study.output_dim, rng);
  }

  const HvitConfig& cfg() const { return cfg_; }

  void set_codebook(Codebook cb) { codebook_ = std::move(cb); }

  Var encode_sequence_var(TapeBinding& B, const TokenGrid& grid) const {
    const Codebook* cb = nullptr;
    if (cfg_.use_quantized) {
      if (codebook_.size() == 0)
        throw std::logic_error("quantized input requested without a codebook");
      cb = &codebook_;
    }
    const Matrix feats = token_feature_matrix(grid, cfg_.seq.pos_per_axis, cb);
    if (feats.cols() != cfg_.token_input_dim())
      throw std::invalid_argument("token latent width does not match config");
    Var tok = tokproj_.forward(B, B.tape().constant(feats));
    Var name = esn_.encode_var(B, grid.seq_name);
    std::vector<Var> rows;
    if (cfg_.use_registers) rows.push_back(B(*seq_reg_));
    rows.push_back(name);
    rows.push_back(tok);
    Var h = ag::concat_rows(rows);
    for (const auto& blk : seq_blocks_) h = blk.forward(B, h);
    h = seq_lnf_.forward(B, h);
    Var pooled = cfg_.use_registers
                     ? ag::reshape(ag::slice_rows(h, 0, cfg_.seq.n_registers), 1,
                                   cfg_.seq.n_registers * cfg_.seq.width)
                     : mean_rows(B, h);
    return seq_head_.forward(B, pooled);
  }

  // Skips sequences with no kept tokens; a study where every sequence is
  // empty is an error rather than a zero vector.
  Var encode_study_var(TapeBinding& B, const std::vector<const TokenGrid*>& grids,
                       const std::string& study_name,
                       std::vector<Var>* sequence_outputs = nullptr,
                       std::vector<std::size_t>* used = nullptr) const {
    if (grids.empty()) throw std::invalid_argument("encode_study: no sequences");
    std::vector<Var> rs;
    for (std::size_t i = 0; i < grids.size(); ++i) {
      if (grids[i]->kept_count() == 0) continue;
      rs.push_back(encode_sequence_var(B, *grids[i]));
      if (used) used->push_back(i);
    }
    if (rs.empty())
      throw std::invalid_argument("encode_study: all sequences empty after filtering");
    if (sequence_outputs) *sequence_outputs = rs;
    Var pr = p_.forward(B, ag::concat_rows(rs));
    Var sname = estn_.encode_var(B, study_name);
    std::vector<Var> rows;
    if (cfg_.use_registers) rows.push_back(B(*st_reg_));
    rows.push_back(sname);
    rows.push_back(pr);
    Var h = ag::concat_rows(rows);
    for (const auto& blk : st_blocks_) h = blk.forward(B, h);
    h = st_lnf_.forward(B, h);
    if (cfg_.use_registers)
      return ag::reshape(ag::slice_rows(h, 0, cfg_.study.n_registers), 1,
                         cfg_.study.n_registers * cfg_.study.width);
    return st_head_.forward(B, mean_rows(B, h));
  }

  std::vector<double> encode_sequence(const TokenGrid& grid) const {
    Tape t;
    TapeBinding B(t);
    return encode_sequence_var(B, grid).val().row_vec(0);
  }

  StudyEmbedding encode_study(const std::vector<const TokenGrid*>& grids,
                              const std::string& study_name) const {
    Tape t;
    TapeBinding B(t);
    std::vector<Var> rs;
    std::vector<std::size_t> used;
    Var v = encode_study_var(B, grids, study_name, &rs, &used);
    StudyEmbedding out;
    out.vector = v.val();
    for (std::size_t j = 0; j < rs.size(); ++j)
      out.per_sequence.emplace_back(grids[used[j]]->seq_name, rs[j].val().row_vec(0));
    return out;
  }

 private:
  static void validate(const HvitConfig& cfg) {
    auto nonzero = [](std::size_t v, const char* what) {
      if (v == 0) throw std::invalid_argument(std::string("config: zero ") + what);
    };
    nonzero(cfg.seq.layers, "seq layers");
    nonzero(cfg.seq.heads, "seq heads");
    nonzero(cfg.seq.width, "seq width");
    nonzero(cfg.seq.output_dim, "seq output dim");
    nonzero(cfg.study.layers, "study layers");
    nonzero(cfg.study.heads, "study heads");
    nonzero(cfg.study.width, "study width");
    nonzero(cfg.study.output_dim, "study output dim");
    nonzero(cfg.latent_dim, "latent dim");
    if (cfg.use_registers) {
      nonzero(cfg.seq.n_registers, "seq registers");
      nonzero(cfg.study.n_registers, "study registers");
      if (cfg.study.output_dim != cfg.study.n_registers * cfg.study.width)
        throw std::invalid_argument(
            "study output dim must be n_registers * width when registers are read");
    }
  }

  static Var mean_rows(TapeBinding& B, Var h) {
    const std::size_t n = h.val().rows();
    Matrix pool(1, n, 1.0 / (double)n);
    return ag::matmul(B.tape().constant(pool), h);
  }

  HvitConfig cfg_;
  Codebook codebook_;
  Linear tokproj_;
  Param* seq_reg_ = nullptr;
  NameEncoder esn_;
  std::vector<TransformerBlock> seq_blocks_;
  LayerNorm seq_lnf_;
  Linear seq_head_;
  Linear p_;
  NameEncoder estn_;
  Param* st_reg_ = nullptr;
  std::vector<TransformerBlock> st_blocks_;
  LayerNorm st_lnf_;
  Linear st_head_;
};

}  // namespace voxalign
