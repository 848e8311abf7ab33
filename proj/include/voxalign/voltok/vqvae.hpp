#pragma once

// VQ-VAE over flattened volume patches: MLP encoder/decoder, straight-through
// estimator, codebook + commitment losses, dead-entry reseeding, and the
// random axis-permutation training augmentation.

#include "voxalign/core/autograd.hpp"
#include "voxalign/core/hash.hpp"
#include "voxalign/core/nn.hpp"
#include "voxalign/core/optim.hpp"
#include "voxalign/core/rng.hpp"
#include "voxalign/voltok/voltok.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

struct VqHp {
  std::size_t codebook_size = 64;
  std::size_t hidden = 64;
  double lr = 1e-3;
  std::size_t epochs = 6;
  std::size_t batch_size = 256;
  double beta = 0.25;  // commitment weight
  bool permutation_augment = true;
  std::size_t dead_epochs = 2;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct VqEpochStats {
  std::size_t epoch = 0;
  double train_l1 = 0.0;
  double val_l1 = 0.0;
  double val_l1_permuted = 0.0;
  std::size_t codebook_used = 0;
  std::size_t reseeded = 0;
};

class VqVae {
 public:
  VqVae(const PatchSpec& spec, const VqHp& hp) : spec_(spec), hp_(hp) {
    Rng rng(hp.seed);
    const std::size_t P = spec.voxels(), d = spec.latent_dim();
    enc1_ = Linear(store_, "enc.l0", P, hp.hidden, rng);
    enc2_ = Linear(store_, "enc.l1", hp.hidden, d, rng);
    dec1_ = Linear(store_, "dec.l0", d, hp.hidden, rng);
    dec2_ = Linear(store_, "dec.l1", hp.hidden, P, rng);
    codebook_ = &store_.add("codebook.e", normal_init(rng, hp.codebook_size, d, 0.05));
    usage_.assign(hp.codebook_size, 0);
    dead_streak_.assign(hp.codebook_size, 0);
  }

  const PatchSpec& spec() const { return spec_; }
  const VqHp& hp() const { return hp_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  Var encode(TapeBinding& B, Var x) const {
    return enc2_.forward(B, ag::gelu(enc1_.forward(B, x)));
  }
  Var decode(TapeBinding& B, Var z) const {
    return dec2_.forward(B, ag::gelu(dec1_.forward(B, z)));
  }

  Matrix encode_eval(const Matrix& x) const {
    Tape t;
    TapeBinding B(t);
    return encode(B, t.constant(x)).val();
  }
  Matrix decode_eval(const Matrix& z) const {
    Tape t;
    TapeBinding B(t);
    return decode(B, t.constant(z)).val();
  }

  Codebook codebook() const {
    Codebook cb;
    cb.entries = codebook_->value;
    cb.usage_counts = usage_;
    return cb;
  }

  // Hash of all parameter bytes; keys the token cache.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [name, p] : store_) {
      h = fnv1a64(name, h);
      h = fnv1a64(p.value.data(), p.value.size() * sizeof(double), h);
    }
    return h;
  }

  // One optimization step over a flattened batch; returns (total, recon L1).
  std::pair<double, double> train_step(const Matrix& X, AdamW& opt) {
    Tape t;
    TapeBinding B(t);
    Var x = t.constant(X);
    Var z_e = encode(B, x);

    const Matrix& Z = z_e.val();
    std::vector<std::size_t> codes(Z.rows());
    Codebook cb_view;
    cb_view.entries = codebook_->value;
    for (std::size_t r = 0; r < Z.rows(); ++r) {
      codes[r] = quantize(Z.row_vec(r), cb_view).first;
      ++usage_[codes[r]];
    }
    Var z_q = ag::gather_rows(B(*codebook_), codes);

    // Straight-through: value z_q, gradient to the encoder path.
    Matrix jump = z_q.val();
    jump.map() -= Z.map();
    Var dec_in = ag::add(z_e, t.constant(jump));
    Var recon = decode(B, dec_in);

    Var l_rec = ag::l1(recon, X);
    Var l_code = ag::mse(z_q, Z);
    Var diff_commit = ag::sub(z_e, t.constant(z_q.val()));
    Var l_commit = ag::mean_all(ag::mul(diff_commit, diff_commit));
    Var loss = ag::add(l_rec, ag::add(l_code, ag::scale(l_commit, hp_.beta)));

    const double total = loss.scalar();
    if (!std::isfinite(total))
      throw std::runtime_error("vqvae: non-finite loss at step " +
                               std::to_string(opt.steps()));
    store_.zero_grad();
    t.backward(loss);
    B.harvest();
    AdamW::clip_grad_norm(store_, 1.0);
    opt.step(store_);
    return {total, l_rec.scalar()};
  }

  double eval_l1(const Matrix& X) const {
    Matrix Z = encode_eval(X);
    Codebook cb_view;
    cb_view.entries = codebook_->value;
    Matrix Zq(Z.rows(), Z.cols());
    for (std::size_t r = 0; r < Z.rows(); ++r) {
      auto [idx, zq] = quantize(Z.row_vec(r), cb_view);
      Zq.set_row(r, zq);
    }
    Matrix R = decode_eval(Zq);
    R.map() -= X.map();
    return R.map().cwiseAbs().mean();
  }

  // Epoch-boundary bookkeeping: entries silent for dead_epochs consecutive
  // epochs are reseeded from encoder outputs of random patches.
  std::size_t end_epoch_reseed(const std::vector<std::vector<double>>& sample_pool,
                               Rng& rng) {
    std::size_t reseeded = 0;
    for (std::size_t j = 0; j < usage_.size(); ++j) {
      if (usage_[j] == 0)
        ++dead_streak_[j];
      else
        dead_streak_[j] = 0;
    }
    for (std::size_t j = 0; j < usage_.size(); ++j) {
      if (dead_streak_[j] < hp_.dead_epochs || sample_pool.empty()) continue;
      const auto& z = sample_pool[rng.below(sample_pool.size())];
      for (std::size_t c = 0; c < codebook_->value.cols(); ++c)
        codebook_->value(j, c) = z[c];
      dead_streak_[j] = 0;
      ++reseeded;
    }
    std::fill(usage_.begin(), usage_.end(), 0);
    return reseeded;
  }

  std::size_t used_entries_this_epoch() const {
    std::size_t n = 0;
    for (auto u : usage_) n += u > 0 ? 1 : 0;
    return n;
  }

 private:
  PatchSpec spec_;
  VqHp hp_;
  ParamStore store_;
  Linear enc1_, enc2_, dec1_, dec2_;
  Param* codebook_ = nullptr;
  std::vector<std::uint64_t> usage_;
  std::vector<std::size_t> dead_streak_;
};

struct TrainedTokenizer {
  VqVae model;
  std::vector<VqEpochStats> history;
  double initial_val_l1 = 0.0;
};

namespace detail {
inline Matrix stack_patches(const std::vector<Volume3D>& patches,
                            const std::vector<std::size_t>& idx) {
  Matrix X(idx.size(), patches.empty() ? 0 : patches[0].size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& d = patches[idx[r]].data;
    for (std::size_t c = 0; c < d.size(); ++c) X(r, c) = d[c];
  }
  return X;
}

// Deterministic permuted copy of validation patches: cycles the 5
// non-identity axis permutations.
inline std::vector<Volume3D> permuted_copies(const std::vector<Volume3D>& patches) {
  static const std::array<AxisPerm, 5> kPerms{AxisPerm{0, 2, 1}, AxisPerm{1, 0, 2},
                                              AxisPerm{1, 2, 0}, AxisPerm{2, 0, 1},
                                              AxisPerm{2, 1, 0}};
  std::vector<Volume3D> out;
  out.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i)
    out.push_back(permute_patch(patches[i], kPerms[i % kPerms.size()]));
  return out;
}
}  // namespace detail

inline TrainedTokenizer train_tokenizer(const std::vector<Volume3D>& all_patches,
                                        const PatchSpec& spec, const VqHp& hp) {
  if (all_patches.empty()) throw std::invalid_argument("train_tokenizer: no patches");
  for (const auto& p : all_patches)
    if (p.size() != spec.voxels())
      throw std::invalid_argument("train_tokenizer: patch size mismatch");

  Rng rng(hp.seed ^ 0x70CDULL);
  std::vector<std::size_t> order = rng.permutation(all_patches.size());
  const std::size_t n_val =
      std::max<std::size_t>(1, (std::size_t)((double)all_patches.size() * hp.val_fraction));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + (std::ptrdiff_t)n_val);
  std::vector<std::size_t> train_idx(order.begin() + (std::ptrdiff_t)n_val, order.end());
  if (train_idx.empty()) throw std::invalid_argument("train_tokenizer: empty train split");

  std::vector<Volume3D> val_patches;
  for (std::size_t i : val_idx) val_patches.push_back(all_patches[i]);
  const std::vector<Volume3D> val_permuted = detail::permuted_copies(val_patches);
  const Matrix Xval = detail::stack_patches(val_patches,
                                            [&] {
                                              std::vector<std::size_t> r(val_patches.size());
                                              for (std::size_t i = 0; i < r.size(); ++i)
                                                r[i] = i;
                                              return r;
                                            }());
  const Matrix Xval_perm = detail::stack_patches(val_permuted, [&] {
    std::vector<std::size_t> r(val_permuted.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
    return r;
  }());

  TrainedTokenizer out{VqVae(spec, hp), {}, 0.0};
  AdamW::Config oc;
  oc.lr = hp.lr;
  oc.weight_decay = 0.0;
  AdamW opt(oc);
  out.initial_val_l1 = out.model.eval_l1(Xval);

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double l1_sum = 0.0;
    std::size_t batches = 0;
    std::vector<std::vector<double>> reseed_pool;
    for (std::size_t start = 0; start < train_idx.size(); start += hp.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + hp.batch_size);
      std::vector<Volume3D> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(all_patches[train_idx[i]]);
      if (hp.permutation_augment) random_axis_permutation(batch, rng);
      std::vector<std::size_t> all(batch.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const Matrix X = detail::stack_patches(batch, all);
      auto [total, l1] = out.model.train_step(X, opt);
      l1_sum += l1;
      ++batches;
      if (reseed_pool.size() < 64) {
        Matrix z = out.model.encode_eval(X);
        reseed_pool.push_back(z.row_vec(rng.below(z.rows())));
      }
    }
    VqEpochStats st;
    st.epoch = epoch;
    st.train_l1 = l1_sum / (double)std::max<std::size_t>(1, batches);
    st.val_l1 = out.model.eval_l1(Xval);
    st.val_l1_permuted = out.model.eval_l1(Xval_perm);
    st.codebook_used = out.model.used_entries_this_epoch();
    st.reseeded = out.model.end_epoch_reseed(reseed_pool, rng);
    out.history.push_back(st);
  }
  return out;
}

// Every patch of every sequence in the cohort, flattened for training.
inline std::vector<Volume3D> collect_patches(const std::vector<VolumetricStudy>& cohort,
                                             const PatchSpec& spec) {
  std::vector<Volume3D> out;
  for (const auto& st : cohort)
    for (const auto& sv : st.sequences)
      for (auto& p : patch_volume(sv.voxels, spec)) out.push_back(std::move(p.sub));
  return out;
}

}  // namespace voxalign
