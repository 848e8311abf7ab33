#pragma once

// Joint contrastive training: the hierarchical encoder and the report
// language model are updated together under the bidirectional CLIP loss plus
// the patient sequence discrimination term. Studies travel whole through the
// batch so the per-study structure the discrimination loss needs is intact.

#include "voxalign/core/optim.hpp"
#include "voxalign/core/serialize.hpp"
#include "voxalign/eval/retrieval.hpp"
#include "voxalign/hvit/encoder.hpp"
#include "voxalign/objectives/augment.hpp"
#include "voxalign/objectives/losses.hpp"
#include "voxalign/objectives/sampler.hpp"
#include "voxalign/textenc/lm.hpp"

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct ClipTrainHp {
  HvitConfig encoder;
  LmHp text;                 // clip_dim is overwritten with the shared dim
  std::size_t clip_dim = 32;
  std::size_t patdis_hidden = 32;
  std::size_t patdis_dim = 16;
  double lr = 3e-4;
  std::size_t warmup = 10;
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  double lambda = 0.03;
  bool use_patdis = true;
  double abnormal_upsample = 4.0;
  AugmentPolicy augment;
  double val_fraction = 0.2;
  std::size_t eval_every = 25;
  double grad_clip = 1.0;
  double tau_init = 0.07;
  double tau_p_init = 0.1;
  std::size_t seed = 1;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only
};

struct ClipMetricRecord {
  std::size_t step = 0;
  double clip = 0.0;
  double patdis = 0.0;
  double tau = 0.0;
  double tau_p = 0.0;
  double lr = 0.0;
  bool has_retrieval = false;
  double top1 = 0.0;
  double top5 = 0.0;
};

inline void to_json(nlohmann::json& j, const ClipMetricRecord& r) {
  j = nlohmann::json{{"step", r.step}, {"clip", r.clip},     {"patdis", r.patdis},
                     {"tau", r.tau},   {"tau_p", r.tau_p},   {"lr", r.lr}};
  if (r.has_retrieval) {
    j["top1"] = r.top1;
    j["top5"] = r.top5;
  }
}

inline void write_metric_log(const std::string& path,
                             const std::vector<ClipMetricRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metric log: " + path);
  for (const auto& r : log) out << nlohmann::json(r).dump() << "\n";
}

// Smallest evaluated step whose top-1 validation retrieval reaches the
// target; SIZE_MAX when the run never got there.
inline std::size_t first_step_reaching(const std::vector<ClipMetricRecord>& log,
                                       double top1_target) {
  for (const auto& r : log)
    if (r.has_retrieval && r.top1 >= top1_target) return r.step;
  return std::numeric_limits<std::size_t>::max();
}

struct ClipTrainResult {
  std::vector<ClipMetricRecord> log;
  double final_top1 = 0.0;
  double final_top5 = 0.0;
  bool aborted_nan = false;
  std::size_t abort_step = 0;
};

class ClipTrainer {
 public:
  ClipTrainer(std::vector<TrainStudy> studies, ClipTrainHp hp,
              std::optional<Vocab> vocab = std::nullopt)
      : hp_(std::move(hp)), studies_(std::move(studies)) {
    if (studies_.size() < 4)
      throw std::invalid_argument("train_clip: need at least 4 studies");
    if (hp_.batch_size < 2)
      throw std::invalid_argument("train_clip: batch size must be >= 2");
    hp_.text.clip_dim = hp_.clip_dim;
    if (!vocab) {
      std::vector<std::string> corpus;
      corpus.reserve(studies_.size());
      for (const auto& s : studies_) corpus.push_back(summary_text(s.report));
      vocab = Vocab::build(corpus);
    }

    Rng init(hp_.seed ^ 0xC11Bu);
    enc_ = HierarchicalEncoder(store_, "hvit", hp_.encoder, init);
    lm_ = ReportLm(store_, "lm", std::move(*vocab), hp_.text, init);
    proj_m_ = Linear(store_, "pm", hp_.encoder.study.output_dim, hp_.clip_dim, init);
    tau_ = &store_.add("tau", Matrix(1, 1, hp_.tau_init), /*decay=*/false);
    if (hp_.use_patdis) {
      patdis_proj_ = Mlp(store_, "pd",
                         {hp_.encoder.seq.output_dim, hp_.patdis_hidden,
                          hp_.patdis_dim},
                         init);
      tau_p_ = &store_.add("tau_p", Matrix(1, 1, hp_.tau_p_init), /*decay=*/false);
    }

    // Deterministic split; validation needs enough rows for top-5 to mean
    // anything, training needs at least one batch worth.
    Rng split(hp_.seed ^ 0x5317u);
    std::vector<std::size_t> order(studies_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    detail::shuffle_in_place(order, split);
    std::size_t val_n = (std::size_t)std::llround(hp_.val_fraction *
                                                  (double)studies_.size());
    val_n = std::max<std::size_t>(2, std::min(val_n, studies_.size() - 2));
    val_ids_.assign(order.begin(), order.begin() + (std::ptrdiff_t)val_n);
    train_ids_.assign(order.begin() + (std::ptrdiff_t)val_n, order.end());
  }

  // Warm starts from earlier stages. Both expect checkpoints produced by the
  // corresponding pretrainer (parameter subtrees "lm.*" and "esn.*").
  void restore_text_encoder(const Checkpoint& ckpt) {
    restore_subtree(store_, ckpt, "lm", "lm");
  }
  void restore_name_encoder(const Checkpoint& ckpt) {
    restore_subtree(store_, ckpt, "hvit.esn", "esn");
  }

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const HierarchicalEncoder& encoder() const { return enc_; }
  const ReportLm& text_encoder() const { return lm_; }
  const std::vector<std::size_t>& train_ids() const { return train_ids_; }
  const std::vector<std::size_t>& val_ids() const { return val_ids_; }
  const std::vector<TrainStudy>& studies() const { return studies_; }

  ClipTrainResult train() {
    std::vector<bool> abnormal;
    for (std::size_t id : train_ids_) abnormal.push_back(studies_[id].abnormal);
    const StudySampler sampler = build_sampler(abnormal, hp_.abnormal_upsample);
    Rng sample_rng(hp_.seed ^ 0xA11Cu);
    Rng aug_rng(hp_.seed ^ 0x9D2Fu);
    AdamW opt;

    ClipTrainResult result;
    snapshot();
    for (std::size_t step = 0; step < hp_.steps; ++step) {
      std::vector<TrainStudy> batch;
      batch.reserve(hp_.batch_size);
      for (std::size_t b = 0; b < hp_.batch_size; ++b)
        batch.push_back(studies_[train_ids_[sampler.next(sample_rng)]]);
      apply_augmentations(batch, hp_.augment, aug_rng);

      Tape tape;
      TapeBinding B(tape);
      std::vector<Var> study_vecs, seq_vecs;
      std::vector<std::size_t> study_of;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<Var> rs;
        std::vector<const TokenGrid*> ptrs;
        for (const auto& g : batch[i].grids) ptrs.push_back(&g);
        study_vecs.push_back(
            enc_.encode_study_var(B, ptrs, batch[i].study_name, &rs));
        for (Var r : rs) {
          seq_vecs.push_back(r);
          study_of.push_back(i);
        }
      }
      Var m = proj_m_.forward(B, ag::concat_rows(study_vecs));
      std::vector<Var> report_rows;
      for (const auto& s : batch)
        report_rows.push_back(lm_.encode_text(B, summary_text(s.report)));
      Var r = ag::concat_rows(report_rows);

      // Divergence is detected on the raw embeddings, before the losses'
      // own zero-norm guards can turn a NaN into a misleading error.
      auto abort_run = [&](std::size_t at) {
        restore_snapshot();
        result.aborted_nan = true;
        result.abort_step = at;
        if (!hp_.checkpoint_dir.empty())
          save_checkpoint(hp_.checkpoint_dir + "/last_good.ckpt", store_,
                          {{"step", at}, {"aborted", true}});
      };
      if (!all_finite(m.val()) || !all_finite(r.val())) {
        abort_run(step);
        break;
      }

      Var clip = clip_loss(m, r, B(*tau_));
      ClipMetricRecord rec;
      rec.step = step;
      rec.clip = clip.val()(0, 0);
      Var total = clip;
      if (hp_.use_patdis) {
        Var u = patdis_proj_.forward(B, ag::concat_rows(seq_vecs));
        if (!all_finite(u.val())) {
          abort_run(step);
          break;
        }
        Var pd = patient_discrimination_loss(u, study_of, B(*tau_p_));
        rec.patdis = pd.val()(0, 0);
        total = combined_loss(clip, pd, hp_.lambda);
      }
      if (!std::isfinite(total.val()(0, 0))) {
        abort_run(step);
        break;
      }
      // These parameters just produced a verified-finite loss; they are the
      // state a later divergence rolls back to.
      snapshot();

      store_.zero_grad();
      tape.backward(total);
      B.harvest();
      AdamW::clip_grad_norm(store_, hp_.grad_clip);
      const double lr = cosine_lr(step, hp_.steps, hp_.lr, hp_.warmup);
      opt.step(store_, lr);
      tau_->value(0, 0) = std::min(tau_->value(0, 0), std::log(100.0));
      if (tau_p_) tau_p_->value(0, 0) = std::max(tau_p_->value(0, 0), 0.01);

      rec.tau = tau_->value(0, 0);
      rec.tau_p = tau_p_ ? tau_p_->value(0, 0) : 0.0;
      rec.lr = lr;
      const bool last = step + 1 == hp_.steps;
      if (hp_.eval_every > 0 && (step % hp_.eval_every == 0 || last)) {
        const auto [top1, top5] = validation_retrieval();
        rec.has_retrieval = true;
        rec.top1 = top1;
        rec.top5 = top5;
        result.final_top1 = top1;
        result.final_top5 = top5;
        if (!hp_.checkpoint_dir.empty())
          save_checkpoint(hp_.checkpoint_dir + "/step-" + std::to_string(step) +
                              ".ckpt",
                          store_, {{"step", step}, {"top1", top1}, {"top5", top5}});
      }
      result.log.push_back(rec);
    }
    return result;
  }

  // Frozen-encoder embeddings for transfer heads: the raw study vector, not
  // the CLIP projection.
  Matrix encode_studies_raw(const std::vector<const TrainStudy*>& items) const {
    Matrix out(items.size(), hp_.encoder.study.output_dim);
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::vector<const TokenGrid*> ptrs;
      for (const auto& g : items[i]->grids) ptrs.push_back(&g);
      const StudyEmbedding e = enc_.encode_study(ptrs, items[i]->study_name);
      for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = e.vector(0, c);
    }
    return out;
  }

  // Projected CLIP-space embeddings for both modalities, row-aligned.
  std::pair<Matrix, Matrix> encode_clip(
      const std::vector<const TrainStudy*>& items) const {
    Tape tape;
    TapeBinding B(tape);
    std::vector<Var> ms, rs;
    for (const auto* s : items) {
      std::vector<const TokenGrid*> ptrs;
      for (const auto& g : s->grids) ptrs.push_back(&g);
      ms.push_back(enc_.encode_study_var(B, ptrs, s->study_name));
      rs.push_back(lm_.encode_text(B, summary_text(s->report)));
    }
    Var m = proj_m_.forward(B, ag::concat_rows(ms));
    return {m.val(), ag::concat_rows(rs).val()};
  }

 private:
  std::pair<double, double> validation_retrieval() const {
    std::vector<const TrainStudy*> items;
    for (std::size_t id : val_ids_) items.push_back(&studies_[id]);
    const auto [m, r] = encode_clip(items);
    const Matrix sim = cosine_similarity(m, r);
    const std::size_t k5 = std::min<std::size_t>(5, sim.rows());
    return {topk_retrieval(sim, 1), topk_retrieval(sim, k5)};
  }

  static bool all_finite(const Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!std::isfinite(m[i])) return false;
    return true;
  }

  void snapshot() {
    for (const auto& [name, p] : store_) last_good_[name] = p.value;
  }
  void restore_snapshot() {
    for (auto& [name, p] : store_) p.value = last_good_.at(name);
  }

  ClipTrainHp hp_;
  std::vector<TrainStudy> studies_;
  std::vector<std::size_t> train_ids_, val_ids_;
  ParamStore store_;
  HierarchicalEncoder enc_;
  ReportLm lm_;
  Linear proj_m_;
  Mlp patdis_proj_;
  Param* tau_ = nullptr;
  Param* tau_p_ = nullptr;
  std::map<std::string, Matrix> last_good_;
};

}  // namespace voxalign
