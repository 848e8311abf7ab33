#pragma once

// Frozen-encoder transfer heads. Every head trains a 3-layer MLP (hidden
// widths 2x then 1x the input dim, GELU, dropout) over precomputed study
// embeddings; the encoder itself is never touched, which keeps its checkpoint
// hash bit-identical across head training.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/core/nn.hpp"
#include "voxalign/core/optim.hpp"
#include "voxalign/core/rng.hpp"
#include "voxalign/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxalign {

struct HeadTrainHp {
  double lr = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double val_fraction = 0.2;
  double dropout = 0.1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 7;
};

struct HeadSplit {
  std::vector<std::size_t> train, val;
};

namespace detail {

inline HeadSplit head_split(std::size_t n, double val_fraction, Rng& rng) {
  if (n < 2) throw std::invalid_argument("head training needs at least 2 studies");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::size_t n_val = (std::size_t)std::llround(val_fraction * (double)n);
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  HeadSplit s;
  s.val.assign(idx.begin(), idx.begin() + (std::ptrdiff_t)n_val);
  s.train.assign(idx.begin() + (std::ptrdiff_t)n_val, idx.end());
  return s;
}

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) throw std::out_of_range("gather_rows: index");
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(rows[r], c);
  }
  return out;
}

inline std::map<std::string, Matrix> snapshot_params(const ParamStore& store) {
  std::map<std::string, Matrix> snap;
  for (const auto& [name, p] : store) snap.emplace(name, p.value);
  return snap;
}

inline void restore_params(ParamStore& store, const std::map<std::string, Matrix>& snap) {
  for (auto& [name, p] : store) p.value = snap.at(name);
}

inline std::vector<std::size_t> mlp_dims(std::size_t in, std::size_t out) {
  return {in, 2 * in, in, out};
}

struct FitOutcome {
  double best_val_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<double> epoch_train_loss;
};

// Shared minibatch loop: seeded shuffling, AdamW, best-validation-epoch
// checkpointing. `batch_loss` sees the training-set row ids of the batch so
// label slices line up with the gathered embedding rows. `val_metric` is
// higher-is-better (negate MAE-style metrics).
inline FitOutcome fit_head(ParamStore& store, const HeadTrainHp& hp,
                           std::vector<std::size_t> train_rows, Rng& rng,
                           const std::function<Var(TapeBinding&, Tape&,
                                                   const std::vector<std::size_t>&)>& batch_loss,
                           const std::function<double()>& val_metric) {
  if (train_rows.empty()) throw std::invalid_argument("fit_head: empty training split");
  AdamW::Config oc;
  oc.lr = hp.lr;
  oc.weight_decay = hp.weight_decay;
  AdamW opt(oc);

  FitOutcome out;
  auto best = snapshot_params(store);
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(train_rows);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b0 = 0; b0 < train_rows.size(); b0 += hp.batch_size) {
      const std::size_t b1 = std::min(b0 + hp.batch_size, train_rows.size());
      std::vector<std::size_t> batch(train_rows.begin() + (std::ptrdiff_t)b0,
                                     train_rows.begin() + (std::ptrdiff_t)b1);
      Tape tape;
      TapeBinding B(tape);
      store.zero_grad();
      Var loss = batch_loss(B, tape, batch);
      if (!std::isfinite(loss.val()(0, 0)))
        throw std::runtime_error("fit_head: non-finite loss");
      tape.backward(loss);
      B.harvest();
      AdamW::clip_grad_norm(store, hp.grad_clip);
      opt.step(store);
      epoch_loss += loss.val()(0, 0);
      ++n_batches;
    }
    out.epoch_train_loss.push_back(epoch_loss / (double)n_batches);

    const double metric = val_metric();
    if (metric > out.best_val_metric) {
      out.best_val_metric = metric;
      out.best_epoch = epoch;
      best = snapshot_params(store);
    }
  }
  restore_params(store, best);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Multi-label sigmoid head (diagnosis, referral)

class DiagnosisHead {
 public:
  DiagnosisHead(std::size_t in_dim, std::size_t n_classes, double dropout,
                std::uint64_t seed)
      : store_(std::make_unique<ParamStore>()),
        in_dim_(in_dim),
        n_classes_(n_classes),
        excluded_(n_classes, false),
        pos_weight_(n_classes, std::numeric_limits<double>::quiet_NaN()) {
    if (in_dim_ == 0 || n_classes_ == 0)
      throw std::invalid_argument("DiagnosisHead: zero dimension");
    Rng rng(seed);
    net_ = Mlp(*store_, "head", detail::mlp_dims(in_dim_, n_classes_), rng, dropout);
  }

  Matrix logits(const Matrix& x) const {
    if (x.cols() != in_dim_) throw std::invalid_argument("DiagnosisHead: input dim");
    Tape tape;
    TapeBinding B(tape);
    return net_.forward(B, tape.constant(x)).val();
  }

  // Sigmoid probabilities; columns excluded at training time are pinned to
  // the uninformative 0.5 rather than exposing untrained logits.
  Matrix predict(const Matrix& x) const {
    Matrix z = logits(x);
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c)
        z(r, c) = excluded_[c] ? 0.5 : 1.0 / (1.0 + std::exp(-z(r, c)));
    return z;
  }

  // Drop one output column. The remaining classes' weights are byte-for-byte
  // the trained ones: the output layer factorizes per class.
  DiagnosisHead without_class(std::size_t drop) const {
    if (drop >= n_classes_) throw std::out_of_range("without_class: class index");
    if (n_classes_ < 2) throw std::invalid_argument("without_class: last class");
    DiagnosisHead out(in_dim_, n_classes_ - 1, 0.0, /*seed=*/0);
    for (auto& [name, p] : *out.store_) {
      const Param& src = store_->at(name);
      if (name == "head.l2.w" || name == "head.l2.b") {
        std::size_t dst_c = 0;
        for (std::size_t c = 0; c < n_classes_; ++c) {
          if (c == drop) continue;
          for (std::size_t r = 0; r < p.value.rows(); ++r) p.value(r, dst_c) = src.value(r, c);
          ++dst_c;
        }
      } else {
        p.value = src.value;
      }
    }
    std::size_t dst = 0;
    for (std::size_t c = 0; c < n_classes_; ++c) {
      if (c == drop) continue;
      out.excluded_[dst] = excluded_[c];
      out.pos_weight_[dst] = pos_weight_[c];
      ++dst;
    }
    return out;
  }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t n_classes() const { return n_classes_; }
  const std::vector<bool>& excluded() const { return excluded_; }
  const std::vector<double>& pos_weight() const { return pos_weight_; }
  ParamStore& store() { return *store_; }
  const ParamStore& store() const { return *store_; }
  const Mlp& net() const { return net_; }

 private:
  friend struct MultiLabelTrainer;
  std::unique_ptr<ParamStore> store_;
  Mlp net_;
  std::size_t in_dim_ = 0, n_classes_ = 0;
  std::vector<bool> excluded_;
  std::vector<double> pos_weight_;
};

using ReferralHead = DiagnosisHead;

struct MultiLabelReport {
  HeadSplit split;
  std::vector<double> pos_weight;         // NaN for excluded classes
  std::vector<bool> excluded;
  std::vector<std::string> warnings;
  std::vector<double> per_class_val_auroc;  // NaN where val is single-outcome
  double best_val_metric = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> epoch_train_loss;
};

struct TrainedMultiLabel {
  DiagnosisHead head;
  MultiLabelReport report;
};

struct MultiLabelTrainer {
  // Positive-weighted BCE over the active classes: the coefficient matrices
  // zero out excluded columns, so an excluded class contributes nothing to
  // any gradient while the loss normalization stays fixed at 1/(N*L).
  static TrainedMultiLabel run(const Matrix& x, const std::vector<LabelVector>& labels,
                               const HeadTrainHp& hp, const char* what) {
    if (labels.size() != x.rows())
      throw std::invalid_argument(std::string(what) + ": one label row per study required");
    if (labels.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
    const std::size_t L = labels[0].size();
    for (const auto& row : labels) {
      if (row.size() != L) throw std::invalid_argument(std::string(what) + ": ragged labels");
      for (int v : row)
        if (v != 0 && v != 1)
          throw std::invalid_argument(std::string(what) + ": labels must be 0/1");
    }
    if (L == 0) throw std::invalid_argument(std::string(what) + ": zero classes");

    Rng rng(hp.seed);
    MultiLabelReport report;
    report.split = detail::head_split(x.rows(), hp.val_fraction, rng);

    // p_i from the training split only.
    report.pos_weight.assign(L, std::numeric_limits<double>::quiet_NaN());
    report.excluded.assign(L, false);
    for (std::size_t c = 0; c < L; ++c) {
      std::size_t pos = 0;
      for (std::size_t i : report.split.train) pos += (std::size_t)labels[i][c];
      if (pos == 0) {
        report.excluded[c] = true;
        report.warnings.push_back(std::string(what) + ": class " + std::to_string(c) +
                                  " has no positive training example; excluded from the loss");
      } else {
        report.pos_weight[c] =
            (double)(report.split.train.size() - pos) / (double)pos;
      }
    }
    if (std::all_of(report.excluded.begin(), report.excluded.end(),
                    [](bool e) { return e; }))
      throw std::invalid_argument(std::string(what) +
                                  ": every class lacks positive training examples");

    DiagnosisHead head(x.cols(), L, hp.dropout, rng.next_u64());
    head.excluded_ = report.excluded;
    head.pos_weight_ = report.pos_weight;

    Rng drop_rng(rng.child(0xD1CE));
    auto batch_loss = [&](TapeBinding& B, Tape& tape,
                          const std::vector<std::size_t>& batch) {
      Var z = head.net_.forward(B, tape.constant(detail::gather_rows(x, batch)),
                                &drop_rng, true);
      Matrix a(batch.size(), L, 0.0), b(batch.size(), L, 0.0);
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t c = 0; c < L; ++c) {
          if (report.excluded[c]) continue;
          if (labels[batch[r]][c] == 1)
            a(r, c) = report.pos_weight[c];
          else
            b(r, c) = 1.0;
        }
      return ag::bce_logits(z, a, b);
    };

    auto val_metric = [&]() {
      const Matrix z = head.logits(detail::gather_rows(x, report.split.val));
      double sum = 0.0;
      std::size_t n_defined = 0;
      for (std::size_t c = 0; c < L; ++c) {
        if (report.excluded[c]) continue;
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t r = 0; r < report.split.val.size(); ++r) {
          s.push_back(z(r, c));
          y.push_back(labels[report.split.val[r]][c]);
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || (std::size_t)pos == y.size()) continue;
        sum += auroc(s, y);
        ++n_defined;
      }
      if (n_defined > 0) return sum / (double)n_defined;
      // Degenerate validation split: fall back to negative validation loss.
      Matrix a(report.split.val.size(), L, 0.0), b(report.split.val.size(), L, 0.0);
      for (std::size_t r = 0; r < report.split.val.size(); ++r)
        for (std::size_t c = 0; c < L; ++c) {
          if (report.excluded[c]) continue;
          if (labels[report.split.val[r]][c] == 1)
            a(r, c) = report.pos_weight[c];
          else
            b(r, c) = 1.0;
        }
      Tape tape;
      return -ag::bce_logits(tape.constant(z), a, b).val()(0, 0);
    };

    const auto fit = detail::fit_head(head.store(), hp, report.split.train, rng,
                                      batch_loss, val_metric);
    report.best_val_metric = fit.best_val_metric;
    report.best_epoch = fit.best_epoch;
    report.epoch_train_loss = fit.epoch_train_loss;

    // Per-class validation AUROC at the restored best checkpoint.
    report.per_class_val_auroc.assign(L, std::numeric_limits<double>::quiet_NaN());
    const Matrix z = head.logits(detail::gather_rows(x, report.split.val));
    for (std::size_t c = 0; c < L; ++c) {
      if (report.excluded[c]) continue;
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t r = 0; r < report.split.val.size(); ++r) {
        s.push_back(z(r, c));
        y.push_back(labels[report.split.val[r]][c]);
      }
      const auto pos = std::count(y.begin(), y.end(), 1);
      if (pos > 0 && (std::size_t)pos < y.size()) report.per_class_val_auroc[c] = auroc(s, y);
    }
    return {std::move(head), std::move(report)};
  }
};

inline TrainedMultiLabel train_diagnosis_head(const Matrix& embeddings,
                                              const std::vector<LabelVector>& labels,
                                              const HeadTrainHp& hp = {}) {
  return MultiLabelTrainer::run(embeddings, labels, hp, "diagnosis");
}

inline TrainedMultiLabel train_referral_head(const Matrix& embeddings,
                                             const std::vector<LabelVector>& referrals,
                                             const HeadTrainHp& hp = {}) {
  return MultiLabelTrainer::run(embeddings, referrals, hp, "referral");
}

// ---------------------------------------------------------------------------
// Acuity head (3 ordered tiers)

enum class AcuityLoss {
  kCategorical,       // softmax cross entropy
  kBinaryOrdinal,     // cumulative logits P(y>=1), P(y>=2)
  kExpectedOrdinalL2  // squared error on the softmax-expected ordinal
};

class AcuityHead {
 public:
  static constexpr std::size_t kTiers = 3;

  AcuityHead(std::size_t in_dim, AcuityLoss mode, double dropout, std::uint64_t seed)
      : store_(std::make_unique<ParamStore>()), in_dim_(in_dim), mode_(mode) {
    if (in_dim_ == 0) throw std::invalid_argument("AcuityHead: zero input dim");
    Rng rng(seed);
    const std::size_t out = mode_ == AcuityLoss::kBinaryOrdinal ? kTiers - 1 : kTiers;
    net_ = Mlp(*store_, "head", detail::mlp_dims(in_dim_, out), rng, dropout);
  }

  Matrix logits(const Matrix& x) const {
    if (x.cols() != in_dim_) throw std::invalid_argument("AcuityHead: input dim");
    Tape tape;
    TapeBinding B(tape);
    return net_.forward(B, tape.constant(x)).val();
  }

  // Tier probabilities, rows summing to 1. Cumulative logits can cross
  // (P(y>=2) > P(y>=1) on an untrained net); differences clamp at zero and
  // the row renormalizes.
  Matrix class_probs(const Matrix& x) const {
    const Matrix z = logits(x);
    Matrix p(z.rows(), kTiers, 0.0);
    if (mode_ == AcuityLoss::kBinaryOrdinal) {
      for (std::size_t r = 0; r < z.rows(); ++r) {
        const double q1 = sigmoid(z(r, 0)), q2 = sigmoid(z(r, 1));
        double v0 = std::max(0.0, 1.0 - q1), v1 = std::max(0.0, q1 - q2), v2 = q2;
        const double s = v0 + v1 + v2;
        if (s <= 0.0) {
          p(r, 0) = p(r, 1) = p(r, 2) = 1.0 / 3.0;
        } else {
          p(r, 0) = v0 / s;
          p(r, 1) = v1 / s;
          p(r, 2) = v2 / s;
        }
      }
      return p;
    }
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const double mx = std::max({z(r, 0), z(r, 1), z(r, 2)});
      double denom = 0.0;
      for (std::size_t c = 0; c < kTiers; ++c) denom += std::exp(z(r, c) - mx);
      for (std::size_t c = 0; c < kTiers; ++c) p(r, c) = std::exp(z(r, c) - mx) / denom;
    }
    return p;
  }

  // Normalized priority: expected ordinal / (tiers - 1), in [0, 1].
  std::vector<double> priority(const Matrix& x) const {
    const Matrix z = logits(x);
    std::vector<double> out(z.rows());
    if (mode_ == AcuityLoss::kBinaryOrdinal) {
      for (std::size_t r = 0; r < z.rows(); ++r)
        out[r] = (sigmoid(z(r, 0)) + sigmoid(z(r, 1))) / (double)(kTiers - 1);
      return out;
    }
    const Matrix p = class_probs(x);
    for (std::size_t r = 0; r < p.rows(); ++r)
      out[r] = (p(r, 1) + 2.0 * p(r, 2)) / (double)(kTiers - 1);
    return out;
  }

  std::vector<std::size_t> predict_class(const Matrix& x) const {
    std::vector<std::size_t> out;
    const Matrix z = logits(x);
    out.reserve(z.rows());
    if (mode_ == AcuityLoss::kBinaryOrdinal) {
      for (std::size_t r = 0; r < z.rows(); ++r)
        out.push_back((std::size_t)(z(r, 0) > 0.0) + (std::size_t)(z(r, 1) > 0.0));
      return out;
    }
    for (std::size_t r = 0; r < z.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < kTiers; ++c)
        if (z(r, c) > z(r, best)) best = c;
      out.push_back(best);
    }
    return out;
  }

  std::size_t in_dim() const { return in_dim_; }
  AcuityLoss mode() const { return mode_; }
  ParamStore& store() { return *store_; }
  const ParamStore& store() const { return *store_; }

 private:
  friend struct AcuityTrainer;
  static double sigmoid(double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  std::unique_ptr<ParamStore> store_;
  Mlp net_;
  std::size_t in_dim_ = 0;
  AcuityLoss mode_ = AcuityLoss::kCategorical;
};

struct AcuityReport {
  HeadSplit split;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> epoch_train_loss;
};

struct TrainedAcuity {
  AcuityHead head;
  AcuityReport report;
};

struct AcuityTrainer {
  static TrainedAcuity run(const Matrix& x, const std::vector<std::size_t>& tiers,
                           const HeadTrainHp& hp, AcuityLoss mode) {
    if (tiers.size() != x.rows())
      throw std::invalid_argument("acuity: one tier per study required");
    for (std::size_t t : tiers)
      if (t >= AcuityHead::kTiers) throw std::invalid_argument("acuity: tier out of range");

    Rng rng(hp.seed);
    AcuityReport report;
    report.split = detail::head_split(x.rows(), hp.val_fraction, rng);

    AcuityHead head(x.cols(), mode, hp.dropout, rng.next_u64());
    Rng drop_rng(rng.child(0xD1CE));

    auto batch_loss = [&](TapeBinding& B, Tape& tape,
                          const std::vector<std::size_t>& batch) {
      Var z = head.net_.forward(B, tape.constant(detail::gather_rows(x, batch)),
                                &drop_rng, true);
      if (mode == AcuityLoss::kBinaryOrdinal) {
        Matrix a(batch.size(), 2, 0.0), b(batch.size(), 2, 0.0);
        for (std::size_t r = 0; r < batch.size(); ++r)
          for (std::size_t c = 0; c < 2; ++c) {
            if (tiers[batch[r]] >= c + 1)
              a(r, c) = 1.0;
            else
              b(r, c) = 1.0;
          }
        return ag::bce_logits(z, a, b);
      }
      if (mode == AcuityLoss::kExpectedOrdinalL2) {
        Var p = ag::softmax_rows(z);
        Matrix ord(AcuityHead::kTiers, 1);
        ord(0, 0) = 0.0;
        ord(1, 0) = 1.0;
        ord(2, 0) = 2.0;
        Var expected = ag::matmul(p, tape.constant(ord));
        Matrix target(batch.size(), 1);
        for (std::size_t r = 0; r < batch.size(); ++r)
          target(r, 0) = (double)tiers[batch[r]];
        return ag::mean_all(ag::square(ag::sub(expected, tape.constant(target))));
      }
      std::vector<std::size_t> targets;
      targets.reserve(batch.size());
      for (std::size_t i : batch) targets.push_back(tiers[i]);
      return ag::cross_entropy_rows(z, targets);
    };

    auto val_metric = [&]() {
      const auto pred = head.predict_class(detail::gather_rows(x, report.split.val));
      std::size_t correct = 0;
      for (std::size_t r = 0; r < report.split.val.size(); ++r)
        correct += (std::size_t)(pred[r] == tiers[report.split.val[r]]);
      return (double)correct / (double)report.split.val.size();
    };

    const auto fit = detail::fit_head(head.store(), hp, report.split.train, rng,
                                      batch_loss, val_metric);
    report.best_val_accuracy = fit.best_val_metric;
    report.best_epoch = fit.best_epoch;
    report.epoch_train_loss = fit.epoch_train_loss;
    return {std::move(head), std::move(report)};
  }
};

inline TrainedAcuity train_acuity_head(const Matrix& embeddings,
                                       const std::vector<std::size_t>& tiers,
                                       const HeadTrainHp& hp = {},
                                       AcuityLoss mode = AcuityLoss::kCategorical) {
  return AcuityTrainer::run(embeddings, tiers, hp, mode);
}

// ---------------------------------------------------------------------------
// Age regression head

class AgeHead {
 public:
  AgeHead(std::size_t in_dim, double dropout, std::uint64_t seed)
      : store_(std::make_unique<ParamStore>()), in_dim_(in_dim) {
    if (in_dim_ == 0) throw std::invalid_argument("AgeHead: zero input dim");
    Rng rng(seed);
    net_ = Mlp(*store_, "head", detail::mlp_dims(in_dim_, 1), rng, dropout);
    Matrix st(1, 2, 0.0);
    st(0, 1) = 1.0;  // (mean, sd) of the training targets
    store_->add("head.tstats", st, false);
  }

  // The net regresses standardized targets; predictions map back through the
  // train-split statistics kept in the store (so checkpoints carry them).
  std::vector<double> predict(const Matrix& x) const {
    if (x.cols() != in_dim_) throw std::invalid_argument("AgeHead: input dim");
    Tape tape;
    TapeBinding B(tape);
    const Matrix y = net_.forward(B, tape.constant(x)).val();
    const Matrix& st = store_->at("head.tstats").value;
    std::vector<double> out(y.rows());
    for (std::size_t r = 0; r < y.rows(); ++r) out[r] = y(r, 0) * st(0, 1) + st(0, 0);
    return out;
  }

  std::size_t in_dim() const { return in_dim_; }
  ParamStore& store() { return *store_; }
  const ParamStore& store() const { return *store_; }

 private:
  friend struct AgeTrainer;
  std::unique_ptr<ParamStore> store_;
  Mlp net_;
  std::size_t in_dim_ = 0;
};

struct AgeReport {
  HeadSplit split;
  double val_mae = 0.0;       // at the restored best checkpoint
  double population_sd = 0.0;  // baseline: s.d. of all provided ages
  std::size_t best_epoch = 0;
  std::vector<double> epoch_train_loss;
};

struct TrainedAge {
  AgeHead head;
  AgeReport report;
};

struct AgeTrainer {
  static TrainedAge run(const Matrix& x, const std::vector<double>& ages,
                        const HeadTrainHp& hp) {
    if (ages.size() != x.rows())
      throw std::invalid_argument("age: one target per study required");
    for (double a : ages)
      if (!std::isfinite(a)) throw std::invalid_argument("age: non-finite target");

    Rng rng(hp.seed);
    AgeReport report;
    report.split = detail::head_split(x.rows(), hp.val_fraction, rng);
    {
      double mean = 0.0;
      for (double a : ages) mean += a;
      mean /= (double)ages.size();
      double ss = 0.0;
      for (double a : ages) ss += (a - mean) * (a - mean);
      report.population_sd = std::sqrt(ss / (double)ages.size());
    }

    AgeHead head(x.cols(), hp.dropout, rng.next_u64());
    Rng drop_rng(rng.child(0xD1CE));

    // Standardize targets by train-split statistics; a constant-age split
    // degenerates to sd 1 so the net only has to learn the mean.
    {
      double mean = 0.0;
      for (std::size_t i : report.split.train) mean += ages[i];
      mean /= (double)report.split.train.size();
      double ss = 0.0;
      for (std::size_t i : report.split.train)
        ss += (ages[i] - mean) * (ages[i] - mean);
      double sd = std::sqrt(ss / (double)report.split.train.size());
      if (sd < 1e-8) sd = 1.0;
      Matrix& st = head.store().at("head.tstats").value;
      st(0, 0) = mean;
      st(0, 1) = sd;
    }

    auto batch_loss = [&](TapeBinding& B, Tape& tape,
                          const std::vector<std::size_t>& batch) {
      Var y = head.net_.forward(B, tape.constant(detail::gather_rows(x, batch)),
                                &drop_rng, true);
      const Matrix& st = head.store().at("head.tstats").value;
      Matrix target(batch.size(), 1);
      for (std::size_t r = 0; r < batch.size(); ++r)
        target(r, 0) = (ages[batch[r]] - st(0, 0)) / st(0, 1);
      return ag::mean_all(ag::square(ag::sub(y, tape.constant(target))));
    };

    auto val_mae = [&]() {
      const auto pred = head.predict(detail::gather_rows(x, report.split.val));
      double mae = 0.0;
      for (std::size_t r = 0; r < report.split.val.size(); ++r)
        mae += std::abs(pred[r] - ages[report.split.val[r]]);
      return mae / (double)report.split.val.size();
    };

    const auto fit = detail::fit_head(head.store(), hp, report.split.train, rng,
                                      batch_loss, [&]() { return -val_mae(); });
    report.val_mae = -fit.best_val_metric;
    report.best_epoch = fit.best_epoch;
    report.epoch_train_loss = fit.epoch_train_loss;
    return {std::move(head), std::move(report)};
  }
};

inline TrainedAge train_age_head(const Matrix& embeddings, const std::vector<double>& ages,
                                 const HeadTrainHp& hp = {}) {
  return AgeTrainer::run(embeddings, ages, hp);
}

// ---------------------------------------------------------------------------
// Label extraction from cohorts

inline std::vector<LabelVector> diagnosis_labels(const std::vector<VolumetricStudy>& studies) {
  std::vector<LabelVector> out;
  out.reserve(studies.size());
  for (const auto& s : studies) out.push_back(s.labels);
  return out;
}

inline std::vector<std::size_t> acuity_targets(const std::vector<VolumetricStudy>& studies,
                                               const MappingTable& table) {
  std::vector<std::size_t> out;
  out.reserve(studies.size());
  for (const auto& s : studies)
    out.push_back((std::size_t)acuity_referral_map(s.labels, table).first);
  return out;
}

inline std::vector<LabelVector> referral_labels(const std::vector<VolumetricStudy>& studies,
                                                const MappingTable& table) {
  std::vector<LabelVector> out;
  out.reserve(studies.size());
  for (const auto& s : studies) out.push_back(acuity_referral_map(s.labels, table).second);
  return out;
}

inline std::vector<double> ages(const std::vector<VolumetricStudy>& studies) {
  std::vector<double> out;
  out.reserve(studies.size());
  for (const auto& s : studies) out.push_back(s.attributes.age_years);
  return out;
}

}  // namespace voxalign
