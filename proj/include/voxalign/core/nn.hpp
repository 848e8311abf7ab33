#pragma once

// Module layer over the autograd tape: named parameters, bindings that give
// each parameter exactly one leaf node per tape, and the standard blocks
// (linear, layer norm, multi-head self-attention, pre-norm transformer).

#include "voxalign/core/autograd.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace voxalign {

struct Param {
  Matrix value;
  Matrix grad;
  bool decay = true;  // weight decay applies (off for biases, norms, temperatures)
};

class ParamStore {
 public:
  Param& add(const std::string& name, Matrix init, bool decay = true) {
    auto [it, fresh] = params_.try_emplace(name);
    if (!fresh) throw std::logic_error("duplicate parameter: " + name);
    it->second.value = std::move(init);
    it->second.grad = Matrix(it->second.value.rows(), it->second.value.cols(), 0.0);
    it->second.decay = decay;
    return it->second;
  }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.fill(0.0);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  // Ordered by name; iteration order is part of the artifact contract
  // (optimizer state and checkpoints rely on it).
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Param> params_;
};

// Binds parameters to one tape: repeated binds of the same Param return the
// same leaf Var, and harvest() moves tape gradients back into Param::grad.
class TapeBinding {
 public:
  explicit TapeBinding(Tape& tape) : tape_(&tape) {}

  Var operator()(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var v = tape_->var(p.value, true);
    bound_.emplace(&p, v);
    return v;
  }

  Var bind_frozen(const Param& p) { return tape_->constant(p.value); }

  void harvest() {
    for (auto& [p, v] : bound_) {
      const Matrix& g = tape_->grad(v);
      p->grad.map() += g.map();
    }
  }

  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  std::unordered_map<Param*, Var> bound_;
};

inline Matrix normal_init(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, stddev);
  return m;
}

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
         Rng& rng, bool bias = true)
      : w_(&store.add(prefix + ".w", normal_init(rng, in, out, std::sqrt(1.0 / (double)in)))),
        b_(bias ? &store.add(prefix + ".b", Matrix(1, out, 0.0), false) : nullptr) {}

  Var forward(TapeBinding& B, Var x) const {
    Var y = ag::matmul(x, B(*w_));
    if (b_) y = ag::add_rowvec(y, B(*b_));
    return y;
  }

  std::size_t in_dim() const { return w_->value.rows(); }
  std::size_t out_dim() const { return w_->value.cols(); }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& prefix, std::size_t dim)
      : gamma_(&store.add(prefix + ".gamma", Matrix(1, dim, 1.0), false)),
        beta_(&store.add(prefix + ".beta", Matrix(1, dim, 0.0), false)) {}

  Var forward(TapeBinding& B, Var x) const {
    return ag::layer_norm_rows(x, B(*gamma_), B(*beta_));
  }

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
};

// Multi-head self-attention over a single sequence (rows = positions). The
// optional additive mask is in logit space (0 keeps, large negative blocks).
// head_dim 0 means width / heads; a nonzero value decouples the attention
// inner width (heads * head_dim) from the residual stream width.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamStore& store, const std::string& prefix, std::size_t width,
                std::size_t heads, Rng& rng, std::size_t head_dim = 0)
      : heads_(heads), head_dim_(head_dim) {
    if (head_dim_ == 0) {
      if (width % heads != 0)
        throw std::invalid_argument("attention width % heads != 0");
      head_dim_ = width / heads;
    }
    const std::size_t inner = heads_ * head_dim_;
    q_ = Linear(store, prefix + ".q", width, inner, rng);
    k_ = Linear(store, prefix + ".k", width, inner, rng);
    v_ = Linear(store, prefix + ".v", width, inner, rng);
    o_ = Linear(store, prefix + ".o", inner, width, rng);
  }

  Var forward(TapeBinding& B, Var x, const Matrix* mask = nullptr) const {
    Var q = q_.forward(B, x);
    Var k = k_.forward(B, x);
    Var v = v_.forward(B, x);
    const double inv_sqrt_d = 1.0 / std::sqrt((double)head_dim_);
    std::vector<Var> outs;
    outs.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t c0 = h * head_dim_, c1 = c0 + head_dim_;
      Var qh = ag::slice_cols(q, c0, c1);
      Var kh = ag::slice_cols(k, c0, c1);
      Var vh = ag::slice_cols(v, c0, c1);
      Var scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_d);
      Var att = ag::softmax_rows(scores, mask);
      outs.push_back(ag::matmul(att, vh));
    }
    return o_.forward(B, ag::concat_cols(outs));
  }

 private:
  std::size_t heads_ = 0, head_dim_ = 0;
  Linear q_, k_, v_, o_;
};

// Pre-norm transformer block, MLP expansion 4x, GELU.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& prefix, std::size_t width,
                   std::size_t heads, Rng& rng, std::size_t head_dim = 0)
      : ln1_(store, prefix + ".ln1", width),
        attn_(store, prefix + ".attn", width, heads, rng, head_dim),
        ln2_(store, prefix + ".ln2", width),
        fc1_(store, prefix + ".fc1", width, 4 * width, rng),
        fc2_(store, prefix + ".fc2", 4 * width, width, rng) {}

  Var forward(TapeBinding& B, Var x, const Matrix* mask = nullptr) const {
    x = ag::add(x, attn_.forward(B, ln1_.forward(B, x), mask));
    Var h = ag::gelu(fc1_.forward(B, ln2_.forward(B, x)));
    return ag::add(x, fc2_.forward(B, h));
  }

 private:
  LayerNorm ln1_;
  SelfAttention attn_;
  LayerNorm ln2_;
  Linear fc1_, fc2_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore& store, const std::string& prefix, std::size_t vocab,
            std::size_t dim, Rng& rng)
      : w_(&store.add(prefix + ".w", normal_init(rng, vocab, dim, 0.02))) {}

  Var forward(TapeBinding& B, const std::vector<std::size_t>& ids) const {
    return ag::gather_rows(B(*w_), ids);
  }

  std::size_t vocab() const { return w_->value.rows(); }
  std::size_t dim() const { return w_->value.cols(); }

 private:
  Param* w_ = nullptr;
};

// Feed-forward stack: dims = {in, h1, ..., out}; GELU + dropout between
// layers, none after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& dims,
      Rng& rng, double dropout = 0.0)
      : dropout_(dropout) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs >= 2 dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.emplace_back(store, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1],
                           rng);
  }

  Var forward(TapeBinding& B, Var x, Rng* drop_rng = nullptr, bool training = false) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].forward(B, x);
      if (i + 1 < layers_.size()) {
        x = ag::gelu(x);
        if (training && dropout_ > 0.0 && drop_rng)
          x = ag::dropout(x, dropout_, *drop_rng, true);
      }
    }
    return x;
  }

  std::size_t out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<Linear> layers_;
  double dropout_ = 0.0;
};

}  // namespace voxalign
