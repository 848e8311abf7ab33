#pragma once

#include "voxalign/core/matrix.hpp"
#include "voxalign/core/nn.hpp"

#include <cmath>
#include <map>
#include <string>

namespace voxalign {

// Decoupled weight decay Adam. Decay skips parameters flagged decay=false
// (biases, norm affines, temperatures).
class AdamW {
 public:
  struct Config {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() : cfg_() {}
  explicit AdamW(Config cfg) : cfg_(cfg) {}

  // Global L2 gradient clipping; returns the pre-clip norm.
  static double clip_grad_norm(ParamStore& store, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : store) sq += p.grad.map().squaredNorm();
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
      const double f = max_norm / norm;
      for (auto& [name, p] : store) p.grad.map() *= f;
    }
    return norm;
  }

  void step(ParamStore& store, double lr_override = -1.0) {
    ++t_;
    const double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
    for (auto& [name, p] : store) {
      State& s = state_[name];
      if (s.m.empty()) {
        s.m = Matrix(p.value.rows(), p.value.cols(), 0.0);
        s.v = Matrix(p.value.rows(), p.value.cols(), 0.0);
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
        if (p.decay && cfg_.weight_decay > 0.0) upd += cfg_.weight_decay * p.value[i];
        p.value[i] -= lr * upd;
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const Config& config() const { return cfg_; }

 private:
  struct State {
    Matrix m, v;
  };
  Config cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, State> state_;
};

// Linear warmup then cosine decay to lr_min.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                        std::uint64_t warmup = 0, double lr_min = 0.0) {
  if (total_steps == 0) return lr_max;
  if (warmup > 0 && step < warmup)
    return lr_max * (double)(step + 1) / (double)warmup;
  if (step >= total_steps) return lr_min;
  const double progress =
      (double)(step - warmup) / (double)(total_steps > warmup ? total_steps - warmup : 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace voxalign
