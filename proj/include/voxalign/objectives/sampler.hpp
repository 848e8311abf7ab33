#pragma once

// Weighted with-replacement study sampling. Abnormal studies get a fixed
// upsampling factor; an all-normal cohort degenerates to uniform.

#include "voxalign/core/rng.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace voxalign {

class StudySampler {
 public:
  explicit StudySampler(const std::vector<double>& weights) {
    if (weights.empty()) throw std::invalid_argument("sampler: no studies");
    cum_.reserve(weights.size());
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw std::invalid_argument("sampler: weights must be positive");
      total += w;
      cum_.push_back(total);
    }
  }

  std::size_t size() const { return cum_.size(); }

  std::size_t next(Rng& rng) const {
    const double u = rng.uniform() * cum_.back();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    return std::min<std::size_t>((std::size_t)(it - cum_.begin()), cum_.size() - 1);
  }

 private:
  std::vector<double> cum_;
};

inline StudySampler build_sampler(const std::vector<bool>& abnormal,
                                  double upsample = 4.0) {
  if (upsample < 1.0) throw std::invalid_argument("sampler: upsample factor < 1");
  std::vector<double> w;
  w.reserve(abnormal.size());
  for (bool a : abnormal) w.push_back(a ? upsample : 1.0);
  return StudySampler(w);
}

}  // namespace voxalign
