#pragma once

// Clinical-context embeddings and their fusion with study embeddings. The
// hash-based provider is a deterministic stand-in for an external embedding
// service: same structured findings, same vector, no network.

#include "voxalign/cohort/types.hpp"
#include "voxalign/core/hash.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace voxalign {

struct ContextEmbedding {
  std::vector<double> v;
  std::size_t dim() const { return v.size(); }
};

class ContextProvider {
 public:
  virtual ~ContextProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual ContextEmbedding embed(const VolumetricStudy& study) const = 0;
};

// Seeded hash of the structured findings (class, laterality, severity),
// order-independent, expanded into a fixed-dim gaussian vector. Studies with
// the same finding multiset share a context embedding, which is exactly the
// label-relevant signal the fusion experiments need.
class HashContextProvider : public ContextProvider {
 public:
  explicit HashContextProvider(std::size_t dim, std::uint64_t seed = 9001)
      : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw std::invalid_argument("context dim must be positive");
  }

  std::size_t dim() const override { return dim_; }

  ContextEmbedding embed(const VolumetricStudy& study) const override {
    std::uint64_t h = 0xE0F0D0C0B0A09080ull;
    for (const auto& f : study.report.findings) {
      const std::uint64_t key[3] = {(std::uint64_t)f.class_index,
                                    (std::uint64_t)(std::int64_t)f.laterality,
                                    (std::uint64_t)(std::int64_t)f.severity};
      h ^= fnv1a64(key, sizeof key);  // xor keeps the multiset order-free
    }
    Rng rng(seed_ ^ h);
    ContextEmbedding e;
    e.v.resize(dim_);
    for (double& x : e.v) x = rng.normal(0.0, 1.0);
    return e;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Row-wise concatenation [study | context]; output dim is the exact sum.
inline Matrix fuse_context(const Matrix& study_emb,
                           const std::vector<ContextEmbedding>& ctx) {
  if (ctx.size() != study_emb.rows())
    throw std::invalid_argument("fuse_context: one context per study required");
  if (ctx.empty()) throw std::invalid_argument("fuse_context: empty batch");
  const std::size_t cd = ctx[0].dim();
  Matrix out(study_emb.rows(), study_emb.cols() + cd);
  for (std::size_t r = 0; r < study_emb.rows(); ++r) {
    if (ctx[r].dim() != cd)
      throw std::invalid_argument("fuse_context: ragged context dimensions");
    for (std::size_t c = 0; c < study_emb.cols(); ++c) out(r, c) = study_emb(r, c);
    for (std::size_t c = 0; c < cd; ++c) out(r, study_emb.cols() + c) = ctx[r].v[c];
  }
  return out;
}

inline std::vector<ContextEmbedding> embed_studies(const ContextProvider& provider,
                                                   const std::vector<VolumetricStudy>& studies) {
  std::vector<ContextEmbedding> out;
  out.reserve(studies.size());
  for (const auto& s : studies) out.push_back(provider.embed(s));
  return out;
}

}  // namespace voxalign
