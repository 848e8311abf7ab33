#pragma once

// Checkpoint format: magic, format version, JSON metadata string, named f64
// blocks, FNV-1a checksum over everything before it. Shapes live with the
// blocks so a store can be restored without reconstructing the model first.

#include "voxalign/core/binio.hpp"
#include "voxalign/core/hash.hpp"
#include "voxalign/core/nn.hpp"

#include <json.hpp>

#include <map>
#include <stdexcept>
#include <string>

namespace voxalign {

inline constexpr std::uint32_t kCheckpointMagic = 0x56584C41;  // "VXLA"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const nlohmann::json& meta) {
  ByteWriter w;
  w.u32(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(meta.dump());
  w.u64(store.size());
  for (const auto& [name, p] : store) {
    w.str(name);
    w.u8(p.decay ? 1 : 0);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    w.bytes(p.value.data(), p.value.size() * sizeof(double));
  }
  const std::uint64_t checksum = fnv1a64(w.buffer());
  w.u64(checksum);
  w.save(path);
}

// Order-stable digest of every parameter's name, shape, and raw bytes.
// Bit-identical stores, and only those, share a fingerprint.
inline std::uint64_t store_fingerprint(const ParamStore& store) {
  ByteWriter w;
  w.u64(store.size());
  for (const auto& [name, p] : store) {
    w.str(name);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    w.bytes(p.value.data(), p.value.size() * sizeof(double));
  }
  return fnv1a64(w.buffer());
}

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Param> params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  ByteReader r = ByteReader::load(path);
  if (r.remaining() < 8) throw std::runtime_error("checkpoint truncated: " + path);
  Checkpoint ckpt;
  // Verify the trailing checksum before trusting any field.
  {
    ByteReader probe = ByteReader::load(path);
    const std::size_t body = probe.remaining() - 8;
    std::string bytes;
    bytes.reserve(body);
    for (std::size_t i = 0; i < body; ++i) bytes.push_back((char)probe.u8());
    const std::uint64_t stored = probe.u64();
    if (fnv1a64(bytes) != stored)
      throw std::runtime_error("checkpoint checksum mismatch: " + path);
  }
  if (r.u32() != kCheckpointMagic) throw std::runtime_error("not a checkpoint: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  ckpt.meta = nlohmann::json::parse(r.str());
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    Param p;
    p.decay = r.u8() != 0;
    const std::uint64_t rows = r.u64(), cols = r.u64();
    p.value = Matrix(rows, cols);
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = r.f64();
    p.grad = Matrix(rows, cols, 0.0);
    ckpt.params.emplace(name, std::move(p));
  }
  return ckpt;
}

// Restores values into an already-constructed store; names and shapes must
// match exactly (a changed architecture is an error, not a silent skip).
inline void restore_into(ParamStore& store, const Checkpoint& ckpt) {
  std::size_t matched = 0;
  for (auto& [name, p] : store) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end())
      throw std::runtime_error("checkpoint missing parameter: " + name);
    if (!it->second.value.same_shape(p.value))
      throw std::runtime_error("checkpoint shape mismatch for: " + name);
    p.value = it->second.value;
    ++matched;
  }
  if (matched != ckpt.params.size())
    throw std::runtime_error("checkpoint has extra parameters");
}

// Restores one named subtree, mapping checkpoint names under `from` onto
// store names under `onto`. Used to seed a component (say a pretrained name
// encoder) inside a larger model's store. Every store parameter under `onto`
// must be matched; returns how many were.
inline std::size_t restore_subtree(ParamStore& store, const Checkpoint& ckpt,
                                   const std::string& onto, const std::string& from) {
  std::size_t matched = 0;
  for (auto& [name, p] : store) {
    if (name.rfind(onto, 0) != 0) continue;
    const std::string src = from + name.substr(onto.size());
    auto it = ckpt.params.find(src);
    if (it == ckpt.params.end())
      throw std::runtime_error("checkpoint missing parameter: " + src);
    if (!it->second.value.same_shape(p.value))
      throw std::runtime_error("checkpoint shape mismatch for: " + src);
    p.value = it->second.value;
    ++matched;
  }
  if (matched == 0) throw std::runtime_error("no parameters under prefix: " + onto);
  return matched;
}

}  // namespace voxalign
