#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recipcrystal/tensor.hpp"

namespace recip {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCkptKindVae = 1;
inline constexpr std::uint32_t kCkptKindDiffusion = 2;

// Versioned binary training snapshot: parameter tensors, optimizer moments,
// auxiliary runtime tensors (selector bitmap, noise scales), RNG stream
// states, and an echo of the config that produced it.
struct Checkpoint {
  std::uint32_t kind = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::string config_text;

  std::vector<std::pair<std::string, Tensor>> params;
  std::uint64_t adam_steps = 0;
  std::vector<Tensor> adam_m, adam_v;  // empty when no optimizer state saved
  std::vector<std::pair<std::string, Tensor>> extras;
  std::vector<std::pair<std::string, std::string>> rng_states;

  const Tensor* find_extra(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // throws ArchiveCorrupt

}  // namespace recip
