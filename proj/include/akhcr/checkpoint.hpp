#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "akhcr/model.hpp"
#include "akhcr/optimizer.hpp"

namespace akhcr {

// On-disk format (all little-endian):
//   "AKHW" | u32 version | u32 epoch | u64 adam_t | u32 entry_count
//   per entry: u32 name_len, name bytes, u32 rank, u64 extents[rank], f32 data
//   u32 class_count, per class: u32 len, bytes
//   u64 FNV-1a checksum over everything between the magic and the checksum
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint32_t epoch = 0;  // completed epochs
  std::uint64_t adam_t = 0;
  std::vector<std::pair<std::string, Tensor>> entries;
  std::vector<std::string> class_names;
};

// Entries: params, batch-norm running stats, then Adam moments under
// adam/m/<name> and adam/v/<name>; order is deterministic.
Checkpoint make_checkpoint(const ModelState& state, const AdamState& adam,
                           std::uint32_t epoch, const std::vector<std::string>& class_names);

// Fills a freshly initialized state (shapes must match) and the Adam state.
void apply_checkpoint(const Checkpoint& ck, ModelState& state, AdamState& adam);

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Validates magic, version and checksum before returning; a bad or truncated
// file raises FormatError with the offending byte offset and nothing is
// applied.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace akhcr
