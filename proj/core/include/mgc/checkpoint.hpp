// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (little-endian):
//
//   "CCSK"  u32 version
//   u64 length, canonical JSON {"classes": [...], "config": {...}}
//   u32 tensor count, then per tensor sorted by name:
//       u32 name length, name bytes, u32 rank, u64 dims[rank], float32 payload
//   u32 CRC-32 of every preceding byte
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mgc/config.hpp"
#include "mgc/model.hpp"
#include "mgc/tensor.hpp"

namespace mgc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;  // model.n_classes resolved
    std::vector<std::string> classes;
    std::vector<std::pair<std::string, Tensor>> tensors;  // sorted by name, float32-rounded
};

/// Snapshot of every parameter and buffer of `model`, rounded to float32.
Checkpoint make_checkpoint(const RunConfig& config, const std::vector<std::string>& classes, EcapaModel& model);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model described by the checkpoint config and loads its
/// tensors. Missing, extra, or mis-shaped tensors raise FormatError.
std::unique_ptr<EcapaModel> restore_model(const Checkpoint& checkpoint);

/// Copies checkpoint tensors into an existing model (same checks).
void load_tensors(const Checkpoint& checkpoint, EcapaModel& model);

}  // namespace mgc
