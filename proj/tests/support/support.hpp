// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgc/data.hpp"
#include "mgc/model.hpp"

namespace mgc::testing {

/// Scalar parameter count from closed-form per-layer formulas. Written
/// against the layer table, not against the model code.
std::size_t oracle_param_count(const ModelConfig& config);

/// Small CCS model: s = 8, c = 16, b = 8, Res2 scale 8, narrow head.
ModelConfig reduced_config(std::size_t n_classes = 10);

/// Class-coded spectrograms: class k lights a 4-bin band starting at bin
/// (4k + 2) mod n_mels with a square wave of period 8 frames (phase depends
/// on the sample), on top of small uniform noise.
std::vector<data::Sample> separable_set(std::size_t n_classes, std::size_t per_class, std::size_t frames,
                                        std::uint64_t seed, std::size_t n_mels = 48);

/// Writes `samples` as feature archives plus a manifest into `dir`, with
/// labels "genre_XX". Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<data::Sample>& samples);

/// A fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
   public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

   private:
    std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mgc::testing
