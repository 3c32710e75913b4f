// SPDX-License-Identifier: Apache-2.0
//
// Run configuration document. Three sections:
//
//   model  s, c, bottleneck, dilations, res2_scale, n_mels, fst_kernel,
//          last_conv_out, se_bottleneck, attention_bottleneck,
//          fsa {enabled, w, h, rho}, n_classes (0 = count manifest labels)
//   train  lr, lr_min, epochs, batch_size, seed, crop_frames, tta_crops,
//          weight_decay, crops_per_entry
//   data   manifest, feature_dir, fold_plan, folds, label_remaps
//          ([[from, to], ...]), label_exclusions ([label, ...])
//
// Every key is optional and defaults to the values below; unknown keys are
// rejected. `to_json` always writes the fully resolved document.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mgc/data.hpp"
#include "mgc/model.hpp"

namespace mgc {

struct TrainConfig {
    double lr = 1e-3;
    double lr_min = 1e-6;
    std::size_t epochs = 80;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::size_t crop_frames = 202;
    std::size_t tta_crops = 10;
    double weight_decay = 0.0;
    std::size_t crops_per_entry = 1;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
    std::string manifest;
    std::string feature_dir;
    std::string fold_plan;  // empty: plan folds in memory from the seed
    std::size_t folds = 10;
    std::vector<std::pair<std::string, std::string>> label_remaps;
    std::vector<std::string> label_exclusions;

    data::LabelMap label_map() const;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;

    /// Throws ConfigError on any inconsistency. `n_classes == 0` is allowed
    /// here and resolved from the manifest later.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses a config document; throws ConfigError on unknown keys or bad types.
RunConfig parse_run_config(std::string_view text);
/// Reads a config file. Relative data paths are resolved against its directory.
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical resolved document: sorted keys, two-space indent.
std::string to_json(const RunConfig& config, int indent = 2);

}  // namespace mgc
