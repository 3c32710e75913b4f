// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgc/rng.hpp"
#include "mgc/tensor.hpp"

namespace mgc::data {

inline constexpr std::size_t kCropFrames = 202;

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
    std::string id;
    std::string feature_path;
    std::string label;
    std::string audio_path;  // optional, used by feature extraction
    std::size_t line = 0;  // 1-based source line, 0 when built in memory
};

/// Newline-delimited JSON objects with string fields `id`, `feature_path`,
/// `label`, and optionally `audio_path`. Blank lines are skipped. With
/// `require_feature_path == false` the feature path may be absent (input
/// manifests for feature extraction).
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, bool require_feature_path = true);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

// ---------------------------------------------------------------------------
// Labels

struct LabelMap {
    std::vector<std::pair<std::string, std::string>> remaps;  // applied in order
    std::set<std::string> exclusions;                         // checked after remapping

    std::string remap(const std::string& label) const;
};

struct LabeledEntry {
    ManifestEntry entry;
    std::size_t class_id = 0;
};

struct LabeledSet {
    std::vector<LabeledEntry> entries;            // manifest order
    std::vector<std::string> classes;             // class id -> label, lexicographic
    std::map<std::string, std::size_t> excluded;  // dropped label -> count
};

/// remap -> exclude -> index. Class ids follow lexicographic label order of
/// the surviving labels, or `fixed_classes` when given (a surviving label
/// outside it is a DataError).
LabeledSet apply_label_map(std::span<const ManifestEntry> entries, const LabelMap& map,
                           const std::optional<std::vector<std::string>>& fixed_classes = std::nullopt);

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
    std::size_t k = 10;
    std::uint64_t seed = 0;
    std::map<std::string, std::size_t> assignment;  // id -> fold
    std::vector<std::string> warnings;

    std::size_t fold_of(const std::string& id) const;
};

/// Entries are sorted by id, grouped by class in class-id order, each class
/// is shuffled with one PCG64(seed) stream and dealt round-robin into the k
/// folds. The dealing position carries over between classes so fold totals
/// stay balanced too.
FoldPlan stratified_kfold(std::span<const LabeledEntry> entries, std::size_t k, std::uint64_t seed);

/// Flat JSON object mapping id -> fold, keys sorted.
std::string fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const std::string& text);

/// Splits entries into (train, test) for one fold.
std::pair<std::vector<LabeledEntry>, std::vector<LabeledEntry>> fold_split(std::span<const LabeledEntry> entries,
                                                                           const FoldPlan& plan,
                                                                           std::size_t fold);

// ---------------------------------------------------------------------------
// Crops and batches

/// Start frame of the deterministic evaluation crop: max(0, floor((T - frames) / 2)).
std::size_t centered_start(std::size_t steps, std::size_t frames);

/// [n_mels, frames] slice starting at `start`; clips shorter than `frames`
/// wrap around (column j takes source column j mod T, `start` ignored).
Tensor crop_at(const Tensor& mel, std::size_t start, std::size_t frames = kCropFrames);

/// Uniformly random crop start in [0, T - frames] when T >= frames.
Tensor crop_sample(const Tensor& mel, Pcg64& rng, std::size_t frames = kCropFrames);

/// Subtracts each mel bin's mean over time.
void normalize_per_bin(Tensor& mel);

struct Sample {
    std::string id;
    std::size_t label = 0;
    Tensor mel;  // [n_mels, T]
};

/// Loads every entry's feature archive. Relative feature paths resolve
/// against `feature_dir`. A missing or unreadable file names the entry id.
std::vector<Sample> load_samples(std::span<const LabeledEntry> entries, const std::filesystem::path& feature_dir);

/// Seeded shuffle of [0, n) cut into consecutive batches; the short final batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Pcg64& rng);

struct Batch {
    Tensor inputs;  // [B, n_mels, frames], per-bin mean normalized
    std::vector<std::size_t> labels;
};

/// Random crops of the given samples.
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, std::size_t frames,
                 Pcg64& rng);

/// Stacks [n_mels, frames] crops into a [B, n_mels, frames] tensor.
Tensor stack(std::span<const Tensor> crops);

// ---------------------------------------------------------------------------
// Feature archive: "MELB", u32 version = 1, u32 n_mels, u32 n_frames, then
// n_mels * n_frames little-endian float32 values in mel-major order.

inline constexpr std::uint32_t kFeatureArchiveVersion = 1;

std::string encode_features(const Tensor& mel);
Tensor decode_features(std::string_view bytes, const std::string& origin = "features");
void write_features(const std::filesystem::path& path, const Tensor& mel);
Tensor read_features(const std::filesystem::path& path);

}  // namespace mgc::data
