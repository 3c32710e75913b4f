// SPDX-License-Identifier: Apache-2.0
#include "mgc/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mgc/errors.hpp"
#include "mgc/io.hpp"

namespace mgc::data {

using nlohmann::json;

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

std::string string_field(const json& obj, const char* key, const std::filesystem::path& path, std::size_t line,
                         bool required) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) throw DataError(where(path, line) + ": missing field '" + key + "'");
        return {};
    }
    if (!it->is_string()) {
        throw DataError(where(path, line) + ": field '" + key + "' must be a string");
    }
    return it->get<std::string>();
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, bool require_feature_path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(path.string() + ": cannot open manifest");
    }
    std::vector<ManifestEntry> entries;
    std::unordered_map<std::string, std::size_t> first_line;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(text);
        } catch (const json::parse_error& e) {
            throw DataError(where(path, line) + ": malformed JSON: " + e.what());
        }
        if (!obj.is_object()) {
            throw DataError(where(path, line) + ": expected a JSON object");
        }
        ManifestEntry entry;
        entry.id = string_field(obj, "id", path, line, true);
        entry.feature_path = string_field(obj, "feature_path", path, line, require_feature_path);
        entry.label = string_field(obj, "label", path, line, true);
        entry.audio_path = string_field(obj, "audio_path", path, line, false);
        entry.line = line;
        if (entry.id.empty()) {
            throw DataError(where(path, line) + ": empty id");
        }
        auto [it, inserted] = first_line.emplace(entry.id, line);
        if (!inserted) {
            throw DataError(path.string() + ": duplicate id '" + entry.id + "' on lines " + std::to_string(it->second) +
                            " and " + std::to_string(line));
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::string out;
    for (const auto& e : entries) {
        json obj = {{"id", e.id}, {"feature_path", e.feature_path}, {"label", e.label}};
        if (!e.audio_path.empty()) obj["audio_path"] = e.audio_path;
        out += obj.dump();
        out += '\n';
    }
    io::write_file_atomic(path, out);
}

std::string LabelMap::remap(const std::string& label) const {
    std::string current = label;
    for (const auto& [from, to] : remaps) {
        if (current == from) current = to;
    }
    return current;
}

LabeledSet apply_label_map(std::span<const ManifestEntry> entries, const LabelMap& map,
                           const std::optional<std::vector<std::string>>& fixed_classes) {
    LabeledSet out;
    std::vector<std::pair<ManifestEntry, std::string>> kept;
    for (const auto& e : entries) {
        std::string label = map.remap(e.label);
        if (map.exclusions.count(label)) {
            ++out.excluded[label];
            continue;
        }
        kept.emplace_back(e, std::move(label));
    }

    if (fixed_classes) {
        out.classes = *fixed_classes;
    } else {
        std::set<std::string> labels;
        for (const auto& [e, label] : kept) labels.insert(label);
        out.classes.assign(labels.begin(), labels.end());
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < out.classes.size(); ++i) index.emplace(out.classes[i], i);

    for (auto& [e, label] : kept) {
        auto it = index.find(label);
        if (it == index.end()) {
            throw DataError("entry '" + e.id + "': label '" + label + "' is not in the class index");
        }
        LabeledEntry le{std::move(e), it->second};
        le.entry.label = label;
        out.entries.push_back(std::move(le));
    }
    return out;
}

std::size_t FoldPlan::fold_of(const std::string& id) const {
    auto it = assignment.find(id);
    if (it == assignment.end()) {
        throw DataError("id '" + id + "' is not in the fold plan");
    }
    return it->second;
}

FoldPlan stratified_kfold(std::span<const LabeledEntry> entries, std::size_t k, std::uint64_t seed) {
    if (k < 2) {
        throw ConfigError("fold count must be at least 2, got " + std::to_string(k));
    }
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;

    std::map<std::size_t, std::vector<std::string>> by_class;
    std::map<std::size_t, std::string> label_of;
    for (const auto& e : entries) {
        by_class[e.class_id].push_back(e.entry.id);
        label_of.emplace(e.class_id, e.entry.label);
    }

    Pcg64 rng(seed);
    std::size_t position = 0;
    for (auto& [cls, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        if (ids.size() < k) {
            plan.warnings.push_back("class " + std::to_string(cls) + " ('" + label_of[cls] + "') has " +
                                    std::to_string(ids.size()) + " entries, fewer than " + std::to_string(k) +
                                    " folds");
        }
        rng.shuffle(std::span<std::string>(ids));
        for (const auto& id : ids) {
            plan.assignment[id] = position % k;
            ++position;
        }
    }
    return plan;
}

std::string fold_plan_to_json(const FoldPlan& plan) {
    json obj = json::object();
    for (const auto& [id, fold] : plan.assignment) obj[id] = fold;
    return obj.dump(2) + "\n";
}

FoldPlan fold_plan_from_json(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("fold plan: malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) {
        throw DataError("fold plan: expected a JSON object");
    }
    FoldPlan plan;
    std::size_t max_fold = 0;
    for (const auto& [id, fold] : obj.items()) {
        if (!fold.is_number_unsigned()) {
            throw DataError("fold plan: fold of '" + id + "' must be a non-negative integer");
        }
        plan.assignment[id] = fold.get<std::size_t>();
        max_fold = std::max(max_fold, plan.assignment[id]);
    }
    plan.k = max_fold + 1;
    return plan;
}

std::pair<std::vector<LabeledEntry>, std::vector<LabeledEntry>> fold_split(std::span<const LabeledEntry> entries,
                                                                           const FoldPlan& plan,
                                                                           std::size_t fold) {
    if (fold >= plan.k) {
        throw ConfigError("fold " + std::to_string(fold) + " out of range for " + std::to_string(plan.k) + " folds");
    }
    std::pair<std::vector<LabeledEntry>, std::vector<LabeledEntry>> out;
    for (const auto& e : entries) {
        (plan.fold_of(e.entry.id) == fold ? out.second : out.first).push_back(e);
    }
    return out;
}

std::size_t centered_start(std::size_t steps, std::size_t frames) {
    return steps > frames ? (steps - frames) / 2 : 0;
}

Tensor crop_at(const Tensor& mel, std::size_t start, std::size_t frames) {
    if (mel.rank() != 2 || mel.dim(1) == 0) {
        throw ShapeError("crop expects a non-empty [n_mels, T] tensor, got " + shape_to_string(mel.shape()));
    }
    const std::size_t bins = mel.dim(0);
    const std::size_t steps = mel.dim(1);
    if (steps >= frames && start + frames > steps) {
        throw ShapeError("crop [" + std::to_string(start) + ", " + std::to_string(start + frames) +
                         ") exceeds " + std::to_string(steps) + " frames");
    }
    Tensor out({bins, frames});
    for (std::size_t m = 0; m < bins; ++m) {
        for (std::size_t j = 0; j < frames; ++j) {
            const std::size_t src = steps >= frames ? start + j : j % steps;
            out.at(m, j) = mel.at(m, src);
        }
    }
    return out;
}

Tensor crop_sample(const Tensor& mel, Pcg64& rng, std::size_t frames) {
    if (mel.rank() != 2) {
        throw ShapeError("crop expects [n_mels, T], got " + shape_to_string(mel.shape()));
    }
    const std::size_t steps = mel.dim(1);
    const std::size_t start = steps > frames ? static_cast<std::size_t>(rng.below(steps - frames + 1)) : 0;
    return crop_at(mel, start, frames);
}

void normalize_per_bin(Tensor& mel) {
    if (mel.rank() != 2 || mel.dim(1) == 0) {
        throw ShapeError("normalize expects a non-empty [n_mels, T] tensor");
    }
    const std::size_t steps = mel.dim(1);
    for (std::size_t m = 0; m < mel.dim(0); ++m) {
        double mean = 0.0;
        for (std::size_t t = 0; t < steps; ++t) mean += mel.at(m, t);
        mean /= static_cast<double>(steps);
        for (std::size_t t = 0; t < steps; ++t) mel.at(m, t) -= mean;
    }
}

std::vector<Sample> load_samples(std::span<const LabeledEntry> entries, const std::filesystem::path& feature_dir) {
    std::vector<Sample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        std::filesystem::path p = e.entry.feature_path;
        if (p.is_relative() && !feature_dir.empty()) p = feature_dir / p;
        if (e.entry.feature_path.empty() || !std::filesystem::exists(p)) {
            throw DataError("entry '" + e.entry.id + "': feature file not found: " + p.string());
        }
        try {
            out.push_back({e.entry.id, e.class_id, read_features(p)});
        } catch (const Error& err) {
            throw DataError("entry '" + e.entry.id + "': " + err.what());
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Pcg64& rng) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return batches;
}

Tensor stack(std::span<const Tensor> crops) {
    if (crops.empty()) {
        throw ShapeError("cannot stack an empty batch");
    }
    const Shape& s = crops.front().shape();
    Shape shape{crops.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    Tensor out(shape);
    const std::size_t n = crops.front().size();
    for (std::size_t i = 0; i < crops.size(); ++i) {
        if (crops[i].shape() != s) {
            throw ShapeError("stack: shape " + shape_to_string(crops[i].shape()) + " differs from " +
                             shape_to_string(s));
        }
        std::copy(crops[i].data().begin(), crops[i].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, std::size_t frames,
                 Pcg64& rng) {
    std::vector<Tensor> crops;
    Batch batch;
    for (std::size_t i : indices) {
        Tensor crop = crop_sample(samples[i].mel, rng, frames);
        normalize_per_bin(crop);
        crops.push_back(std::move(crop));
        batch.labels.push_back(samples[i].label);
    }
    batch.inputs = stack(crops);
    return batch;
}

std::string encode_features(const Tensor& mel) {
    if (mel.rank() != 2 || mel.dim(0) == 0 || mel.dim(1) == 0) {
        throw ShapeError("feature archive expects a non-empty [n_mels, T] tensor, got " + shape_to_string(mel.shape()));
    }
    std::string out = "MELB";
    io::put_u32(out, kFeatureArchiveVersion);
    io::put_u32(out, static_cast<std::uint32_t>(mel.dim(0)));
    io::put_u32(out, static_cast<std::uint32_t>(mel.dim(1)));
    out.reserve(out.size() + 4 * mel.size());
    for (double v : mel.data()) io::put_f32(out, static_cast<float>(v));
    return out;
}

Tensor decode_features(std::string_view bytes, const std::string& origin) {
    constexpr std::size_t header = 16;
    if (bytes.size() < 4 || bytes.substr(0, 4) != "MELB") {
        throw FormatError(origin + ": bad magic at offset 0, expected \"MELB\"");
    }
    if (bytes.size() < header) {
        throw FormatError(origin + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    }
    const std::uint32_t version = io::get_u32(bytes, 4);
    if (version != kFeatureArchiveVersion) {
        throw FormatError(origin + ": unsupported version " + std::to_string(version) + " at offset 4, expected " +
                          std::to_string(kFeatureArchiveVersion));
    }
    const std::size_t bins = io::get_u32(bytes, 8);
    const std::size_t steps = io::get_u32(bytes, 12);
    if (bins == 0 || steps == 0) {
        throw FormatError(origin + ": empty feature matrix " + std::to_string(bins) + "x" + std::to_string(steps));
    }
    const std::size_t expected = header + 4 * bins * steps;
    if (bytes.size() < expected) {
        throw FormatError(origin + ": truncated payload, " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw FormatError(origin + ": " + std::to_string(bytes.size() - expected) + " trailing bytes at offset " +
                          std::to_string(expected));
    }
    Tensor mel({bins, steps});
    for (std::size_t i = 0; i < bins * steps; ++i) mel[i] = io::get_f32(bytes, header + 4 * i);
    return mel;
}

void write_features(const std::filesystem::path& path, const Tensor& mel) {
    io::write_file_atomic(path, encode_features(mel));
}

Tensor read_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(path.string() + ": cannot open feature archive");
    }
    // Header first so a foreign file is rejected without reading its body.
    std::string head(16, '\0');
    in.read(head.data(), 16);
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (head.size() < 4 || head.substr(0, 4) != "MELB") {
        throw FormatError(path.string() + ": bad magic at offset 0, expected \"MELB\"");
    }
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_features(head + body, path.string());
}

}  // namespace mgc::data
