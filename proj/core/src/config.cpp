// SPDX-License-Identifier: Apache-2.0
#include "mgc/config.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include <nlohmann/json.hpp>

#include "mgc/errors.hpp"
#include "mgc/io.hpp"

namespace mgc {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw ConfigError("config: '" + section + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!known) {
            throw ConfigError("config: unknown key '" + section + "." + key + "'");
        }
    }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    const std::string name = section + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("config: '" + name + "' must be a boolean");
        out = it->get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError("config: '" + name + "' must be a number");
        out = it->get<double>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError("config: '" + name + "' must be a non-negative integer");
        out = it->get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("config: '" + name + "' must be a string");
        out = it->get<std::string>();
    } else {
        static_assert(sizeof(T) == 0, "unsupported config field type");
    }
}

void read_model(const json& obj, ModelConfig& m) {
    const std::string sec = "model";
    reject_unknown(obj, sec,
                   {"s", "c", "bottleneck", "dilations", "res2_scale", "n_mels", "fst_kernel", "last_conv_out",
                    "se_bottleneck", "attention_bottleneck", "fsa", "n_classes"});
    read(obj, sec, "s", m.stop_channels);
    read(obj, sec, "c", m.cont_channels);
    read(obj, sec, "bottleneck", m.bottleneck);
    read(obj, sec, "res2_scale", m.res2_scale);
    read(obj, sec, "n_mels", m.n_mels);
    read(obj, sec, "fst_kernel", m.fst_kernel);
    read(obj, sec, "last_conv_out", m.last_conv_out);
    read(obj, sec, "se_bottleneck", m.se_bottleneck);
    read(obj, sec, "attention_bottleneck", m.attention_bottleneck);
    read(obj, sec, "n_classes", m.n_classes);
    if (auto it = obj.find("dilations"); it != obj.end()) {
        if (!it->is_array()) throw ConfigError("config: 'model.dilations' must be an array");
        m.dilations.clear();
        for (const auto& d : *it) {
            if (!d.is_number_unsigned()) throw ConfigError("config: 'model.dilations' entries must be integers");
            m.dilations.push_back(d.get<std::size_t>());
        }
    }
    if (auto it = obj.find("fsa"); it != obj.end()) {
        const std::string fsec = "model.fsa";
        reject_unknown(*it, fsec, {"enabled", "w", "h", "rho"});
        read(*it, fsec, "enabled", m.fsa.enabled);
        read(*it, fsec, "w", m.fsa.window);
        read(*it, fsec, "h", m.fsa.hop);
        read(*it, fsec, "rho", m.fsa.rho);
    }
}

void read_train(const json& obj, TrainConfig& t) {
    const std::string sec = "train";
    reject_unknown(obj, sec,
                   {"lr", "lr_min", "epochs", "batch_size", "seed", "crop_frames", "tta_crops", "weight_decay",
                    "crops_per_entry"});
    read(obj, sec, "lr", t.lr);
    read(obj, sec, "lr_min", t.lr_min);
    read(obj, sec, "epochs", t.epochs);
    read(obj, sec, "batch_size", t.batch_size);
    read(obj, sec, "seed", t.seed);
    read(obj, sec, "crop_frames", t.crop_frames);
    read(obj, sec, "tta_crops", t.tta_crops);
    read(obj, sec, "weight_decay", t.weight_decay);
    read(obj, sec, "crops_per_entry", t.crops_per_entry);
}

void read_data(const json& obj, DataConfig& d) {
    const std::string sec = "data";
    reject_unknown(obj, sec, {"manifest", "feature_dir", "fold_plan", "folds", "label_remaps", "label_exclusions"});
    read(obj, sec, "manifest", d.manifest);
    read(obj, sec, "feature_dir", d.feature_dir);
    read(obj, sec, "fold_plan", d.fold_plan);
    read(obj, sec, "folds", d.folds);
    if (auto it = obj.find("label_remaps"); it != obj.end()) {
        if (!it->is_array()) throw ConfigError("config: 'data.label_remaps' must be an array of [from, to] pairs");
        for (const auto& pair : *it) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
                throw ConfigError("config: 'data.label_remaps' entries must be [from, to] string pairs");
            }
            d.label_remaps.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
        }
    }
    if (auto it = obj.find("label_exclusions"); it != obj.end()) {
        if (!it->is_array()) throw ConfigError("config: 'data.label_exclusions' must be an array of strings");
        for (const auto& label : *it) {
            if (!label.is_string()) throw ConfigError("config: 'data.label_exclusions' entries must be strings");
            d.label_exclusions.push_back(label.get<std::string>());
        }
    }
}

}  // namespace

data::LabelMap DataConfig::label_map() const {
    data::LabelMap map;
    map.remaps = label_remaps;
    map.exclusions.insert(label_exclusions.begin(), label_exclusions.end());
    return map;
}

void RunConfig::validate() const {
    ModelConfig m = model;
    if (m.n_classes == 0) m.n_classes = 2;  // placeholder until the manifest is read
    m.validate();
    const auto& t = train;
    if (!(t.lr > 0.0) || !std::isfinite(t.lr)) throw ConfigError("config: train.lr must be positive");
    if (!(t.lr_min >= 0.0) || t.lr_min > t.lr) throw ConfigError("config: train.lr_min must lie in [0, lr]");
    if (t.epochs == 0) throw ConfigError("config: train.epochs must be positive");
    if (t.batch_size == 0) throw ConfigError("config: train.batch_size must be positive");
    if (t.crop_frames == 0) throw ConfigError("config: train.crop_frames must be positive");
    if (t.tta_crops == 0) throw ConfigError("config: train.tta_crops must be positive");
    if (t.crops_per_entry == 0) throw ConfigError("config: train.crops_per_entry must be positive");
    if (!(t.weight_decay >= 0.0)) throw ConfigError("config: train.weight_decay must be non-negative");
    if (data.folds < 2) throw ConfigError("config: data.folds must be at least 2");
}

RunConfig parse_run_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    reject_unknown(doc, "<root>", {"model", "train", "data"});
    RunConfig config;
    if (doc.contains("model")) read_model(doc["model"], config.model);
    if (doc.contains("train")) read_train(doc["train"], config.train);
    if (doc.contains("data")) read_data(doc["data"], config.data);
    config.validate();
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    RunConfig config = parse_run_config(text);
    const auto base = path.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) {
            p = (base / p).lexically_normal().string();
        }
    };
    resolve(config.data.manifest);
    resolve(config.data.feature_dir);
    resolve(config.data.fold_plan);
    return config;
}

std::string to_json(const RunConfig& config, int indent) {
    const auto& m = config.model;
    const auto& t = config.train;
    const auto& d = config.data;
    json remaps = json::array();
    for (const auto& [from, to] : d.label_remaps) remaps.push_back({from, to});
    json doc = {
        {"model",
         {{"s", m.stop_channels},
          {"c", m.cont_channels},
          {"bottleneck", m.bottleneck},
          {"dilations", m.dilations},
          {"res2_scale", m.res2_scale},
          {"n_mels", m.n_mels},
          {"fst_kernel", m.fst_kernel},
          {"last_conv_out", m.last_conv_out},
          {"se_bottleneck", m.se_bottleneck},
          {"attention_bottleneck", m.attention_bottleneck},
          {"fsa", {{"enabled", m.fsa.enabled}, {"w", m.fsa.window}, {"h", m.fsa.hop}, {"rho", m.fsa.rho}}},
          {"n_classes", m.n_classes}}},
        {"train",
         {{"lr", t.lr},
          {"lr_min", t.lr_min},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"crop_frames", t.crop_frames},
          {"tta_crops", t.tta_crops},
          {"weight_decay", t.weight_decay},
          {"crops_per_entry", t.crops_per_entry}}},
        {"data",
         {{"manifest", d.manifest},
          {"feature_dir", d.feature_dir},
          {"fold_plan", d.fold_plan},
          {"folds", d.folds},
          {"label_remaps", remaps},
          {"label_exclusions", d.label_exclusions}}},
    };
    return doc.dump(indent);
}

}  // namespace mgc
