// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgc/checkpoint.hpp"
#include "mgc/config.hpp"
#include "mgc/data.hpp"
#include "mgc/errors.hpp"
#include "mgc/features.hpp"
#include "mgc/io.hpp"
#include "mgc/training.hpp"

namespace mgc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Dataset {
    data::LabeledSet labeled;
    fs::path feature_dir;
};

Dataset prepare_dataset(const DataConfig& dc, const std::string& manifest,
                        const std::optional<std::vector<std::string>>& classes = std::nullopt) {
    if (manifest.empty()) {
        throw ConfigError("no manifest given (data.manifest or --manifest)");
    }
    const auto entries = data::load_manifest(manifest);
    Dataset ds;
    ds.labeled = data::apply_label_map(entries, dc.label_map(), classes);
    ds.feature_dir = dc.feature_dir.empty() ? fs::path(manifest).parent_path() : fs::path(dc.feature_dir);
    return ds;
}

data::FoldPlan resolve_plan(const RunConfig& config, const data::LabeledSet& labeled, std::ostream& err) {
    if (!config.data.fold_plan.empty() && fs::exists(config.data.fold_plan)) {
        auto plan = data::fold_plan_from_json(io::read_file(config.data.fold_plan));
        for (const auto& e : labeled.entries) plan.fold_of(e.entry.id);
        return plan;
    }
    auto plan = data::stratified_kfold(labeled.entries, config.data.folds, config.train.seed);
    for (const auto& w : plan.warnings) err << "warning: " << w << "\n";
    return plan;
}

json confusion_json(const Metrics& m) {
    json rows = json::array();
    for (const auto& row : m.confusion) rows.push_back(row);
    return rows;
}

json fold_json(std::size_t fold, const Metrics& m) {
    return {{"fold", fold},
            {"accuracy", m.accuracy()},
            {"balanced_accuracy", m.balanced_accuracy()},
            {"n_test", m.total()},
            {"confusion", confusion_json(m)}};
}

std::string report_text(const json& report) { return report.dump(2) + "\n"; }

void print_fold_table(const data::FoldPlan& plan, const data::LabeledSet& labeled, std::ostream& out) {
    std::vector<std::vector<std::size_t>> counts(plan.k, std::vector<std::size_t>(labeled.classes.size(), 0));
    for (const auto& e : labeled.entries) ++counts[plan.fold_of(e.entry.id)][e.class_id];
    out << std::left << std::setw(16) << "class";
    for (std::size_t f = 0; f < plan.k; ++f) out << std::right << std::setw(6) << ("f" + std::to_string(f));
    out << "\n";
    for (std::size_t c = 0; c < labeled.classes.size(); ++c) {
        out << std::left << std::setw(16) << labeled.classes[c];
        for (std::size_t f = 0; f < plan.k; ++f) out << std::right << std::setw(6) << counts[f][c];
        out << "\n";
    }
    out << std::left << std::setw(16) << "total";
    for (std::size_t f = 0; f < plan.k; ++f) {
        out << std::right << std::setw(6) << std::accumulate(counts[f].begin(), counts[f].end(), std::size_t{0});
    }
    out << "\n";
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
    std::string audio_dir;
    std::string manifest;
    std::string out_dir;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out, std::ostream& err) {
    const auto entries = data::load_manifest(a.manifest, false);
    std::vector<data::ManifestEntry> done;
    std::size_t failures = 0;
    for (const auto& e : entries) {
        const fs::path audio = fs::path(a.audio_dir) / (e.audio_path.empty() ? e.id + ".wav" : e.audio_path);
        try {
            auto mel = features::extract(features::load_wav(audio));
            const std::string name = e.id + ".melb";
            data::write_features(fs::path(a.out_dir) / name, mel.values);
            auto updated = e;
            updated.feature_path = name;
            done.push_back(std::move(updated));
        } catch (const Error& ex) {
            ++failures;
            err << "error: " << audio.string() << ": " << ex.what() << "\n";
        }
    }
    data::write_manifest(fs::path(a.out_dir) / "manifest.jsonl", done);
    out << "extracted " << done.size() << " of " << entries.size() << " files, " << failures << " failed\n";
    return failures == 0 ? kOk : kDataError;
}

struct FoldsArgs {
    std::string manifest;
    std::string config;
    std::string out;
    std::size_t k = 10;
    std::uint64_t seed = 0;
};

int cmd_folds(const FoldsArgs& a, std::ostream& out, std::ostream& err) {
    DataConfig dc;
    if (!a.config.empty()) dc = load_run_config(a.config).data;
    const auto ds = prepare_dataset(dc, a.manifest);
    const auto plan = data::stratified_kfold(ds.labeled.entries, a.k, a.seed);
    for (const auto& w : plan.warnings) err << "warning: " << w << "\n";
    io::write_file_atomic(a.out, data::fold_plan_to_json(plan));
    print_fold_table(plan, ds.labeled, out);
    return kOk;
}

struct TrainArgs {
    std::string config;
    std::optional<std::size_t> fold;
    bool all_folds = false;
    std::string out_dir = "run";
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig config = load_run_config(a.config);
    if (a.all_folds == a.fold.has_value()) {
        throw ConfigError("train: give exactly one of --fold N or --all-folds");
    }
    const auto ds = prepare_dataset(config.data, config.data.manifest);
    const auto& classes = ds.labeled.classes;
    if (classes.empty()) {
        throw DataError("train: no entries left after label mapping");
    }
    if (config.model.n_classes != 0 && config.model.n_classes != classes.size()) {
        throw ConfigError("model.n_classes is " + std::to_string(config.model.n_classes) + " but the manifest has " +
                          std::to_string(classes.size()) + " classes");
    }
    config.model.n_classes = classes.size();
    config.model.validate();

    const auto plan = resolve_plan(config, ds.labeled, err);
    std::vector<std::size_t> folds;
    if (a.all_folds) {
        folds.resize(plan.k);
        std::iota(folds.begin(), folds.end(), std::size_t{0});
    } else {
        if (*a.fold >= plan.k) {
            throw ConfigError("train: fold " + std::to_string(*a.fold) + " out of range for " +
                              std::to_string(plan.k) + " folds");
        }
        folds.push_back(*a.fold);
    }

    const auto samples = data::load_samples(ds.labeled.entries, ds.feature_dir);
    const fs::path out_dir = a.out_dir;
    io::write_file_atomic(out_dir / "folds.json", data::fold_plan_to_json(plan));

    json report;
    report["config"] = json::parse(to_json(config));
    report["classes"] = classes;
    report["folds"] = json::array();
    std::vector<double> accuracies;
    for (std::size_t fold : folds) {
        std::vector<data::Sample> train;
        std::vector<data::Sample> test;
        for (const auto& s : samples) (plan.fold_of(s.id) == fold ? test : train).push_back(s);
        const auto result = train_fold(config, classes, train, test, fold);

        const fs::path ckpt = out_dir / ("fold_" + std::to_string(fold) + ".ckpt");
        save_checkpoint(ckpt, result.checkpoint);

        json fj = fold_json(fold, result.test);
        fj["n_train"] = train.size();
        fj["final_train_loss"] = result.history.back().loss;
        fj["checkpoint"] = ckpt.filename().string();
        json fold_report = {{"config", report["config"]}, {"classes", classes}, {"folds", json::array({fj})},
                            {"mean_accuracy", result.test.accuracy()}, {"tta", false}};
        io::write_file_atomic(out_dir / ("metrics_fold_" + std::to_string(fold) + ".json"), report_text(fold_report));

        report["folds"].push_back(fj);
        accuracies.push_back(result.test.accuracy());
        out << "fold " << fold << ": accuracy " << result.test.accuracy() << " (" << result.test.total()
            << " test, " << train.size() << " train)\n";
    }
    double mean = 0.0;
    for (double acc : accuracies) mean += acc;
    mean /= static_cast<double>(accuracies.size());
    report["mean_accuracy"] = mean;
    report["tta"] = false;
    if (a.all_folds) {
        io::write_file_atomic(out_dir / "metrics.json", report_text(report));
        out << "mean accuracy over " << accuracies.size() << " folds: " << mean << "\n";
    }
    return kOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::optional<std::size_t> fold;
    bool tta = false;
    std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const RunConfig& config = ck.config;
    const std::string manifest = a.manifest.empty() ? config.data.manifest : a.manifest;
    const auto ds = prepare_dataset(config.data, manifest);
    require_same_classes(ck.classes, ds.labeled.classes);

    std::vector<data::LabeledEntry> chosen;
    if (a.fold) {
        const auto plan = resolve_plan(config, ds.labeled, err);
        chosen = data::fold_split(ds.labeled.entries, plan, *a.fold).second;
    } else {
        chosen = ds.labeled.entries;
    }
    const auto samples = data::load_samples(chosen, ds.feature_dir);
    auto model = restore_model(ck);
    const Metrics m = evaluate(*model, samples, a.tta, config.train.tta_crops, config.train.crop_frames);

    json fj = fold_json(a.fold.value_or(0), m);
    if (!a.fold) fj.erase("fold");
    json report = {{"config", json::parse(to_json(config))},
                   {"classes", ck.classes},
                   {"folds", json::array({fj})},
                   {"mean_accuracy", m.accuracy()},
                   {"tta", a.tta}};
    if (a.out.empty()) {
        out << report_text(report);
    } else {
        io::write_file_atomic(a.out, report_text(report));
        out << "accuracy " << m.accuracy() << " on " << m.total() << " entries\n";
    }
    return kOk;
}

struct InspectArgs {
    std::string checkpoint;
    std::string config;
    std::string compare;
};

ModelConfig inspect_model_config(const std::string& path, std::ostream& out) {
    ModelConfig m = load_run_config(path).model;
    if (m.n_classes == 0) {
        m.n_classes = 10;
        out << "(n_classes not set in " << path << "; showing 10)\n";
    }
    return m;
}

void print_layer_table(EcapaModel& model, std::ostream& out) {
    const auto rows = model.layer_table();
    std::size_t w0 = 5;
    std::size_t w1 = 9;
    std::size_t w2 = 6;
    for (const auto& r : rows) {
        w0 = std::max(w0, r.layer.size());
        w1 = std::max(w1, r.structure.size());
        w2 = std::max(w2, r.output.size());
    }
    out << std::left << std::setw(static_cast<int>(w0 + 2)) << "Layer" << std::setw(static_cast<int>(w1 + 2))
        << "Structure" << std::setw(static_cast<int>(w2 + 2)) << "Output" << std::right << "Params\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(w0 + 2)) << r.layer << std::setw(static_cast<int>(w1 + 2))
            << r.structure << std::setw(static_cast<int>(w2 + 2)) << r.output << std::right << r.params << "\n";
    }
    out << "Total parameters: " << model.param_count() << "\n";
}

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream&) {
    if (a.checkpoint.empty() == a.config.empty()) {
        throw ConfigError("inspect: give exactly one of --checkpoint or --config");
    }
    std::unique_ptr<EcapaModel> model;
    if (!a.checkpoint.empty()) {
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        model = restore_model(ck);
        out << "classes:";
        for (const auto& c : ck.classes) out << " " << c;
        out << "\n";
    } else {
        model = std::make_unique<EcapaModel>(inspect_model_config(a.config, out), 0);
    }
    print_layer_table(*model, out);
    if (!a.compare.empty()) {
        EcapaModel other(inspect_model_config(a.compare, out), 0);
        const double ratio =
            static_cast<double>(model->param_count()) / static_cast<double>(other.param_count());
        out << "Compared model parameters: " << other.param_count() << "\n";
        out << "Parameter ratio: " << std::setprecision(6) << ratio << "\n";
    }
    return kOk;
}

struct PredictArgs {
    std::string checkpoint;
    std::string wav;
    std::string features;
    std::size_t top_k = 5;
    bool tta = false;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream&) {
    if (a.wav.empty() == a.features.empty()) {
        throw ConfigError("predict: give exactly one of --wav or --features");
    }
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    auto model = restore_model(ck);
    const Tensor mel = a.wav.empty() ? data::read_features(a.features)
                                     : features::extract(features::load_wav(a.wav)).values;
    if (mel.dim(0) != ck.config.model.n_mels) {
        throw FormatError("predict: input has " + std::to_string(mel.dim(0)) + " mel bins, model expects " +
                          std::to_string(ck.config.model.n_mels));
    }
    const auto& tc = ck.config.train;
    const auto probs = a.tta ? tta_predict(*model, mel, tc.tta_crops, tc.crop_frames)
                             : predict_centered(*model, mel, tc.crop_frames);
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return probs[i] > probs[j]; });
    const std::size_t k = std::min(a.top_k, order.size());
    char line[64];
    for (std::size_t i = 0; i < k; ++i) {
        std::snprintf(line, sizeof line, "%.9f", probs[order[i]]);
        out << ck.classes[order[i]] << "\t" << line << "\n";
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Music genre classification with a channel-separated ECAPA-TDNN", "ecapa-mgc"};
    app.require_subcommand(1);

    ExtractArgs extract;
    auto* ex = app.add_subcommand("extract", "Compute log-mel feature archives from WAV files");
    ex->add_option("--audio-dir", extract.audio_dir, "Directory holding the WAV files")->required();
    ex->add_option("--manifest", extract.manifest, "Input manifest (id, label, optional audio_path)")->required();
    ex->add_option("--out-dir", extract.out_dir, "Output directory for archives and manifest.jsonl")->required();

    FoldsArgs folds;
    auto* fo = app.add_subcommand("folds", "Write a stratified k-fold plan");
    fo->add_option("--manifest", folds.manifest, "Feature manifest")->required();
    fo->add_option("--k", folds.k, "Number of folds")->capture_default_str();
    fo->add_option("--seed", folds.seed, "Shuffle seed")->capture_default_str();
    fo->add_option("--config", folds.config, "Run config supplying label remaps and exclusions");
    fo->add_option("--out", folds.out, "Output fold plan file")->required();

    TrainArgs train;
    auto* tr = app.add_subcommand("train", "Train one fold or all folds");
    tr->add_option("--config", train.config, "Run config")->required();
    tr->add_option("--fold", train.fold, "Fold to hold out");
    tr->add_flag("--all-folds", train.all_folds, "Train every fold and report the mean accuracy");
    tr->add_option("--out-dir", train.out_dir, "Directory for checkpoints and reports")->capture_default_str();

    EvalArgs eval;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    ev->add_option("--manifest", eval.manifest, "Feature manifest (default: the checkpoint's)");
    ev->add_option("--fold", eval.fold, "Evaluate only this fold's test split");
    ev->add_flag("--tta", eval.tta, "Average predictions over evenly spaced crops");
    ev->add_option("--out", eval.out, "Write the report here instead of stdout");

    InspectArgs inspect;
    auto* in = app.add_subcommand("inspect", "Print the layer table and parameter counts");
    in->add_option("--checkpoint", inspect.checkpoint, "Checkpoint file");
    in->add_option("--config", inspect.config, "Run config");
    in->add_option("--compare", inspect.compare, "Second run config; prints the parameter ratio");

    PredictArgs predict;
    auto* pr = app.add_subcommand("predict", "Top-k genre probabilities for one clip");
    pr->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
    pr->add_option("--wav", predict.wav, "WAV input");
    pr->add_option("--features", predict.features, "Feature archive input");
    pr->add_option("--top-k", predict.top_k, "Number of labels to print")->capture_default_str();
    pr->add_flag("--tta", predict.tta, "Average over evenly spaced crops");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (ex->parsed()) return cmd_extract(extract, out, err);
        if (fo->parsed()) return cmd_folds(folds, out, err);
        if (tr->parsed()) return cmd_train(train, out, err);
        if (ev->parsed()) return cmd_eval(eval, out, err);
        if (in->parsed()) return cmd_inspect(inspect, out, err);
        if (pr->parsed()) return cmd_predict(predict, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kConfigError;
}

}  // namespace mgc::cli
