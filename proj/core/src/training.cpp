// SPDX-License-Identifier: Apache-2.0
#include "mgc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_map>

#include "mgc/errors.hpp"

namespace mgc {

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) {
        throw ShapeError("cross_entropy expects [B, N] logits, got " + shape_to_string(z.shape()));
    }
    const std::size_t batch = z.dim(0);
    const std::size_t n = z.dim(1);
    if (labels.size() != batch) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    }
    for (std::size_t label : labels) {
        if (label >= n) {
            throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                             std::to_string(n) + " classes");
        }
    }

    // Softmax rows are kept for the backward rule.
    Tensor probs({batch, n});
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        double peak = z.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, z.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(z.at(i, j) - peak);
        const double lse = peak + std::log(sum);
        for (std::size_t j = 0; j < n; ++j) probs.at(i, j) = std::exp(z.at(i, j) - lse);
        total += lse - z.at(i, labels[i]);
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    std::vector<std::size_t> targets(labels.begin(), labels.end());

    return logits.tape()->record(
        "cross_entropy", {logits}, Tensor({1}, total * inv_batch),
        [probs = std::move(probs), targets = std::move(targets), inv_batch, n](const BackwardArgs& args) {
            Tensor* g = args.grads[0];
            if (!g) return;
            const double scale = args.grad_output[0] * inv_batch;
            for (std::size_t i = 0; i < targets.size(); ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double onehot = j == targets[i] ? 1.0 : 0.0;
                    g->at(i, j) += scale * (probs.at(i, j) - onehot);
                }
            }
        });
}

void adam_step(std::span<const ParamGrad> params, AdamState& state, double lr) {
    for (const auto& p : params) {
        if (p.grad->shape() != p.value->shape()) {
            throw ShapeError("adam_step: gradient of '" + p.name + "' has shape " +
                             shape_to_string(p.grad->shape()) + ", parameter " + shape_to_string(p.value->shape()));
        }
        for (double g : p.grad->data()) {
            if (std::isnan(g)) {
                throw DomainError("adam_step: NaN gradient in parameter '" + p.name + "'");
            }
        }
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (const auto& p : params) {
        auto [mit, m_new] = state.m.try_emplace(p.name, p.value->shape());
        auto [vit, v_new] = state.v.try_emplace(p.name, p.value->shape());
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        auto theta = p.value->data();
        auto grad = p.grad->data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + state.weight_decay * theta[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

double cosine_lr(double epoch, double lr0, double lr_min, double t_max) {
    if (epoch >= t_max) return lr_min;
    if (epoch <= 0.0) return lr0;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * epoch / t_max));
}

std::size_t Metrics::total() const {
    std::size_t n = 0;
    for (const auto& row : confusion)
        for (std::size_t c : row) n += c;
    return n;
}

double Metrics::accuracy() const {
    const std::size_t n = total();
    if (n == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < confusion.size(); ++i) hit += confusion[i][i];
    return static_cast<double>(hit) / static_cast<double>(n);
}

double Metrics::balanced_accuracy() const {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t i = 0; i < confusion.size(); ++i) {
        std::size_t row = 0;
        for (std::size_t c : confusion[i]) row += c;
        if (row == 0) continue;
        sum += static_cast<double>(confusion[i][i]) / static_cast<double>(row);
        ++present;
    }
    return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

Metrics confusion_metrics(std::size_t n_classes, std::span<const std::size_t> truth,
                          std::span<const std::size_t> predicted) {
    if (truth.size() != predicted.size()) {
        throw ShapeError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
    }
    Metrics m;
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n_classes || predicted[i] >= n_classes) {
            throw IndexError("confusion: class id out of range for " + std::to_string(n_classes) + " classes");
        }
        ++m.confusion[truth[i]][predicted[i]];
    }
    return m;
}

std::vector<std::size_t> tta_crop_starts(std::size_t steps, std::size_t frames, std::size_t n_crops) {
    if (n_crops == 0) {
        throw ContractError("tta: crop count must be at least 1");
    }
    if (n_crops == 1) return {data::centered_start(steps, frames)};
    const std::size_t span = steps > frames ? steps - frames : 0;
    std::vector<std::size_t> starts(n_crops);
    for (std::size_t i = 0; i < n_crops; ++i) starts[i] = i * span / (n_crops - 1);
    return starts;
}

namespace {

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
    std::vector<std::vector<double>> out(logits.dim(0), std::vector<double>(logits.dim(1)));
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        double peak = logits.at(i, 0);
        for (std::size_t j = 1; j < logits.dim(1); ++j) peak = std::max(peak, logits.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.dim(1); ++j) sum += (out[i][j] = std::exp(logits.at(i, j) - peak));
        for (double& p : out[i]) p /= sum;
    }
    return out;
}

std::vector<double> predict_at(EcapaModel& model, const Tensor& mel, std::span<const std::size_t> starts,
                               std::size_t frames) {
    std::vector<Tensor> crops;
    for (std::size_t s : starts) {
        Tensor crop = data::crop_at(mel, s, frames);
        data::normalize_per_bin(crop);
        crops.push_back(std::move(crop));
    }
    Graph graph(Mode::eval, false);
    Var logits = model.forward(graph, graph.input(data::stack(crops)));
    auto rows = softmax_rows(logits.value());
    std::vector<double> mean(rows.front().size(), 0.0);
    for (const auto& row : rows)
        for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j];
    for (double& p : mean) p /= static_cast<double>(rows.size());
    return mean;
}

std::size_t argmax(const std::vector<double>& p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace

std::vector<double> tta_predict(EcapaModel& model, const Tensor& mel, std::size_t n_crops, std::size_t frames) {
    const auto starts = tta_crop_starts(mel.dim(1), frames, n_crops);
    return predict_at(model, mel, starts, frames);
}

std::vector<double> predict_centered(EcapaModel& model, const Tensor& mel, std::size_t frames) {
    const std::size_t start = data::centered_start(mel.dim(1), frames);
    return predict_at(model, mel, std::span<const std::size_t>(&start, 1), frames);
}

Metrics evaluate(EcapaModel& model, std::span<const data::Sample> samples, bool tta, std::size_t tta_crops,
                 std::size_t frames) {
    std::vector<std::size_t> truth;
    std::vector<std::size_t> predicted;
    for (const auto& s : samples) {
        const auto p = tta ? tta_predict(model, s.mel, tta_crops, frames) : predict_centered(model, s.mel, frames);
        truth.push_back(s.label);
        predicted.push_back(argmax(p));
    }
    return confusion_metrics(model.config().n_classes, truth, predicted);
}

void require_same_classes(const std::vector<std::string>& model_classes,
                          const std::vector<std::string>& data_classes) {
    if (model_classes == data_classes) return;
    std::set<std::string> a(model_classes.begin(), model_classes.end());
    std::set<std::string> b(data_classes.begin(), data_classes.end());
    std::string only_model;
    std::string only_data;
    for (const auto& l : a)
        if (!b.count(l)) only_model += (only_model.empty() ? "" : ", ") + l;
    for (const auto& l : b)
        if (!a.count(l)) only_data += (only_data.empty() ? "" : ", ") + l;
    std::string msg = "class mismatch between model and data";
    if (!only_model.empty()) msg += "; only in model: " + only_model;
    if (!only_data.empty()) msg += "; only in data: " + only_data;
    if (only_model.empty() && only_data.empty()) msg += "; same labels in a different order";
    throw DataError(msg);
}

namespace {

/// Forward + backward + Adam on one batch. Returns the batch loss.
double train_step(EcapaModel& model, const data::Batch& batch, AdamState& adam, double lr,
                  const std::unordered_map<const Tensor*, std::string>& names) {
    Graph graph(Mode::train);
    Var logits = model.forward(graph, graph.input(batch.inputs));
    Var loss = cross_entropy(logits, batch.labels);
    const Gradients grads = graph.tape().backward(loss);
    std::vector<ParamGrad> params;
    params.reserve(graph.bindings().size());
    for (const auto& b : graph.bindings()) {
        params.push_back({names.at(b.parameter), b.parameter, &grads.of(b.var)});
    }
    adam_step(params, adam, lr);
    return loss.value()[0];
}

/// Mean train-mode loss over `batches` on a throwaway copy of the model.
double probe_loss(const EcapaModel& model, const std::vector<data::Batch>& batches) {
    EcapaModel copy = model;
    double sum = 0.0;
    for (const auto& b : batches) {
        Graph graph(Mode::train, false);
        Var logits = copy.forward(graph, graph.input(b.inputs));
        sum += cross_entropy(logits, b.labels).value()[0];
    }
    return batches.empty() ? 0.0 : sum / static_cast<double>(batches.size());
}

}  // namespace

FoldResult train_fold(const RunConfig& config, const std::vector<std::string>& classes,
                      std::span<const data::Sample> train, std::span<const data::Sample> test, std::size_t fold) {
    if (train.empty()) {
        throw ConfigError("fold " + std::to_string(fold) + ": empty training split");
    }
    config.validate();
    RunConfig resolved = config;
    resolved.model.n_classes = classes.size();
    const auto& tc = resolved.train;
    const std::uint64_t fold_seed = tc.seed + fold;

    EcapaModel model(resolved.model, fold_seed);
    std::unordered_map<const Tensor*, std::string> names;
    model.visit([&](const std::string& name, Tensor& t, bool) { names.emplace(&t, name); });

    AdamState adam;
    adam.weight_decay = tc.weight_decay;
    Pcg64 rng(fold_seed, 0x5851f42d4c957f2dULL);

    FoldResult result;
    const std::size_t items = train.size() * tc.crops_per_entry;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = cosine_lr(static_cast<double>(epoch), tc.lr, tc.lr_min, static_cast<double>(tc.epochs));
        std::vector<data::Batch> batches;
        for (auto& order : data::epoch_batches(items, tc.batch_size, rng)) {
            for (auto& i : order) i %= train.size();
            batches.push_back(data::make_batch(train, order, tc.crop_frames, rng));
        }
        if (epoch == 0) result.initial_loss = probe_loss(model, batches);

        double sum = 0.0;
        for (const auto& batch : batches) sum += train_step(model, batch, adam, lr, names);
        result.history.push_back({epoch + 1, lr, sum / static_cast<double>(batches.size())});

        if (epoch == 0) result.first_epoch_loss = probe_loss(model, batches);
    }

    result.checkpoint = make_checkpoint(resolved, classes, model);
    load_tensors(result.checkpoint, model);
    if (!test.empty()) {
        result.test = evaluate(model, test, false, tc.tta_crops, tc.crop_frames);
    } else {
        result.test.confusion.assign(classes.size(), std::vector<std::size_t>(classes.size(), 0));
    }
    return result;
}

}  // namespace mgc
