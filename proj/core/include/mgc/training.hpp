// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgc/checkpoint.hpp"
#include "mgc/config.hpp"
#include "mgc/data.hpp"
#include "mgc/model.hpp"
#include "mgc/tensor.hpp"

namespace mgc {

/// Mean over the batch of -log softmax(logits[i])[labels[i]], computed with
/// log-sum-exp. logits: [B, N]. The gradient is (softmax - onehot) / B.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2 term added to the gradient
    std::size_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

struct ParamGrad {
    std::string name;
    Tensor* value;
    const Tensor* grad;
};

/// One bias-corrected Adam update of every parameter; t advances by one.
/// A NaN gradient aborts the step (before any parameter moves) with a
/// DomainError naming the parameter.
void adam_step(std::span<const ParamGrad> params, AdamState& state, double lr);

/// lr_min + (lr0 - lr_min)(1 + cos(pi t / t_max)) / 2, and lr_min for t > t_max.
double cosine_lr(double epoch, double lr0 = 1e-3, double lr_min = 1e-6, double t_max = 80.0);

struct Metrics {
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

    std::size_t total() const;
    /// trace / total.
    double accuracy() const;
    /// Mean of per-class recalls over classes that occur.
    double balanced_accuracy() const;
};

Metrics confusion_metrics(std::size_t n_classes, std::span<const std::size_t> truth,
                          std::span<const std::size_t> predicted);

/// Crop starts: n = 1 gives max(0, floor((T - frames) / 2)); n > 1 spreads
/// starts evenly as floor(i * L / (n - 1)) with L = max(0, T - frames).
std::vector<std::size_t> tta_crop_starts(std::size_t steps, std::size_t frames, std::size_t n_crops);

/// Mean softmax over `n_crops` normalized crops of mel [n_mels, T].
std::vector<double> tta_predict(EcapaModel& model, const Tensor& mel, std::size_t n_crops = 10,
                                std::size_t frames = data::kCropFrames);

/// Softmax of the single centered crop.
std::vector<double> predict_centered(EcapaModel& model, const Tensor& mel, std::size_t frames = data::kCropFrames);

/// Argmax per sample (centered crop, or `tta_crops` crops when tta) into a confusion matrix.
Metrics evaluate(EcapaModel& model, std::span<const data::Sample> samples, bool tta, std::size_t tta_crops = 10,
                 std::size_t frames = data::kCropFrames);

/// Throws DataError listing the labels present in only one of the two lists
/// (or the first differing position when they hold the same set).
void require_same_classes(const std::vector<std::string>& model_classes,
                          const std::vector<std::string>& data_classes);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;  // mean training-batch loss
};

struct FoldResult {
    Checkpoint checkpoint;
    Metrics test;
    std::vector<EpochLog> history;
    /// Train-mode loss on the first epoch's batches, before any update and
    /// after the first epoch (both measured on throwaway model copies).
    double initial_loss = 0.0;
    double first_epoch_loss = 0.0;
};

/// Trains a freshly initialized model on `train` and evaluates it on `test`.
/// Everything random derives from config.train.seed + fold. Parameters are
/// rounded to checkpoint precision before evaluation so that evaluating the
/// saved checkpoint reproduces `test` exactly.
FoldResult train_fold(const RunConfig& config, const std::vector<std::string>& classes,
                      std::span<const data::Sample> train, std::span<const data::Sample> test, std::size_t fold);

}  // namespace mgc
