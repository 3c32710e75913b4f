// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "mgc/checkpoint.hpp"
#include "mgc/errors.hpp"
#include "mgc/training.hpp"
#include "support.hpp"

namespace mgc {
namespace {

using testing::reduced_config;

double ce_value(const Tensor& logits, std::vector<std::size_t> labels) {
    Graph g(Mode::eval, false);
    return cross_entropy(g.input(logits), labels).value()[0];
}

TEST(CrossEntropy, ClosedFormValues) {
    EXPECT_NEAR(ce_value(Tensor({1, 10}), {3}), std::log(10.0), 1e-9);
    EXPECT_NEAR(ce_value(Tensor({1, 2}, {0.0, std::log(3.0)}), {0}), std::log(4.0), 1e-12);
    Tensor hot({1, 5});
    hot.at(0, 2) = 1000.0;
    EXPECT_NEAR(ce_value(hot, {2}), 0.0, 1e-12);
    EXPECT_NEAR(ce_value(hot, {0}), 1000.0, 1e-9);
    // Batch loss is the mean of item losses.
    Tensor two({2, 2}, {0.0, std::log(3.0), 0.0, 0.0});
    EXPECT_NEAR(ce_value(two, {0, 1}), (std::log(4.0) + std::log(2.0)) / 2.0, 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
    Tensor logits = Tensor::uniform({3, 6}, 1, -4, 4);
    std::vector<std::size_t> labels{5, 0, 2};
    Graph g(Mode::train);
    Var z = g.param(logits);
    Gradients grads = g.tape().backward(cross_entropy(z, labels));
    const Tensor& d = grads.of(z);
    for (std::size_t i = 0; i < 3; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < 6; ++j) denom += std::exp(logits.at(i, j));
        for (std::size_t j = 0; j < 6; ++j) {
            const double expect = (std::exp(logits.at(i, j)) / denom - (j == labels[i] ? 1.0 : 0.0)) / 3.0;
            EXPECT_NEAR(d.at(i, j), expect, 1e-10);
        }
    }
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
    Graph g(Mode::eval);
    EXPECT_THROW(cross_entropy(g.input(Tensor({1, 4})), std::vector<std::size_t>{4}), IndexError);
    EXPECT_THROW(cross_entropy(g.input(Tensor({2, 4})), std::vector<std::size_t>{1}), ShapeError);
}

TEST(Adam, HandStep) {
    Tensor theta = Tensor::from({0.0});
    Tensor grad = Tensor::from({1.0});
    AdamState state;
    const ParamGrad p[] = {{"theta", &theta, &grad}};
    adam_step(p, state, 0.1);
    EXPECT_NEAR(theta[0], -0.1, 1e-9);
    // m_hat = v_hat = 1, so the step is lr / (1 + eps).
    EXPECT_NEAR(theta[0], -0.1 / (1.0 + 1e-8), 1e-16);
    EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersButAdvancesStep) {
    Tensor theta = Tensor::from({0.3, -2.0});
    Tensor grad({2});
    AdamState state;
    const ParamGrad p[] = {{"w", &theta, &grad}};
    adam_step(p, state, 0.1);
    adam_step(p, state, 0.1);
    EXPECT_EQ(theta[0], 0.3);
    EXPECT_EQ(theta[1], -2.0);
    EXPECT_EQ(state.t, 2u);
}

TEST(Adam, IdenticalParametersUpdateIdentically) {
    Tensor a = Tensor::from({0.5, 1.5}), b = a;
    Tensor g = Tensor::from({0.2, -0.7});
    AdamState state;
    const ParamGrad p[] = {{"a", &a, &g}, {"b", &b, &g}};
    for (int i = 0; i < 3; ++i) adam_step(p, state, 0.01);
    EXPECT_TRUE(a == b);
}

TEST(Adam, NanGradientAbortsBeforeAnyUpdate) {
    Tensor a = Tensor::from({1.0}), b = Tensor::from({2.0});
    Tensor ga = Tensor::from({0.5});
    Tensor gb = Tensor::from({std::numeric_limits<double>::quiet_NaN()});
    AdamState state;
    const ParamGrad p[] = {{"first", &a, &ga}, {"broken.weight", &b, &gb}};
    try {
        adam_step(p, state, 0.1);
        FAIL() << "no error";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("broken.weight"), std::string::npos) << e.what();
    }
    EXPECT_EQ(a[0], 1.0);
    EXPECT_EQ(b[0], 2.0);
    EXPECT_EQ(state.t, 0u);
}

TEST(Adam, SingleStepDecreasesConvexQuadratic) {
    // f(x) = sum_i c_i (x_i - 1)^2
    Tensor x = Tensor::uniform({8}, 2, -3, 3);
    Tensor c = Tensor::uniform({8}, 3, 0.1, 4.0);
    auto f = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < 8; ++i) s += c[i] * (x[i] - 1.0) * (x[i] - 1.0);
        return s;
    };
    for (double lr : {1e-2, 1e-3, 1e-4}) {
        Tensor g({8});
        for (std::size_t i = 0; i < 8; ++i) g[i] = 2.0 * c[i] * (x[i] - 1.0);
        const double before = f();
        AdamState state;
        const ParamGrad p[] = {{"x", &x, &g}};
        adam_step(p, state, lr);
        EXPECT_LT(f(), before) << lr;
    }
}

TEST(Adam, WeightDecayAddsL2Term) {
    // g_eff = g + wd * theta = 0 + 0.5 * 2 = 1 -> first step moves by lr / (1 + eps).
    Tensor theta = Tensor::from({2.0});
    Tensor grad({1});
    AdamState state;
    state.weight_decay = 0.5;
    const ParamGrad p[] = {{"w", &theta, &grad}};
    adam_step(p, state, 0.1);
    EXPECT_NEAR(theta[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Schedule, EndpointsMidpointAndMonotone) {
    EXPECT_NEAR(cosine_lr(0), 1e-3, 1e-12);
    EXPECT_NEAR(cosine_lr(80), 1e-6, 1e-12);
    EXPECT_NEAR(cosine_lr(40), 5.005e-4, 1e-12);
    EXPECT_EQ(cosine_lr(120), 1e-6);
    double prev = cosine_lr(0);
    for (int i = 1; i <= 800; ++i) {
        const double lr = cosine_lr(i / 10.0);
        EXPECT_LE(lr, prev);
        EXPECT_GE(lr, 1e-6);
        prev = lr;
    }
}

TEST(MetricsTest, PerfectAndChance) {
    std::vector<std::size_t> truth(30);
    for (std::size_t i = 0; i < 30; ++i) truth[i] = i % 3;
    Metrics perfect = confusion_metrics(3, truth, truth);
    EXPECT_EQ(perfect.accuracy(), 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(perfect.confusion[i][j], i == j ? 10u : 0u);

    std::vector<std::size_t> balanced(100), constant(100, 4);
    for (std::size_t i = 0; i < 100; ++i) balanced[i] = i % 10;
    EXPECT_NEAR(confusion_metrics(10, balanced, constant).accuracy(), 0.1, 1e-15);
    EXPECT_NEAR(confusion_metrics(10, balanced, constant).balanced_accuracy(), 0.1, 1e-15);
}

TEST(MetricsTest, ImbalancedAccuracyDiffersFromMeanRecall) {
    // 8 of class 0 (all right), 2 of class 1 (one right).
    std::vector<std::size_t> truth{0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
    std::vector<std::size_t> pred{0, 0, 0, 0, 0, 0, 0, 0, 1, 0};
    Metrics m = confusion_metrics(2, truth, pred);
    EXPECT_EQ(m.confusion[0][0], 8u);
    EXPECT_EQ(m.confusion[1][0], 1u);
    EXPECT_EQ(m.confusion[1][1], 1u);
    EXPECT_NEAR(m.accuracy(), 0.9, 1e-15);
    EXPECT_NEAR(m.balanced_accuracy(), 0.75, 1e-15);
}

TEST(Tta, CropStarts) {
    EXPECT_EQ(tta_crop_starts(300, 202, 1), (std::vector<std::size_t>{49}));
    auto s = tta_crop_starts(300, 202, 10);
    ASSERT_EQ(s.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s[i], i * 98 / 9);
    EXPECT_EQ(s.front(), 0u);
    EXPECT_EQ(s.back(), 98u);
    EXPECT_EQ(tta_crop_starts(202, 202, 4), (std::vector<std::size_t>{0, 0, 0, 0}));
    EXPECT_THROW(tta_crop_starts(300, 202, 0), ContractError);
}

TEST(Tta, ProbabilitiesAndSingleCropAgreement) {
    EcapaModel model(reduced_config(4), 5);
    Tensor exact = Tensor::uniform({48, 32}, 6, -1, 1);
    Tensor longer = Tensor::uniform({48, 57}, 7, -1, 1);
    auto single = predict_centered(model, exact, 32);
    auto many = tta_predict(model, exact, 10, 32);
    ASSERT_EQ(many.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(many[i], single[i], 1e-12);
    auto spread = tta_predict(model, longer, 10, 32);
    EXPECT_NEAR(std::accumulate(spread.begin(), spread.end(), 0.0), 1.0, 1e-9);
    auto one = tta_predict(model, longer, 1, 32);
    auto centered = predict_centered(model, longer, 32);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(one[i], centered[i]);
}

TEST(Evaluate, ClassMismatchListsLabels) {
    try {
        require_same_classes({"blues", "jazz", "rock"}, {"blues", "metal", "rock"});
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("jazz"), std::string::npos) << msg;
        EXPECT_NE(msg.find("metal"), std::string::npos) << msg;
    }
    EXPECT_NO_THROW(require_same_classes({"a", "b"}, {"a", "b"}));
}

RunConfig small_run(std::size_t n_classes) {
    RunConfig rc;
    rc.model = reduced_config(n_classes);
    rc.train.epochs = 3;
    rc.train.batch_size = 4;
    rc.train.crop_frames = 24;
    rc.train.seed = 11;
    return rc;
}

std::vector<std::string> class_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("genre_" + std::to_string(i));
    return out;
}

TEST(CheckpointTest, RoundTripPreservesForwardWithinStoragePrecision) {
    RunConfig rc = small_run(4);
    EcapaModel model(rc.model, 12);
    Tensor mel = Tensor::uniform({2, 48, 24}, 13, -1, 1);
    Graph g0(Mode::eval, false);
    Tensor before = model.forward(g0, g0.input(mel)).value();

    testing::TempDir dir("ckpt");
    save_checkpoint(dir / "m.ckpt", make_checkpoint(rc, class_names(4), model));
    Checkpoint back = load_checkpoint(dir / "m.ckpt");
    auto restored = restore_model(back);
    Graph g1(Mode::eval, false);
    Tensor after = restored->forward(g1, g1.input(mel)).value();
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], before[i], 1e-5);
    EXPECT_EQ(back.classes, class_names(4));
    EXPECT_EQ(back.config.model, rc.model);
    EXPECT_EQ(back.config.train.seed, rc.train.seed);

    // Storage rounding is idempotent: saving the restored model reproduces the file.
    save_checkpoint(dir / "again.ckpt", make_checkpoint(back.config, back.classes, *restored));
    EXPECT_EQ(testing::read_text(dir / "m.ckpt"), testing::read_text(dir / "again.ckpt"));
}

TEST(CheckpointTest, LargeFsaConfigSerializesFieldForField) {
    RunConfig rc;
    rc.model.stop_channels = 512;
    rc.model.cont_channels = 1024;
    rc.model.fsa.enabled = true;
    rc.train.batch_size = 64;
    rc.train.tta_crops = 10;
    rc.data.label_remaps = {{"GN9000", "GN3000"}};
    EcapaModel model(rc.model, 0);
    Checkpoint back = decode_checkpoint(encode_checkpoint(make_checkpoint(rc, class_names(10), model)));
    EXPECT_EQ(back.config.model, rc.model);
    EXPECT_EQ(to_json(back.config), to_json(rc));
    EXPECT_EQ(back.tensors.size(), named_tensors(model).size());
}

TEST(CheckpointTest, RejectsTamperingAndMalformedFiles) {
    RunConfig rc = small_run(3);
    EcapaModel model(rc.model, 14);
    const std::string bytes = encode_checkpoint(make_checkpoint(rc, class_names(3), model));
    std::string tampered = bytes;
    tampered[bytes.size() / 2] ^= 0x01;
    try {
        decode_checkpoint(tampered);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
    }
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), FormatError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, 6)), FormatError);
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
}

TEST(CheckpointTest, ShapeMismatchAgainstConfigIsRejected) {
    RunConfig rc = small_run(3);
    EcapaModel model(rc.model, 15);
    Checkpoint ck = make_checkpoint(rc, class_names(3), model);
    ck.tensors[0].second = Tensor({1});
    EXPECT_THROW(restore_model(ck), FormatError);
    Checkpoint missing = make_checkpoint(rc, class_names(3), model);
    missing.tensors.pop_back();
    EXPECT_THROW(restore_model(missing), FormatError);
}

TEST(TrainFold, RepeatedRunsAreIdentical) {
    auto samples = testing::separable_set(3, 3, 30, 16);
    RunConfig rc = small_run(3);
    FoldResult a = train_fold(rc, class_names(3), samples, samples, 1);
    FoldResult b = train_fold(rc, class_names(3), samples, samples, 1);
    EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
    EXPECT_EQ(a.test.confusion, b.test.confusion);
    ASSERT_EQ(a.history.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    FoldResult other = train_fold(rc, class_names(3), samples, samples, 2);
    EXPECT_NE(encode_checkpoint(a.checkpoint), encode_checkpoint(other.checkpoint));
}

TEST(TrainFold, ScheduleStepsPerEpoch) {
    auto samples = testing::separable_set(2, 2, 30, 17);
    RunConfig rc = small_run(2);
    rc.train.epochs = 4;
    FoldResult r = train_fold(rc, class_names(2), samples, {}, 0);
    ASSERT_EQ(r.history.size(), 4u);
    for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(r.history[e].lr, cosine_lr(e, 1e-3, 1e-6, 4));
}

TEST(TrainFold, SavedCheckpointReproducesTestMetrics) {
    auto train = testing::separable_set(3, 4, 30, 18);
    auto test = testing::separable_set(3, 2, 30, 19);
    RunConfig rc = small_run(3);
    FoldResult r = train_fold(rc, class_names(3), train, test, 0);
    auto model = restore_model(decode_checkpoint(encode_checkpoint(r.checkpoint)));
    EXPECT_EQ(evaluate(*model, test, false, 10, rc.train.crop_frames).confusion, r.test.confusion);
}

TEST(TrainFold, LossDropsAfterFirstEpochAndSmallSetIsLearned) {
    auto samples = testing::separable_set(10, 4, 64, 1);
    RunConfig rc;
    rc.model = reduced_config(10);
    rc.train.epochs = 40;
    rc.train.batch_size = 8;
    rc.train.crop_frames = 48;
    rc.train.seed = 3;
    FoldResult r = train_fold(rc, class_names(10), samples, samples, 0);
    EXPECT_LT(r.first_epoch_loss, r.initial_loss);
    EXPECT_GE(r.test.accuracy(), 0.95);
}

TEST(TrainFold, EmptyTrainingSplitIsAConfigError) {
    EXPECT_THROW(train_fold(small_run(2), class_names(2), {}, {}, 0), ConfigError);
}

}  // namespace
}  // namespace mgc
