// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <set>

#include "mgc/data.hpp"
#include "mgc/errors.hpp"
#include "support.hpp"

namespace mgc::data {
namespace {

using testing::TempDir;
using testing::write_text;

std::vector<ManifestEntry> balanced(std::size_t classes, std::size_t per_class) {
    std::vector<ManifestEntry> out;
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::string id = "g" + std::to_string(k) + "_" + std::to_string(i);
            out.push_back({id, id + ".melb", "genre" + std::to_string(k), "", 0});
        }
    }
    return out;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

TEST(Manifest, ParsesInFileOrder) {
    TempDir dir("manifest");
    write_text(dir / "m.jsonl",
               "{\"id\":\"b\",\"feature_path\":\"b.melb\",\"label\":\"rock\"}\n"
               "\n"
               "{\"id\":\"a\",\"feature_path\":\"a.melb\",\"label\":\"jazz\"}\n"
               "{\"id\":\"c\",\"feature_path\":\"c.melb\",\"label\":\"rock\",\"audio_path\":\"c.wav\"}\n");
    auto entries = load_manifest(dir / "m.jsonl");
    ASSERT_EQ(entries.size(), 3u);
    EXPECT_EQ(entries[0].id, "b");
    EXPECT_EQ(entries[1].id, "a");
    EXPECT_EQ(entries[1].line, 3u);
    EXPECT_EQ(entries[2].audio_path, "c.wav");
}

TEST(Manifest, DuplicateIdNamesBothLines) {
    TempDir dir("manifest");
    write_text(dir / "m.jsonl",
               "{\"id\":\"x\",\"feature_path\":\"1\",\"label\":\"a\"}\n"
               "{\"id\":\"y\",\"feature_path\":\"2\",\"label\":\"a\"}\n"
               "{\"id\":\"x\",\"feature_path\":\"3\",\"label\":\"a\"}\n");
    const std::string msg = message_of([&] { load_manifest(dir / "m.jsonl"); });
    EXPECT_NE(msg.find("duplicate id 'x'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lines 1 and 3"), std::string::npos) << msg;
}

TEST(Manifest, MalformedAndIncompleteLinesReportLineNumbers) {
    TempDir dir("manifest");
    write_text(dir / "bad.jsonl", "{\"id\":\"x\",\"feature_path\":\"1\",\"label\":\"a\"}\n{not json\n");
    write_text(dir / "missing.jsonl", "{\"id\":\"x\",\"label\":\"a\"}\n");
    write_text(dir / "type.jsonl", "{\"id\":\"x\",\"feature_path\":\"1\",\"label\":3}\n");
    EXPECT_NE(message_of([&] { load_manifest(dir / "bad.jsonl"); }).find(":2:"), std::string::npos);
    EXPECT_NE(message_of([&] { load_manifest(dir / "missing.jsonl"); }).find("feature_path"), std::string::npos);
    EXPECT_THROW(load_manifest(dir / "type.jsonl"), DataError);
    EXPECT_NO_THROW(load_manifest(dir / "missing.jsonl", false));
    EXPECT_THROW(load_manifest(dir / "nope.jsonl"), DataError);
}

TEST(Manifest, WriteThenLoad) {
    TempDir dir("manifest");
    auto entries = balanced(2, 3);
    entries[1].audio_path = "x.wav";
    write_manifest(dir / "m.jsonl", entries);
    auto back = load_manifest(dir / "m.jsonl");
    ASSERT_EQ(back.size(), entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].id, entries[i].id);
        EXPECT_EQ(back[i].feature_path, entries[i].feature_path);
        EXPECT_EQ(back[i].label, entries[i].label);
        EXPECT_EQ(back[i].audio_path, entries[i].audio_path);
    }
}

TEST(Labels, RemapPrecedesExclusionAndIndexIsLexicographic) {
    std::vector<ManifestEntry> entries{{"1", "f", "GN9000", "", 0},
                                       {"2", "f", "GN1500", "", 0},
                                       {"3", "f", "GN0100", "", 0},
                                       {"4", "f", "GN3000", "", 0},
                                       {"5", "f", "GN2500", "", 0}};
    LabelMap map{{{"GN9000", "GN3000"}}, {"GN1500", "GN2500"}};
    LabeledSet set = apply_label_map(entries, map);
    EXPECT_EQ(set.classes, (std::vector<std::string>{"GN0100", "GN3000"}));
    ASSERT_EQ(set.entries.size(), 3u);
    EXPECT_EQ(set.entries[0].entry.id, "1");
    EXPECT_EQ(set.entries[0].entry.label, "GN3000");
    EXPECT_EQ(set.entries[0].class_id, 1u);
    EXPECT_EQ(set.entries[1].class_id, 0u);
    EXPECT_EQ(set.excluded, (std::map<std::string, std::size_t>{{"GN1500", 1}, {"GN2500", 1}}));
}

TEST(Labels, ThirtyLabelsMinusTwoExclusions) {
    std::vector<ManifestEntry> entries;
    for (int g = 1; g <= 30; ++g) {
        char label[16];
        std::snprintf(label, sizeof label, "GN%02d00", g);
        entries.push_back({std::to_string(g), "f", label, "", 0});
    }
    LabeledSet set = apply_label_map(entries, LabelMap{{}, {"GN1500", "GN2500"}});
    EXPECT_EQ(set.classes.size(), 28u);
    EXPECT_EQ(set.entries.size(), 28u);
}

TEST(Labels, IdentityAndEverythingExcluded) {
    auto entries = balanced(3, 2);
    LabeledSet same = apply_label_map(entries, LabelMap{});
    EXPECT_EQ(same.entries.size(), 6u);
    EXPECT_TRUE(same.excluded.empty());
    LabeledSet none = apply_label_map(entries, LabelMap{{}, {"genre0", "genre1", "genre2"}});
    EXPECT_TRUE(none.entries.empty());
    EXPECT_EQ(none.excluded.size(), 3u);
    EXPECT_EQ(none.excluded.at("genre1"), 2u);
}

TEST(Labels, ClassIdsStableUnderReordering) {
    auto entries = balanced(4, 2);
    auto reversed = entries;
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_EQ(apply_label_map(entries, {}).classes, apply_label_map(reversed, {}).classes);
}

TEST(Labels, UnknownLabelAgainstFixedIndexFails) {
    auto entries = balanced(2, 1);
    EXPECT_THROW(apply_label_map(entries, {}, std::vector<std::string>{"genre0"}), DataError);
}

TEST(Folds, TenByHundredGivesTenPerClassPerFold) {
    LabeledSet set = apply_label_map(balanced(10, 100), {});
    FoldPlan plan = stratified_kfold(set.entries, 10, 123);
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (const auto& e : set.entries) ++counts[{plan.fold_of(e.entry.id), e.class_id}];
    ASSERT_EQ(counts.size(), 100u);
    for (const auto& [key, n] : counts) EXPECT_EQ(n, 10u);
    EXPECT_TRUE(plan.warnings.empty());
}

TEST(Folds, PartitionAndSplit) {
    LabeledSet set = apply_label_map(balanced(3, 7), {});
    FoldPlan plan = stratified_kfold(set.entries, 4, 5);
    std::set<std::string> seen;
    for (std::size_t f = 0; f < 4; ++f) {
        auto [train, test] = fold_split(set.entries, plan, f);
        EXPECT_EQ(train.size() + test.size(), set.entries.size());
        for (const auto& e : test) {
            EXPECT_TRUE(seen.insert(e.entry.id).second) << e.entry.id << " in two folds";
            EXPECT_EQ(plan.fold_of(e.entry.id), f);
        }
        for (const auto& e : train) EXPECT_NE(plan.fold_of(e.entry.id), f);
    }
    EXPECT_EQ(seen.size(), set.entries.size());
}

TEST(Folds, PerClassSizesDifferByAtMostOne) {
    // Uneven classes: 7, 11, 3 entries over 4 folds.
    std::vector<ManifestEntry> entries;
    const std::size_t sizes[] = {7, 11, 3};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < sizes[k]; ++i)
            entries.push_back({"e" + std::to_string(k) + "_" + std::to_string(i), "f", "c" + std::to_string(k), "", 0});
    LabeledSet set = apply_label_map(entries, {});
    FoldPlan plan = stratified_kfold(set.entries, 4, 9);
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<std::size_t> per_fold(4, 0);
        for (const auto& e : set.entries)
            if (e.class_id == k) ++per_fold[plan.fold_of(e.entry.id)];
        auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
        EXPECT_LE(*hi - *lo, 1u) << "class " << k;
    }
    ASSERT_EQ(plan.warnings.size(), 1u);  // class c2 has fewer entries than folds
    EXPECT_NE(plan.warnings[0].find("c2"), std::string::npos) << plan.warnings[0];
}

TEST(Folds, DeterministicAndIndependentOfManifestOrder) {
    auto entries = balanced(5, 13);
    LabeledSet a = apply_label_map(entries, {});
    std::reverse(entries.begin(), entries.end());
    LabeledSet b = apply_label_map(entries, {});
    EXPECT_EQ(stratified_kfold(a.entries, 10, 77).assignment, stratified_kfold(a.entries, 10, 77).assignment);
    EXPECT_EQ(stratified_kfold(a.entries, 10, 77).assignment, stratified_kfold(b.entries, 10, 77).assignment);
    EXPECT_NE(stratified_kfold(a.entries, 10, 77).assignment, stratified_kfold(a.entries, 10, 78).assignment);
}

TEST(Folds, JsonRoundTripAndErrors) {
    LabeledSet set = apply_label_map(balanced(2, 5), {});
    FoldPlan plan = stratified_kfold(set.entries, 3, 1);
    FoldPlan back = fold_plan_from_json(fold_plan_to_json(plan));
    EXPECT_EQ(back.assignment, plan.assignment);
    EXPECT_EQ(back.k, 3u);
    EXPECT_THROW(plan.fold_of("unknown"), DataError);
    EXPECT_THROW(stratified_kfold(set.entries, 1, 0), ConfigError);
}

Tensor ramp(std::size_t bins, std::size_t steps) {
    Tensor t({bins, steps});
    for (std::size_t b = 0; b < bins; ++b)
        for (std::size_t s = 0; s < steps; ++s) t.at(b, s) = static_cast<double>(1000 * b + s);
    return t;
}

TEST(Crops, ExactLengthIsIdentity) {
    Tensor mel = ramp(4, 202);
    Pcg64 rng(1);
    Tensor c = crop_sample(mel, rng);
    EXPECT_TRUE(c == mel);
}

TEST(Crops, LongClipSlicesDeterministically) {
    Tensor mel = ramp(4, 300);
    Pcg64 r1(5), r2(5);
    Tensor a = crop_sample(mel, r1);
    Tensor b = crop_sample(mel, r2);
    EXPECT_TRUE(a == b);
    ASSERT_EQ(a.shape(), (Shape{4, 202}));
    const auto start = static_cast<std::size_t>(a.at(0, 0));
    EXPECT_LE(start, 98u);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t j = 0; j < 202; ++j) EXPECT_EQ(a.at(r, j), mel.at(r, start + j));
}

TEST(Crops, StartsCoverTheWholeRange) {
    Tensor mel = ramp(1, 205);
    Pcg64 rng(6);
    std::set<double> starts;
    for (int i = 0; i < 400; ++i) starts.insert(crop_sample(mel, rng).at(0, 0));
    EXPECT_EQ(starts, (std::set<double>{0, 1, 2, 3}));
}

TEST(Crops, ShortClipWraps) {
    Tensor mel = ramp(3, 100);
    Pcg64 rng(7);
    Tensor c = crop_sample(mel, rng);
    ASSERT_EQ(c.shape(), (Shape{3, 202}));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 202; ++j) EXPECT_EQ(c.at(r, j), mel.at(r, j % 100));
}

TEST(Crops, CenteredStart) {
    EXPECT_EQ(centered_start(300, 202), 49u);
    EXPECT_EQ(centered_start(202, 202), 0u);
    EXPECT_EQ(centered_start(100, 202), 0u);
}

TEST(Batches, ShortFinalBatchKept) {
    Pcg64 rng(8);
    auto batches = epoch_batches(130, 64, rng);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[0].size(), 64u);
    EXPECT_EQ(batches[1].size(), 64u);
    EXPECT_EQ(batches[2].size(), 2u);
    std::vector<std::size_t> all;
    for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 130; ++i) EXPECT_EQ(all[i], i);
    Pcg64 again(8);
    EXPECT_EQ(epoch_batches(130, 64, again), batches);
}

TEST(Batches, LabelsFollowSamplesAndCropsAreNormalized) {
    auto samples = testing::separable_set(3, 2, 40, 11);
    std::vector<std::size_t> idx{5, 0, 3};
    Pcg64 rng(12);
    Batch b = make_batch(samples, idx, 32, rng);
    EXPECT_EQ(b.labels, (std::vector<std::size_t>{samples[5].label, samples[0].label, samples[3].label}));
    ASSERT_EQ(b.inputs.shape(), (Shape{3, 48, 32}));
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t m = 0; m < 48; ++m) {
            double mean = 0.0;
            for (std::size_t t = 0; t < 32; ++t) mean += b.inputs.at(n, m, t);
            EXPECT_NEAR(mean / 32.0, 0.0, 1e-12);
        }
}

TEST(Batches, MissingFeatureFileNamesEntry) {
    TempDir dir("samples");
    LabeledSet set = apply_label_map(balanced(1, 2), {});
    write_features(dir / "g0_0.melb", ramp(48, 5));
    const std::string msg = message_of([&] { load_samples(set.entries, dir.path()); });
    EXPECT_NE(msg.find("g0_1"), std::string::npos) << msg;
}

TEST(FeatureArchive, HeaderAndPayloadSize) {
    const std::string bytes = encode_features(Tensor({48, 202}));
    EXPECT_EQ(bytes.size(), 16u + 38784u);
    EXPECT_EQ(bytes.substr(0, 4), "MELB");
    std::uint32_t fields[3];
    std::memcpy(fields, bytes.data() + 4, 12);
    if constexpr (std::endian::native == std::endian::little) {
        EXPECT_EQ(fields[0], 1u);
        EXPECT_EQ(fields[1], 48u);
        EXPECT_EQ(fields[2], 202u);
    }
}

TEST(FeatureArchive, RoundTripIsLosslessAtFloat32) {
    TempDir dir("melb");
    Tensor mel = Tensor::uniform({48, 61}, 13, -30, 5);
    Tensor f32 = mel;
    for (double& v : f32.data()) v = static_cast<double>(static_cast<float>(v));
    write_features(dir / "a.melb", mel);
    Tensor back = read_features(dir / "a.melb");
    EXPECT_TRUE(back == f32);
    for (std::size_t i = 0; i < mel.size(); ++i) {
        const float x = static_cast<float>(mel[i]);
        EXPECT_LE(std::abs(back[i] - mel[i]),
                  std::abs(std::nextafter(x, std::numeric_limits<float>::infinity()) - x));
    }
    write_features(dir / "b.melb", back);
    EXPECT_EQ(testing::read_text(dir / "a.melb"), testing::read_text(dir / "b.melb"));
}

TEST(FeatureArchive, RejectsCorruptFiles) {
    std::string good = encode_features(Tensor::uniform({4, 3}, 14, -1, 1));
    std::string magic = good;
    magic[0] = 'X';
    EXPECT_NE(message_of([&] { decode_features(magic); }).find("magic"), std::string::npos);
    std::string version = good;
    version[4] = 2;
    EXPECT_THROW(decode_features(version), FormatError);
    EXPECT_THROW(decode_features(good.substr(0, good.size() - 1)), FormatError);
    EXPECT_THROW(decode_features(good + "x"), FormatError);
    EXPECT_THROW(decode_features(good.substr(0, 10)), FormatError);
}

TEST(FeatureArchive, BadMagicRejectedBeforePayload) {
    // Header claims a 2^32-scale payload; only the magic may be inspected.
    TempDir dir("melb");
    std::string bytes = "XELB";
    for (std::uint32_t v : {1u, 0xffffffu, 0xffffffu}) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    write_text(dir / "x.melb", bytes);
    const std::string msg = message_of([&] { read_features(dir / "x.melb"); });
    EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
}

}  // namespace
}  // namespace mgc::data
