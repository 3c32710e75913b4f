// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "mgc/features.hpp"
#include "mgc/layers.hpp"
#include "mgc/model.hpp"
#include "mgc/rng.hpp"
#include "mgc/training.hpp"

namespace {

using namespace mgc;

void BM_Conv1dForward(benchmark::State& state) {
    const auto channels = static_cast<std::size_t>(state.range(0));
    Pcg64 rng(1);
    nn::Conv1d conv(channels, channels, 3, 2, rng);
    Tensor x = Tensor::uniform({4, channels, 202}, 2, -1, 1);
    for (auto _ : state) {
        Graph g(Mode::eval, false);
        benchmark::DoNotOptimize(conv.forward(g, g.input(x)).value().data().data());
    }
    state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Conv1dForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

ModelConfig small_config(bool fsa) {
    ModelConfig m;
    m.stop_channels = 64;
    m.cont_channels = 128;
    m.bottleneck = 32;
    m.res2_scale = 4;
    m.last_conv_out = 192;
    m.se_bottleneck = 32;
    m.attention_bottleneck = 32;
    m.fsa.enabled = fsa;
    return m;
}

void BM_ModelForward(benchmark::State& state) {
    EcapaModel model(small_config(state.range(0) != 0), 3);
    Tensor mel = Tensor::uniform({2, 48, 202}, 4, -1, 1);
    for (auto _ : state) {
        Graph g(Mode::eval, false);
        benchmark::DoNotOptimize(model.forward(g, g.input(mel)).value().data().data());
    }
    state.SetItemsProcessed(state.iterations() * 2);
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    EcapaModel model(small_config(false), 5);
    Tensor mel = Tensor::uniform({4, 48, 202}, 6, -1, 1);
    const std::vector<std::size_t> labels{0, 3, 5, 9};
    for (auto _ : state) {
        Graph g(Mode::train);
        Var loss = cross_entropy(model.forward(g, g.input(mel)), labels);
        benchmark::DoNotOptimize(g.tape().backward(loss));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_FeatureExtraction(benchmark::State& state) {
    features::AudioBuffer audio;
    audio.sample_rate = 22050.0;
    Pcg64 rng(7);
    audio.samples.resize(static_cast<std::size_t>(state.range(0)) * 22050);
    for (double& v : audio.samples) v = rng.uniform(-0.5, 0.5);
    for (auto _ : state) benchmark::DoNotOptimize(features::extract(audio).values.data().data());
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(audio.samples.size() * sizeof(double)));
}
BENCHMARK(BM_FeatureExtraction)->Arg(3)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
