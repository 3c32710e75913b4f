// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

#include "mgc/rng.hpp"

namespace mgc::testing {

namespace {

std::size_t conv(std::size_t in, std::size_t out, std::size_t k) { return in * out * k + out; }
std::size_t bn(std::size_t c) { return 2 * c; }

std::size_t ceil_scaled(std::size_t x, double rho) {
    // Exact for the rational rho values used in configs (1/2, 1/4, 1).
    const double v = rho * static_cast<double>(x);
    const auto f = static_cast<std::size_t>(v);
    return static_cast<double>(f) == v ? f : f + 1;
}

}  // namespace

std::size_t oracle_param_count(const ModelConfig& m) {
    const bool fsa = m.fsa.enabled;
    const std::size_t branches = fsa ? 4 : 1;
    const std::size_t bins = fsa ? m.fsa.window : m.n_mels;
    const std::size_t s = fsa ? ceil_scaled(m.stop_channels, m.fsa.rho) : m.stop_channels;
    const std::size_t c = fsa ? ceil_scaled(m.cont_channels, m.fsa.rho) : m.cont_channels;
    const std::size_t b = fsa ? ceil_scaled(m.bottleneck, m.fsa.rho) : m.bottleneck;
    const std::size_t blocks = m.dilations.size();
    const std::size_t width = b / m.res2_scale;

    // Fst-Conv: Conv1D(5,1,1) + BN.
    std::size_t branch = conv(bins, c, m.fst_kernel) + bn(c);
    // SE-Res2Block: 1x1 reduce + BN, Res2 (scale - 1 group convs, k = 3) + BN,
    // 1x1 expand to s + c + BN, SE (two fully connected maps).
    const std::size_t block = conv(c, b, 1) + bn(b) + (m.res2_scale - 1) * conv(width, width, 3) + bn(b) +
                              conv(b, s + c, 1) + bn(s + c) + conv(s + c, m.se_bottleneck, 1) +
                              conv(m.se_bottleneck, s + c, 1);
    branch += blocks * block;

    const std::size_t last_in = branches * blocks * c;
    const std::size_t pooled = m.last_conv_out + branches * blocks * s;
    const std::size_t last = conv(last_in, m.last_conv_out, 1) + bn(m.last_conv_out);
    const std::size_t asp = conv(pooled, m.attention_bottleneck, 1) + conv(m.attention_bottleneck, pooled, 1);
    const std::size_t fc = conv(2 * pooled, m.n_classes, 1);
    return branches * branch + last + asp + fc;
}

ModelConfig reduced_config(std::size_t n_classes) {
    ModelConfig m;
    m.stop_channels = 8;
    m.cont_channels = 16;
    m.bottleneck = 8;
    m.res2_scale = 8;
    m.last_conv_out = 16;
    m.se_bottleneck = 4;
    m.attention_bottleneck = 4;
    m.n_classes = n_classes;
    return m;
}

std::vector<data::Sample> separable_set(std::size_t n_classes, std::size_t per_class, std::size_t frames,
                                        std::uint64_t seed, std::size_t n_mels) {
    Pcg64 rng(seed);
    std::vector<data::Sample> out;
    for (std::size_t k = 0; k < n_classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            Tensor mel({n_mels, frames});
            for (double& v : mel.data()) v = rng.uniform(-0.1, 0.1);
            const std::size_t phase = static_cast<std::size_t>(rng.below(8));
            for (std::size_t m = 0; m < 4; ++m) {
                const std::size_t bin = (4 * k + 2 + m) % n_mels;
                for (std::size_t t = 0; t < frames; ++t) {
                    mel.at(bin, t) += ((t + phase) / 4) % 2 == 0 ? 1.0 : -1.0;
                }
            }
            char id[64];
            std::snprintf(id, sizeof id, "c%02zu_%03zu", k, i);
            out.push_back({id, k, std::move(mel)});
        }
    }
    return out;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<data::Sample>& samples) {
    std::filesystem::create_directories(dir);
    std::vector<data::ManifestEntry> entries;
    for (const auto& s : samples) {
        const std::string file = s.id + ".melb";
        data::write_features(dir / file, s.mel);
        char label[64];
        std::snprintf(label, sizeof label, "genre_%02zu", s.label);
        entries.push_back({s.id, file, label, "", 0});
    }
    const auto manifest = dir / "manifest.jsonl";
    data::write_manifest(manifest, entries);
    return manifest;
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mgc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace mgc::testing
