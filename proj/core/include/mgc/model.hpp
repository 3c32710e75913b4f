// SPDX-License-Identifier: Apache-2.0
//
// ECAPA-TDNN with convolution channel separation (CCS) and the optional
// frequency sub-bands aggregation (FSA) front end.
//
// Under CCS every SE-Res2Block emits s + c channels. The first s rows
// ("stop" channels) go straight to the pooling layer; the last c rows
// ("continuous" channels) feed the next block through
//
//     I_1 = X,   I_k = X + sum_{i<k} F_i^cont,
//
// and all continuous maps are concatenated into Last-Conv. With s = 0 and
// c = 1024 the network is the plain ECAPA-TDNN layer stack.
//
// With FSA enabled the mel input is cut into four overlapping frequency bands
// (window w, hop h, 3h + w = n_mels); each band runs through its own Fst-Conv
// and blocks with widths scaled by rho, and Last-Conv and pooling aggregate
// the maps of all four branches.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgc/layers.hpp"
#include "mgc/tensor.hpp"

namespace mgc {

inline constexpr std::size_t kFsaSegments = 4;

struct FsaConfig {
    bool enabled = false;
    std::size_t window = 18;
    std::size_t hop = 10;
    double rho = 0.5;

    friend bool operator==(const FsaConfig&, const FsaConfig&) = default;
};

struct ModelConfig {
    std::size_t n_mels = 48;
    std::size_t stop_channels = 0;      // s
    std::size_t cont_channels = 1024;   // c
    std::size_t bottleneck = 128;       // b
    std::size_t res2_scale = 8;
    std::vector<std::size_t> dilations{2, 3, 4};
    std::size_t fst_kernel = 5;
    std::size_t last_conv_out = 1536;
    std::size_t se_bottleneck = 128;
    std::size_t attention_bottleneck = 128;
    FsaConfig fsa;
    std::size_t n_classes = 10;

    /// Throws ConfigError when the channel arithmetic does not close.
    void validate() const;

    std::size_t branch_count() const { return fsa.enabled ? kFsaSegments : 1; }
    std::size_t branch_input_bins() const { return fsa.enabled ? fsa.window : n_mels; }
    /// Per-branch widths: ceil(rho * x) under FSA, x otherwise.
    std::size_t branch_stop() const;
    std::size_t branch_cont() const;
    std::size_t branch_bottleneck() const;
    std::size_t block_count() const { return dilations.size(); }
    std::size_t last_conv_in() const { return branch_count() * block_count() * branch_cont(); }
    std::size_t pooling_channels() const {
        return last_conv_out + branch_count() * block_count() * branch_stop();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Band starts {0, h, 2h, 3h}; throws ConfigError unless 3h + w == n_mels.
std::vector<std::size_t> fsa_segment_starts(std::size_t n_mels, std::size_t window, std::size_t hop);

/// Copies the four frequency bands of a [n_mels, T] spectrogram.
std::vector<Tensor> fsa_slice(const Tensor& mel, std::size_t window = 18, std::size_t hop = 10);

/// Splits F along the channel axis (rank - 2) into (F_stop: s rows, F_cont: c rows).
std::pair<Var, Var> ccs_split(Var f, std::size_t stop, std::size_t cont);

/// Input of block k (1-based): X for k = 1, X + sum_{i<k} conts[i] otherwise.
Var aggregate_input(Var x, std::span<const Var> conts, std::size_t k);

struct BlockTrace {
    Var input;     // I_k
    Var reduced;   // after the 1x1 bottleneck conv
    Var res2;      // after Res2 conv + BN + ReLU
    Var expanded;  // after the 1x1 expansion conv
    Var output;    // F_k, after SE
    Var stop;      // F_k^stop
    Var cont;      // F_k^cont
};

class SERes2Block {
   public:
    SERes2Block() = default;
    SERes2Block(std::size_t in_channels, std::size_t bottleneck, std::size_t stop, std::size_t cont,
                std::size_t scale, std::size_t dilation, std::size_t se_bottleneck, Pcg64& rng);

    /// conv1x1 -> BN/ReLU -> Res2 -> BN/ReLU -> conv1x1 -> BN/ReLU -> SE -> ccs_split.
    BlockTrace forward(Graph& graph, Var input);
    /// Same pipeline without the split; returns F.
    Var transform(Graph& graph, Var input);
    void visit(const std::string& prefix, const nn::TensorVisitor& visitor);

    std::size_t stop_channels() const { return stop_; }
    std::size_t cont_channels() const { return cont_; }

    nn::ConvBnRelu reduce;
    nn::Res2DilatedConv res2;
    nn::BatchNorm1d res2_bn;
    nn::ConvBnRelu expand;
    nn::SEBlock se;

   private:
    std::size_t stop_ = 0;
    std::size_t cont_ = 0;
};

struct BranchTrace {
    Var input;  // mel band fed to Fst-Conv
    Var x;      // Fst-Conv output X
    std::vector<BlockTrace> blocks;
};

struct ForwardTrace {
    std::vector<BranchTrace> branches;
    Var last_conv_input;
    Var last_conv_output;
    Var pooling_input;
    Var pooled;
    Var logits;
};

/// Test and analysis hooks into the forward pass.
struct ForwardHooks {
    /// Called with (branch, block, F_stop); the returned map replaces F_stop downstream.
    std::function<Var(Graph&, std::size_t, std::size_t, Var)> replace_stop;
};

/// Fst-Conv plus the chain of CCS blocks for one frequency band.
class FeatureBranch {
   public:
    FeatureBranch() = default;
    FeatureBranch(const ModelConfig& config, Pcg64& rng);

    BranchTrace forward(Graph& graph, Var input, std::size_t branch_index, const ForwardHooks* hooks);
    void visit(const std::string& prefix, const nn::TensorVisitor& visitor);

    nn::ConvBnRelu fst_conv;
    std::vector<SERes2Block> blocks;
};

/// A layer row in the style of the architecture table.
struct LayerRow {
    std::string layer;
    std::string structure;
    std::string output;
    std::size_t params = 0;
};

class EcapaModel {
   public:
    /// Validates `config` and initializes every parameter from `seed`.
    EcapaModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    /// mel: [B, n_mels, T] -> full trace; logits are [B, n_classes].
    ForwardTrace forward_trace(Graph& graph, Var mel, const ForwardHooks* hooks = nullptr);
    Var forward(Graph& graph, Var mel) { return forward_trace(graph, mel).logits; }

    /// Visits parameters and buffers under stable dotted names.
    void visit(const nn::TensorVisitor& visitor);
    /// Trainable scalars (weights, biases, BN affine); running statistics excluded.
    std::size_t param_count();
    std::vector<LayerRow> layer_table();

    std::vector<FeatureBranch>& branches() { return branches_; }
    nn::ConvBnRelu& last_conv() { return last_conv_; }
    nn::AttentiveStatsPooling& pooling() { return pooling_; }
    nn::Linear& classifier() { return classifier_; }

   private:
    ModelConfig config_;
    std::vector<FeatureBranch> branches_;
    nn::ConvBnRelu last_conv_;
    nn::AttentiveStatsPooling pooling_;
    nn::Linear classifier_;
};

/// The plain ECAPA-TDNN stack wired without any channel separation: block
/// outputs are summed into later block inputs and concatenated into
/// Last-Conv. Parameter names match an `EcapaModel` with s = 0 and FSA off.
class VanillaEcapa {
   public:
    VanillaEcapa(const ModelConfig& config, std::uint64_t seed);

    Var forward(Graph& graph, Var mel);
    void visit(const nn::TensorVisitor& visitor);

    /// Copies every equally named tensor from `other`; throws if any is missing.
    void load_from(EcapaModel& other);

   private:
    ModelConfig config_;
    nn::ConvBnRelu fst_conv_;
    std::vector<SERes2Block> blocks_;
    nn::ConvBnRelu last_conv_;
    nn::AttentiveStatsPooling pooling_;
    nn::Linear classifier_;
};

/// Convenience: named tensor snapshot of a model.
std::vector<std::pair<std::string, Tensor*>> named_tensors(EcapaModel& model, bool trainable_only = false);

}  // namespace mgc
