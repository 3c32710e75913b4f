// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mgc/rng.hpp"
#include "mgc/tensor.hpp"

namespace mgc::nn {

/// Called for every named tensor of a layer. Trainable parameters have
/// `trainable == true`; batch-norm running statistics are buffers.
using TensorVisitor = std::function<void(const std::string& name, Tensor& tensor, bool trainable)>;

/// Stride-1, same-padded 1-D convolution with bias.
class Conv1d {
   public:
    Conv1d() = default;
    /// Weight and bias drawn uniformly from +-sqrt(1 / (in * kernel)).
    Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t dilation,
           Pcg64& rng);

    Var forward(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t kernel() const { return weight.dim(2); }

    Tensor weight;  // [out, in, kernel]
    Tensor bias;    // [out]
    std::size_t dilation = 1;
};

/// Batch normalization over the batch and time axes jointly.
///
/// Train mode normalizes with the population statistics of the current batch
/// and folds them into the running estimates with `momentum` (the running
/// variance uses the unbiased estimate, hence at least two values per
/// channel). Eval mode uses only the running estimates.
class BatchNorm1d {
   public:
    BatchNorm1d() = default;
    explicit BatchNorm1d(std::size_t channels);

    /// x: [C, T] or [B, C, T].
    Var forward(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.1;
};

/// Conv1d followed by batch normalization and ReLU.
class ConvBnRelu {
   public:
    ConvBnRelu() = default;
    ConvBnRelu(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t dilation,
               Pcg64& rng);

    Var forward(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    Conv1d conv;
    BatchNorm1d bn;
};

/// Res2Net-style hierarchical dilated convolution.
///
/// The input is split into `scale` equal channel groups x_1..x_s; y_1 = x_1 and
/// y_i = conv_i(x_i + y_{i-1}) for i >= 2. The output is concat(y_1..y_s).
/// Normalization and activation are left to the caller.
class Res2DilatedConv {
   public:
    Res2DilatedConv() = default;
    Res2DilatedConv(std::size_t channels, std::size_t scale, std::size_t kernel, std::size_t dilation,
                    Pcg64& rng);

    Var forward(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    std::size_t channels() const { return channels_; }
    std::size_t scale() const { return scale_; }

    std::vector<Conv1d> group_convs;  // scale - 1 convolutions, for groups 2..scale

   private:
    std::size_t channels_ = 0;
    std::size_t scale_ = 1;
};

/// Fully connected map y = W x + b. Accepts [C] or [B, C].
class Linear {
   public:
    Linear() = default;
    /// Weight and bias drawn uniformly from +-sqrt(1 / in).
    Linear(std::size_t in_features, std::size_t out_features, Pcg64& rng);

    Var forward(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

/// Squeeze-and-excitation channel gate:
/// s = sigmoid(W2 relu(W1 mean_t(x))), out[c, t] = s[c] * x[c, t].
class SEBlock {
   public:
    SEBlock() = default;
    SEBlock(std::size_t channels, std::size_t bottleneck, Pcg64& rng);

    /// x: [B, C, T].
    Var forward(Graph& graph, Var x);
    /// Per-channel gates, [B, C].
    Var gates(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    Linear squeeze;
    Linear excite;
};

/// Attentive statistics pooling. Attention logits per channel and frame are
/// projection(tanh(attention(x))); softmax over time gives weights alpha, and
/// the output is the weighted mean concatenated with the weighted standard
/// deviation sqrt(max(E[x^2] - mean^2, eps)).
class AttentiveStatsPooling {
   public:
    AttentiveStatsPooling() = default;
    AttentiveStatsPooling(std::size_t channels, std::size_t bottleneck, Pcg64& rng);

    /// x: [B, C, T] -> [B, 2C].
    Var forward(Graph& graph, Var x);
    /// Attention weights alpha, [B, C, T].
    Var attention_weights(Graph& graph, Var x);
    void visit(const std::string& prefix, const TensorVisitor& visitor);

    Conv1d attention;   // C -> bottleneck, kernel 1
    Conv1d projection;  // bottleneck -> C, kernel 1
    double eps = 1e-8;
};

/// Number of trainable scalars reachable through `visit`.
template <typename Layer>
std::size_t count_trainable(Layer& layer) {
    std::size_t total = 0;
    layer.visit("", [&](const std::string&, Tensor& t, bool trainable) {
        if (trainable) total += t.size();
    });
    return total;
}

}  // namespace mgc::nn
