// SPDX-License-Identifier: Apache-2.0
#include "mgc/layers.hpp"

#include <cmath>

#include "mgc/errors.hpp"

namespace mgc::nn {

namespace {

std::string join(const std::string& prefix, const char* name) {
    return prefix.empty() ? std::string(name) : prefix + "." + name;
}

// [C] parameter viewed as [C, 1] for broadcasting against [B, C, T].
Var column(Var v) { return reshape(v, {v.shape()[0], 1}); }

}  // namespace

// ---------------------------------------------------------------------------

Conv1d::Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t dilation_,
               Pcg64& rng)
    : dilation(dilation_) {
    if (kernel % 2 == 0) {
        throw ShapeError("conv1d: unsupported even kernel size " + std::to_string(kernel));
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(in_channels * kernel));
    weight = Tensor::uniform({out_channels, in_channels, kernel}, rng, -bound, bound);
    bias = Tensor::uniform({out_channels}, rng, -bound, bound);
}

Var Conv1d::forward(Graph& graph, Var x) {
    return conv1d(x, graph.param(weight), graph.param(bias), dilation);
}

void Conv1d::visit(const std::string& prefix, const TensorVisitor& visitor) {
    visitor(join(prefix, "weight"), weight, true);
    visitor(join(prefix, "bias"), bias, true);
}

// ---------------------------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma({channels}, 1.0), beta({channels}, 0.0), running_mean({channels}, 0.0), running_var({channels}, 1.0) {}

Var BatchNorm1d::forward(Graph& graph, Var x) {
    const Shape in_shape = x.shape();
    if (in_shape.size() != 2 && in_shape.size() != 3) {
        throw ShapeError("batchnorm: input must be [C,T] or [B,C,T], got " + shape_to_string(in_shape));
    }
    const bool batched = in_shape.size() == 3;
    const std::size_t batch = batched ? in_shape[0] : 1;
    const std::size_t channels = in_shape[batched ? 1 : 0];
    const std::size_t steps = in_shape[batched ? 2 : 1];
    if (channels != gamma.size()) {
        throw ShapeError("batchnorm: expected " + std::to_string(gamma.size()) + " channels, got " +
                         shape_to_string(in_shape));
    }
    Var x3 = batched ? x : reshape(x, {1, channels, steps});
    Var g = column(graph.param(gamma));
    Var b = column(graph.param(beta));

    Var centered;
    Var denom;
    if (graph.training()) {
        const std::size_t count = batch * steps;
        if (count < 2) {
            throw ContractError("batchnorm: train mode needs at least two values per channel");
        }
        Var mean = reduce(Reduce::mean, reduce(Reduce::mean, x3, 2), 0);
        centered = sub(x3, column(mean));
        Var var = reduce(Reduce::mean, reduce(Reduce::mean, mul(centered, centered), 2), 0);
        denom = column(sqrt(add_scalar(var, eps)));

        const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
        for (std::size_t c = 0; c < channels; ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean.value()[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var.value()[c] * unbias;
        }
    } else {
        Var mean = graph.constant(running_mean);
        Var var = graph.constant(running_var);
        centered = sub(x3, column(mean));
        denom = column(sqrt(add_scalar(var, eps)));
    }
    Var y = add(mul(div(centered, denom), g), b);
    return batched ? y : reshape(y, in_shape);
}

void BatchNorm1d::visit(const std::string& prefix, const TensorVisitor& visitor) {
    visitor(join(prefix, "gamma"), gamma, true);
    visitor(join(prefix, "beta"), beta, true);
    visitor(join(prefix, "running_mean"), running_mean, false);
    visitor(join(prefix, "running_var"), running_var, false);
}

// ---------------------------------------------------------------------------

ConvBnRelu::ConvBnRelu(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                       std::size_t dilation, Pcg64& rng)
    : conv(in_channels, out_channels, kernel, dilation, rng), bn(out_channels) {}

Var ConvBnRelu::forward(Graph& graph, Var x) { return relu(bn.forward(graph, conv.forward(graph, x))); }

void ConvBnRelu::visit(const std::string& prefix, const TensorVisitor& visitor) {
    conv.visit(join(prefix, "conv"), visitor);
    bn.visit(join(prefix, "bn"), visitor);
}

// ---------------------------------------------------------------------------

Res2DilatedConv::Res2DilatedConv(std::size_t channels, std::size_t scale, std::size_t kernel,
                                 std::size_t dilation, Pcg64& rng)
    : channels_(channels), scale_(scale) {
    if (scale == 0 || channels % scale != 0) {
        throw ConfigError("res2: " + std::to_string(channels) + " channels are not divisible by scale " +
                          std::to_string(scale));
    }
    const std::size_t width = channels / scale;
    for (std::size_t i = 1; i < scale; ++i) {
        group_convs.emplace_back(width, width, kernel, dilation, rng);
    }
}

Var Res2DilatedConv::forward(Graph& graph, Var x) {
    const std::size_t axis = x.shape().size() - 2;
    if (x.shape()[axis] != channels_) {
        throw ShapeError("res2: expected " + std::to_string(channels_) + " channels, got " +
                         shape_to_string(x.shape()));
    }
    const std::vector<std::size_t> sizes(scale_, channels_ / scale_);
    const std::vector<Var> groups = split(x, axis, sizes);
    std::vector<Var> outputs{groups[0]};
    for (std::size_t i = 1; i < scale_; ++i) {
        outputs.push_back(group_convs[i - 1].forward(graph, add(groups[i], outputs.back())));
    }
    return concat(outputs, axis);
}

void Res2DilatedConv::visit(const std::string& prefix, const TensorVisitor& visitor) {
    for (std::size_t i = 0; i < group_convs.size(); ++i) {
        group_convs[i].visit(join(prefix, ("convs." + std::to_string(i)).c_str()), visitor);
    }
}

// ---------------------------------------------------------------------------

Linear::Linear(std::size_t in_features, std::size_t out_features, Pcg64& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
    weight = Tensor::uniform({out_features, in_features}, rng, -bound, bound);
    bias = Tensor::uniform({out_features}, rng, -bound, bound);
}

Var Linear::forward(Graph& graph, Var x) {
    const bool vector = x.shape().size() == 1;
    Var x2 = vector ? reshape(x, {1, x.shape()[0]}) : x;
    if (x2.shape().size() != 2 || x2.shape()[1] != weight.dim(1)) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                         shape_to_string(weight.shape()));
    }
    Var y = add(matmul(x2, transpose(graph.param(weight))), graph.param(bias));
    return vector ? reshape(y, {weight.dim(0)}) : y;
}

void Linear::visit(const std::string& prefix, const TensorVisitor& visitor) {
    visitor(join(prefix, "weight"), weight, true);
    visitor(join(prefix, "bias"), bias, true);
}

// ---------------------------------------------------------------------------

SEBlock::SEBlock(std::size_t channels, std::size_t bottleneck, Pcg64& rng)
    : squeeze(channels, bottleneck, rng), excite(bottleneck, channels, rng) {}

Var SEBlock::gates(Graph& graph, Var x) {
    if (x.shape().size() != 3) {
        throw ShapeError("se: expected [B,C,T], got " + shape_to_string(x.shape()));
    }
    Var pooled = reduce(Reduce::mean, x, 2);
    return sigmoid(excite.forward(graph, relu(squeeze.forward(graph, pooled))));
}

Var SEBlock::forward(Graph& graph, Var x) {
    Var s = gates(graph, x);
    return mul(x, reshape(s, {x.shape()[0], x.shape()[1], 1}));
}

void SEBlock::visit(const std::string& prefix, const TensorVisitor& visitor) {
    squeeze.visit(join(prefix, "squeeze"), visitor);
    excite.visit(join(prefix, "excite"), visitor);
}

// ---------------------------------------------------------------------------

AttentiveStatsPooling::AttentiveStatsPooling(std::size_t channels, std::size_t bottleneck, Pcg64& rng)
    : attention(channels, bottleneck, 1, 1, rng), projection(bottleneck, channels, 1, 1, rng) {}

Var AttentiveStatsPooling::attention_weights(Graph& graph, Var x) {
    if (x.shape().size() != 3) {
        throw ShapeError("asp: expected [B,C,T], got " + shape_to_string(x.shape()));
    }
    Var logits = projection.forward(graph, tanh(attention.forward(graph, x)));
    return softmax(logits, 2);
}

Var AttentiveStatsPooling::forward(Graph& graph, Var x) {
    Var alpha = attention_weights(graph, x);
    Var mean = reduce(Reduce::sum, mul(alpha, x), 2);
    Var second = reduce(Reduce::sum, mul(alpha, mul(x, x)), 2);
    Var stddev = sqrt(clamp_min(sub(second, mul(mean, mean)), eps));
    const Var parts[] = {mean, stddev};
    return concat(parts, 1);
}

void AttentiveStatsPooling::visit(const std::string& prefix, const TensorVisitor& visitor) {
    attention.visit(join(prefix, "attention"), visitor);
    projection.visit(join(prefix, "projection"), visitor);
}

}  // namespace mgc::nn
