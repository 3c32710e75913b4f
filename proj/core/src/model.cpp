// SPDX-License-Identifier: Apache-2.0
#include "mgc/model.hpp"

#include <cmath>
#include <map>

#include "mgc/errors.hpp"

namespace mgc {

namespace {

std::size_t scaled_width(std::size_t width, double rho) {
    return static_cast<std::size_t>(std::ceil(rho * static_cast<double>(width) - 1e-9));
}

std::string join(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

std::string dims(std::size_t channels, const char* time = "T") {
    return std::to_string(channels) + " x " + time;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

std::size_t ModelConfig::branch_stop() const {
    return fsa.enabled ? scaled_width(stop_channels, fsa.rho) : stop_channels;
}

std::size_t ModelConfig::branch_cont() const {
    return fsa.enabled ? scaled_width(cont_channels, fsa.rho) : cont_channels;
}

std::size_t ModelConfig::branch_bottleneck() const {
    return fsa.enabled ? scaled_width(bottleneck, fsa.rho) : bottleneck;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
    if (n_mels == 0) fail("n_mels must be >= 1");
    if (cont_channels == 0) fail("c (continuous channels) must be >= 1");
    if (bottleneck == 0) fail("bottleneck must be >= 1");
    if (res2_scale == 0) fail("res2_scale must be >= 1");
    if (dilations.empty()) fail("at least one block dilation is required");
    for (auto d : dilations) {
        if (d == 0) fail("dilations must be >= 1");
    }
    if (fst_kernel % 2 == 0) fail("fst_kernel must be odd");
    if (last_conv_out == 0) fail("last_conv_out must be >= 1");
    if (se_bottleneck == 0) fail("se_bottleneck must be >= 1");
    if (attention_bottleneck == 0) fail("attention_bottleneck must be >= 1");
    if (n_classes == 0) fail("n_classes must be >= 1");
    if (fsa.enabled) {
        if (!(fsa.rho > 0.0 && fsa.rho <= 1.0)) fail("fsa.rho must lie in (0, 1]");
        if (fsa.window == 0) fail("fsa.w must be >= 1");
        if (3 * fsa.hop + fsa.window != n_mels) {
            fail("fsa segments do not cover the mel bins: 3*h + w = " +
                 std::to_string(3 * fsa.hop + fsa.window) + " but n_mels = " + std::to_string(n_mels));
        }
        if (branch_cont() == 0 || branch_bottleneck() == 0) {
            fail("fsa.rho scales c or bottleneck to zero");
        }
    }
    if (branch_bottleneck() % res2_scale != 0) {
        fail("bottleneck " + std::to_string(branch_bottleneck()) + " is not divisible by res2_scale " +
             std::to_string(res2_scale));
    }
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<std::size_t> fsa_segment_starts(std::size_t n_mels, std::size_t window, std::size_t hop) {
    if (3 * hop + window != n_mels) {
        throw ConfigError("fsa: 3*h + w = " + std::to_string(3 * hop + window) + " does not equal " +
                          std::to_string(n_mels) + " mel bins");
    }
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < kFsaSegments; ++i) {
        starts.push_back(i * hop);
    }
    return starts;
}

std::vector<Tensor> fsa_slice(const Tensor& mel, std::size_t window, std::size_t hop) {
    if (mel.rank() != 2) {
        throw ShapeError("fsa_slice: expected [n_mels, T], got " + shape_to_string(mel.shape()));
    }
    const std::size_t steps = mel.dim(1);
    std::vector<Tensor> segments;
    for (std::size_t start : fsa_segment_starts(mel.dim(0), window, hop)) {
        Tensor seg({window, steps});
        std::copy_n(mel.data().data() + start * steps, window * steps, seg.data().data());
        segments.push_back(std::move(seg));
    }
    return segments;
}

std::pair<Var, Var> ccs_split(Var f, std::size_t stop, std::size_t cont) {
    const Shape& shape = f.shape();
    if (shape.size() < 2) {
        throw ShapeError("ccs_split: expected a channel axis, got " + shape_to_string(shape));
    }
    const std::size_t axis = shape.size() - 2;
    if (shape[axis] != stop + cont) {
        throw ShapeError("ccs_split: feature map has " + std::to_string(shape[axis]) + " channels, expected s + c = " +
                         std::to_string(stop + cont));
    }
    const std::size_t sizes[] = {stop, cont};
    auto parts = split(f, axis, sizes);
    return {parts[0], parts[1]};
}

Var aggregate_input(Var x, std::span<const Var> conts, std::size_t k) {
    if (k == 0 || k > conts.size() + 1) {
        throw ContractError("aggregate_input: block index " + std::to_string(k) + " needs " +
                            std::to_string(k == 0 ? 0 : k - 1) + " continuous maps, have " +
                            std::to_string(conts.size()));
    }
    Var sum = x;
    for (std::size_t i = 0; i + 1 < k; ++i) {
        if (conts[i].shape() != x.shape()) {
            throw ShapeError("aggregate_input: continuous map " + shape_to_string(conts[i].shape()) +
                             " does not match X " + shape_to_string(x.shape()));
        }
        sum = add(sum, conts[i]);
    }
    return sum;
}

// ---------------------------------------------------------------------------
// SERes2Block

SERes2Block::SERes2Block(std::size_t in_channels, std::size_t bottleneck, std::size_t stop, std::size_t cont,
                         std::size_t scale, std::size_t dilation, std::size_t se_bottleneck, Pcg64& rng)
    : reduce(in_channels, bottleneck, 1, 1, rng),
      res2(bottleneck, scale, 3, dilation, rng),
      res2_bn(bottleneck),
      expand(bottleneck, stop + cont, 1, 1, rng),
      se(stop + cont, se_bottleneck, rng),
      stop_(stop),
      cont_(cont) {}

Var SERes2Block::transform(Graph& graph, Var input) {
    Var h = reduce.forward(graph, input);
    h = relu(res2_bn.forward(graph, res2.forward(graph, h)));
    h = expand.forward(graph, h);
    return se.forward(graph, h);
}

BlockTrace SERes2Block::forward(Graph& graph, Var input) {
    BlockTrace t;
    t.input = input;
    t.reduced = reduce.forward(graph, input);
    t.res2 = relu(res2_bn.forward(graph, res2.forward(graph, t.reduced)));
    t.expanded = expand.forward(graph, t.res2);
    t.output = se.forward(graph, t.expanded);
    std::tie(t.stop, t.cont) = ccs_split(t.output, stop_, cont_);
    return t;
}

void SERes2Block::visit(const std::string& prefix, const nn::TensorVisitor& visitor) {
    reduce.visit(join(prefix, "reduce"), visitor);
    res2.visit(join(prefix, "res2"), visitor);
    res2_bn.visit(join(prefix, "res2_bn"), visitor);
    expand.visit(join(prefix, "expand"), visitor);
    se.visit(join(prefix, "se"), visitor);
}

// ---------------------------------------------------------------------------
// FeatureBranch

FeatureBranch::FeatureBranch(const ModelConfig& config, Pcg64& rng)
    : fst_conv(config.branch_input_bins(), config.branch_cont(), config.fst_kernel, 1, rng) {
    for (std::size_t d : config.dilations) {
        blocks.emplace_back(config.branch_cont(), config.branch_bottleneck(), config.branch_stop(),
                            config.branch_cont(), config.res2_scale, d, config.se_bottleneck, rng);
    }
}

BranchTrace FeatureBranch::forward(Graph& graph, Var input, std::size_t branch_index, const ForwardHooks* hooks) {
    BranchTrace trace;
    trace.input = input;
    trace.x = fst_conv.forward(graph, input);
    std::vector<Var> conts;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        Var block_input = aggregate_input(trace.x, conts, k + 1);
        BlockTrace bt = blocks[k].forward(graph, block_input);
        if (hooks && hooks->replace_stop) {
            bt.stop = hooks->replace_stop(graph, branch_index, k, bt.stop);
        }
        conts.push_back(bt.cont);
        trace.blocks.push_back(bt);
    }
    return trace;
}

void FeatureBranch::visit(const std::string& prefix, const nn::TensorVisitor& visitor) {
    fst_conv.visit(join(prefix, "fst_conv"), visitor);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        blocks[k].visit(join(prefix, "blocks." + std::to_string(k)), visitor);
    }
}

// ---------------------------------------------------------------------------
// EcapaModel

EcapaModel::EcapaModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Pcg64 rng(seed);
    for (std::size_t i = 0; i < config_.branch_count(); ++i) {
        branches_.emplace_back(config_, rng);
    }
    last_conv_ = nn::ConvBnRelu(config_.last_conv_in(), config_.last_conv_out, 1, 1, rng);
    pooling_ = nn::AttentiveStatsPooling(config_.pooling_channels(), config_.attention_bottleneck, rng);
    classifier_ = nn::Linear(2 * config_.pooling_channels(), config_.n_classes, rng);
}

ForwardTrace EcapaModel::forward_trace(Graph& graph, Var mel, const ForwardHooks* hooks) {
    const Shape& shape = mel.shape();
    if (shape.size() != 3 || shape[1] != config_.n_mels || shape[2] == 0) {
        throw ShapeError("model: expected input [B, " + std::to_string(config_.n_mels) + ", T>=1], got " +
                         shape_to_string(shape));
    }
    ForwardTrace trace;
    if (config_.fsa.enabled) {
        const auto starts = fsa_segment_starts(config_.n_mels, config_.fsa.window, config_.fsa.hop);
        for (std::size_t i = 0; i < branches_.size(); ++i) {
            Var band = narrow(mel, 1, starts[i], config_.fsa.window);
            trace.branches.push_back(branches_[i].forward(graph, band, i, hooks));
        }
    } else {
        trace.branches.push_back(branches_[0].forward(graph, mel, 0, hooks));
    }

    std::vector<Var> conts;
    std::vector<Var> pool_parts;
    for (const auto& branch : trace.branches) {
        for (const auto& block : branch.blocks) {
            conts.push_back(block.cont);
        }
    }
    trace.last_conv_input = concat(conts, 1);
    trace.last_conv_output = last_conv_.forward(graph, trace.last_conv_input);
    pool_parts.push_back(trace.last_conv_output);
    for (const auto& branch : trace.branches) {
        for (const auto& block : branch.blocks) {
            pool_parts.push_back(block.stop);
        }
    }
    trace.pooling_input = concat(pool_parts, 1);
    trace.pooled = pooling_.forward(graph, trace.pooling_input);
    trace.logits = classifier_.forward(graph, trace.pooled);
    return trace;
}

void EcapaModel::visit(const nn::TensorVisitor& visitor) {
    if (config_.fsa.enabled) {
        for (std::size_t i = 0; i < branches_.size(); ++i) {
            branches_[i].visit("branches." + std::to_string(i), visitor);
        }
    } else {
        branches_[0].visit("", visitor);
    }
    last_conv_.visit("last_conv", visitor);
    pooling_.visit("pooling", visitor);
    classifier_.visit("classifier", visitor);
}

std::size_t EcapaModel::param_count() {
    std::size_t total = 0;
    visit([&](const std::string&, Tensor& t, bool trainable) {
        if (trainable) total += t.size();
    });
    return total;
}

std::vector<LayerRow> EcapaModel::layer_table() {
    std::vector<LayerRow> rows;
    const std::size_t branches = config_.branch_count();
    const std::string suffix = branches > 1 ? " (x" + std::to_string(branches) + " branches)" : "";
    auto conv_label = [](std::size_t kernel, std::size_t dilation) {
        return "Conv1D(" + std::to_string(kernel) + ", 1, " + std::to_string(dilation) + ")";
    };
    auto total_over_branches = [&](auto&& count_one) {
        std::size_t total = 0;
        for (auto& b : branches_) total += count_one(b);
        return total;
    };

    rows.push_back({"Fst-Conv" + suffix, conv_label(config_.fst_kernel, 1), dims(config_.branch_cont()),
                    total_over_branches([](FeatureBranch& b) { return nn::count_trainable(b.fst_conv); })});
    for (std::size_t k = 0; k < config_.block_count(); ++k) {
        const std::string name = "SE-Res2Block (B" + std::to_string(k + 1) + ")" + suffix;
        const std::size_t width = config_.branch_stop() + config_.branch_cont();
        rows.push_back({name, conv_label(1, 1), dims(config_.branch_bottleneck()),
                        total_over_branches([k](FeatureBranch& b) { return nn::count_trainable(b.blocks[k].reduce); })});
        rows.push_back({"", "Res2 " + conv_label(3, config_.dilations[k]), dims(config_.branch_bottleneck()),
                        total_over_branches([k](FeatureBranch& b) {
                            return nn::count_trainable(b.blocks[k].res2) + nn::count_trainable(b.blocks[k].res2_bn);
                        })});
        rows.push_back({"", conv_label(1, 1), dims(width),
                        total_over_branches([k](FeatureBranch& b) { return nn::count_trainable(b.blocks[k].expand); })});
        rows.push_back({"", "SE-Block", dims(width),
                        total_over_branches([k](FeatureBranch& b) { return nn::count_trainable(b.blocks[k].se); })});
    }
    rows.push_back({"Last-Conv", conv_label(1, 1), dims(config_.last_conv_out), nn::count_trainable(last_conv_)});
    rows.push_back({"Pooling", "ASP", dims(2 * config_.pooling_channels(), "1"), nn::count_trainable(pooling_)});
    rows.push_back({"Classifier", "FC", std::to_string(config_.n_classes), nn::count_trainable(classifier_)});
    return rows;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(EcapaModel& model, bool trainable_only) {
    std::vector<std::pair<std::string, Tensor*>> out;
    model.visit([&](const std::string& name, Tensor& t, bool trainable) {
        if (trainable || !trainable_only) out.emplace_back(name, &t);
    });
    return out;
}

// ---------------------------------------------------------------------------
// VanillaEcapa

VanillaEcapa::VanillaEcapa(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.stop_channels = 0;
    config_.fsa.enabled = false;
    config_.validate();
    Pcg64 rng(seed);
    const std::size_t channels = config_.cont_channels;
    fst_conv_ = nn::ConvBnRelu(config_.n_mels, channels, config_.fst_kernel, 1, rng);
    for (std::size_t d : config_.dilations) {
        blocks_.emplace_back(channels, config_.bottleneck, 0, channels, config_.res2_scale, d,
                             config_.se_bottleneck, rng);
    }
    last_conv_ = nn::ConvBnRelu(channels * config_.dilations.size(), config_.last_conv_out, 1, 1, rng);
    pooling_ = nn::AttentiveStatsPooling(config_.last_conv_out, config_.attention_bottleneck, rng);
    classifier_ = nn::Linear(2 * config_.last_conv_out, config_.n_classes, rng);
}

Var VanillaEcapa::forward(Graph& graph, Var mel) {
    Var x = fst_conv_.forward(graph, mel);
    std::vector<Var> outputs;
    Var input = x;
    for (auto& block : blocks_) {
        Var out = block.transform(graph, input);
        outputs.push_back(out);
        input = add(input, out);
    }
    Var merged = last_conv_.forward(graph, concat(outputs, 1));
    return classifier_.forward(graph, pooling_.forward(graph, merged));
}

void VanillaEcapa::visit(const nn::TensorVisitor& visitor) {
    fst_conv_.visit("fst_conv", visitor);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        blocks_[k].visit("blocks." + std::to_string(k), visitor);
    }
    last_conv_.visit("last_conv", visitor);
    pooling_.visit("pooling", visitor);
    classifier_.visit("classifier", visitor);
}

void VanillaEcapa::load_from(EcapaModel& other) {
    std::map<std::string, Tensor*> source;
    other.visit([&](const std::string& name, Tensor& t, bool) { source[name] = &t; });
    visit([&](const std::string& name, Tensor& t, bool) {
        auto it = source.find(name);
        if (it == source.end() || it->second->shape() != t.shape()) {
            throw ShapeError("vanilla load: no tensor named '" + name + "' with shape " +
                             shape_to_string(t.shape()));
        }
        t = *it->second;
    });
}

}  // namespace mgc
