// SPDX-License-Identifier: Apache-2.0
#include "mgc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "mgc/errors.hpp"

namespace mgc {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

void require_valid_create_shape(const Shape& shape) {
    if (shape.empty()) {
        throw ShapeError("create: shape must have at least one dimension");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw ShapeError("create: dimensions must be >= 1, got " + shape_to_string(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    require_valid_create_shape(shape);
    return Tensor(shape, 0.0);
}

Tensor Tensor::constant(const Shape& shape, double value) {
    require_valid_create_shape(shape);
    return Tensor(shape, value);
}

Tensor Tensor::uniform(const Shape& shape, std::uint64_t seed, double lo, double hi) {
    Pcg64 rng(seed);
    return uniform(shape, rng, lo, hi);
}

Tensor Tensor::uniform(const Shape& shape, Pcg64& rng, double lo, double hi) {
    require_valid_create_shape(shape);
    if (!(lo < hi)) {
        throw DomainError("create: uniform requires lo < hi");
    }
    Tensor t(shape);
    for (auto& v : t.data_) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape) +
                         " changes element count");
    }
    return Tensor(std::move(shape), data_);
}

bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::of(Var v) const {
    if (!has(v)) {
        throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
    }
    return by_node_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{"leaf", {}, std::move(value), nullptr, requires_grad});
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(const char* kind, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward) {
    return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(value),
                  std::move(backward));
}

Var Tape::record(const char* kind, std::span<const Var> inputs, Tensor value, BackwardFn backward) {
    Node node{kind, {}, std::move(value), nullptr, false};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.tape() != this) {
            throw ContractError(std::string(kind) + ": input belongs to a different tape");
        }
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Gradients Tape::backward(Var loss) const {
    if (loss.tape() != this) {
        throw ContractError("backward: loss is not on this tape");
    }
    const Tensor& loss_value = nodes_[loss.id()].value;
    if (loss_value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_to_string(loss_value.shape()));
    }
    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> present(nodes_.size(), false);
    grads[loss.id()] = Tensor(loss_value.shape(), 1.0);
    present[loss.id()] = true;

    std::vector<const Tensor*> input_values;
    std::vector<Tensor*> input_grads;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!present[id] || !node.backward) {
            continue;
        }
        input_values.clear();
        input_grads.clear();
        for (NodeId in : node.inputs) {
            input_values.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (!present[in]) {
                    grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
                    present[in] = true;
                }
                input_grads.push_back(&grads[in]);
            } else {
                input_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardArgs{input_values, node.value, grads[id], input_grads});
    }
    return Gradients(std::move(grads), std::move(present));
}

Var Graph::param(Tensor& parameter) {
    for (const auto& b : bindings_) {
        if (b.parameter == &parameter) {
            return b.var;
        }
    }
    Var v = tape_.leaf(parameter, track_);
    bindings_.push_back(Binding{&parameter, v});
    return v;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

Tape& tape_of(Var v) {
    if (!v.valid()) {
        throw ContractError("operation on an unbound Var");
    }
    return *v.tape();
}

/// Offsets of `b` for each flat index of `a` under right-aligned broadcasting.
std::vector<std::size_t> broadcast_offsets(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) {
        throw ShapeError("broadcast: " + shape_to_string(b) + " has higher rank than " +
                         shape_to_string(a));
    }
    const std::size_t ra = a.size();
    const std::size_t lead = ra - b.size();
    std::vector<std::size_t> b_stride(ra, 0);
    std::size_t stride = 1;
    for (std::size_t j = b.size(); j-- > 0;) {
        const std::size_t i = j + lead;
        if (b[j] == a[i]) {
            b_stride[i] = stride;
        } else if (b[j] != 1) {
            throw ShapeError("broadcast: " + shape_to_string(b) + " is not broadcastable to " +
                             shape_to_string(a));
        }
        stride *= b[j];
    }
    const std::size_t n = shape_size(a);
    std::vector<std::size_t> offsets(n);
    std::vector<std::size_t> index(ra, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        offsets[flat] = offset;
        for (std::size_t i = ra; i-- > 0;) {
            ++index[i];
            offset += b_stride[i];
            if (index[i] < a[i]) {
                break;
            }
            offset -= b_stride[i] * index[i];
            index[i] = 0;
        }
    }
    return offsets;
}

double apply_unary(Unary kind, double x) {
    switch (kind) {
        case Unary::relu:
            return x > 0.0 ? x : 0.0;
        case Unary::sigmoid:
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        case Unary::tanh:
            return std::tanh(x);
        case Unary::exp:
            return std::exp(x);
        case Unary::log:
            return std::log(x);
        case Unary::sqrt:
            return std::sqrt(x);
    }
    return x;
}

// Derivative expressed through input x and output y.
double unary_derivative(Unary kind, double x, double y) {
    switch (kind) {
        case Unary::relu:
            return x > 0.0 ? 1.0 : 0.0;
        case Unary::sigmoid:
            return y * (1.0 - y);
        case Unary::tanh:
            return 1.0 - y * y;
        case Unary::exp:
            return y;
        case Unary::log:
            return 1.0 / x;
        case Unary::sqrt:
            return 0.5 / y;
    }
    return 0.0;
}

const char* unary_name(Unary kind) {
    switch (kind) {
        case Unary::relu:
            return "relu";
        case Unary::sigmoid:
            return "sigmoid";
        case Unary::tanh:
            return "tanh";
        case Unary::exp:
            return "exp";
        case Unary::log:
            return "log";
        case Unary::sqrt:
            return "sqrt";
    }
    return "unary";
}

const char* binary_name(Binary kind) {
    switch (kind) {
        case Binary::add:
            return "add";
        case Binary::sub:
            return "sub";
        case Binary::mul:
            return "mul";
        case Binary::div:
            return "div";
    }
    return "binary";
}

}  // namespace

Var elementwise(Unary kind, Var x) {
    const Tensor& in = x.value();
    if (kind == Unary::log || kind == Unary::sqrt) {
        for (double v : in.data()) {
            if (kind == Unary::log ? !(v > 0.0) : !(v >= 0.0)) {
                throw DomainError(std::string(unary_name(kind)) + ": argument " + std::to_string(v) +
                                  " outside domain");
            }
        }
    }
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = apply_unary(kind, in[i]);
    }
    return tape_of(x).record(unary_name(kind), {x}, std::move(out), [kind](const BackwardArgs& a) {
        const Tensor& xin = *a.inputs[0];
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < xin.size(); ++i) {
            gx[i] += a.grad_output[i] * unary_derivative(kind, xin[i], a.output[i]);
        }
    });
}

Var elementwise(Binary kind, Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool same = av.shape() == bv.shape();
    std::vector<std::size_t> offsets;
    if (!same) {
        offsets = broadcast_offsets(av.shape(), bv.shape());
    }
    auto b_at = [&](std::size_t i) { return same ? i : offsets[i]; };

    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double x = av[i];
        const double y = bv[b_at(i)];
        switch (kind) {
            case Binary::add:
                out[i] = x + y;
                break;
            case Binary::sub:
                out[i] = x - y;
                break;
            case Binary::mul:
                out[i] = x * y;
                break;
            case Binary::div:
                out[i] = x / y;
                break;
        }
    }
    return tape_of(a).record(
        binary_name(kind), {a, b}, std::move(out),
        [kind, same, offsets = std::move(offsets)](const BackwardArgs& args) {
            const Tensor& x = *args.inputs[0];
            const Tensor& y = *args.inputs[1];
            Tensor* gx = args.grads[0];
            Tensor* gy = args.grads[1];
            const Tensor& g = args.grad_output;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const std::size_t j = same ? i : offsets[i];
                switch (kind) {
                    case Binary::add:
                        if (gx) (*gx)[i] += g[i];
                        if (gy) (*gy)[j] += g[i];
                        break;
                    case Binary::sub:
                        if (gx) (*gx)[i] += g[i];
                        if (gy) (*gy)[j] -= g[i];
                        break;
                    case Binary::mul:
                        if (gx) (*gx)[i] += g[i] * y[j];
                        if (gy) (*gy)[j] += g[i] * x[i];
                        break;
                    case Binary::div:
                        if (gx) (*gx)[i] += g[i] / y[j];
                        if (gy) (*gy)[j] -= g[i] * x[i] / (y[j] * y[j]);
                        break;
                }
            }
        });
}

Var add_scalar(Var x, double value) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = in[i] + value;
    }
    return tape_of(x).record("add_scalar", {x}, std::move(out), [](const BackwardArgs& a) {
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += a.grad_output[i];
        }
    });
}

Var mul_scalar(Var x, double value) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = in[i] * value;
    }
    return tape_of(x).record("mul_scalar", {x}, std::move(out), [value](const BackwardArgs& a) {
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += a.grad_output[i] * value;
        }
    });
}

Var clamp_min(Var x, double floor) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = in[i] > floor ? in[i] : floor;
    }
    return tape_of(x).record("clamp_min", {x}, std::move(out), [floor](const BackwardArgs& a) {
        const Tensor& xin = *a.inputs[0];
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xin[i] > floor) {
                gx[i] += a.grad_output[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

namespace {

// c[M,N] += a[M,K] * b[K,N]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    gemm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape_of(a).record("matmul", {a, b}, std::move(out), [m, k, n](const BackwardArgs& args) {
        const Tensor& x = *args.inputs[0];
        const Tensor& y = *args.inputs[1];
        const Tensor& g = args.grad_output;
        if (Tensor* gx = args.grads[0]) {
            // gx[i,p] += sum_j g[i,j] * y[p,j]
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += g[i * n + j] * y[p * n + j];
                    }
                    (*gx)[i * k + p] += acc;
                }
            }
        }
        if (Tensor* gy = args.grads[1]) {
            // gy[p,j] += sum_i x[i,p] * g[i,j]
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) {
                        (*gy)[p * n + j] += xv * g[i * n + j];
                    }
                }
            }
        }
    });
}

Var transpose(Var x) {
    const Tensor& in = x.value();
    if (in.rank() != 2) {
        throw ShapeError("transpose: expected rank 2, got " + shape_to_string(in.shape()));
    }
    const std::size_t r = in.dim(0), c = in.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = in[i * c + j];
        }
    }
    return tape_of(x).record("transpose", {x}, std::move(out), [r, c](const BackwardArgs& a) {
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                gx[i * c + j] += a.grad_output[j * r + i];
            }
        }
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return tape_of(x).record("reshape", {x}, std::move(out), [](const BackwardArgs& a) {
        Tensor& gx = *a.grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += a.grad_output[i];
        }
    });
}

// ---------------------------------------------------------------------------
// conv1d

Var conv1d(Var x, Var weight, Var bias, std::size_t dilation) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 2 && xv.rank() != 3) {
        throw ShapeError("conv1d: input must be [C,T] or [B,C,T], got " + shape_to_string(xv.shape()));
    }
    const bool batched = xv.rank() == 3;
    const std::size_t batch = batched ? xv.dim(0) : 1;
    const std::size_t c_in = xv.dim(batched ? 1 : 0);
    const std::size_t steps = xv.dim(batched ? 2 : 1);
    if (wv.rank() != 3 || wv.dim(1) != c_in) {
        throw ShapeError("conv1d: weight " + shape_to_string(wv.shape()) + " does not match input " +
                         shape_to_string(xv.shape()));
    }
    const std::size_t c_out = wv.dim(0);
    const std::size_t kernel = wv.dim(2);
    if (kernel % 2 == 0) {
        throw ShapeError("conv1d: unsupported even kernel size " + std::to_string(kernel));
    }
    if (bv.rank() != 1 || bv.dim(0) != c_out) {
        throw ShapeError("conv1d: bias " + shape_to_string(bv.shape()) + " does not match " +
                         std::to_string(c_out) + " output channels");
    }
    if (dilation == 0) {
        throw ShapeError("conv1d: dilation must be >= 1");
    }
    const auto pad = static_cast<std::ptrdiff_t>(dilation * (kernel - 1) / 2);
    const auto T = static_cast<std::ptrdiff_t>(steps);

    // Valid output range [lo, hi) for tap offset `off` so that t + off lies inside the input.
    auto tap_range = [T](std::ptrdiff_t off) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(T, T - off);
        return std::pair{lo, hi};
    };

    Shape out_shape = batched ? Shape{batch, c_out, steps} : Shape{c_out, steps};
    Tensor out(out_shape);
    const double* xd = xv.data().data();
    const double* wd = wv.data().data();
    double* yd = out.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < c_out; ++o) {
            double* yrow = yd + (b * c_out + o) * steps;
            std::fill(yrow, yrow + steps, bv[o]);
            for (std::size_t c = 0; c < c_in; ++c) {
                const double* xrow = xd + (b * c_in + c) * steps;
                for (std::size_t k = 0; k < kernel; ++k) {
                    const double w = wd[(o * c_in + c) * kernel + k];
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * dilation) - pad;
                    const auto [lo, hi] = tap_range(off);
                    for (std::ptrdiff_t t = lo; t < hi; ++t) {
                        yrow[t] += w * xrow[t + off];
                    }
                }
            }
        }
    }

    return tape_of(x).record(
        "conv1d", {x, weight, bias}, std::move(out),
        [=](const BackwardArgs& a) {
            const double* xin = a.inputs[0]->data().data();
            const double* w = a.inputs[1]->data().data();
            const double* g = a.grad_output.data().data();
            Tensor* gx = a.grads[0];
            Tensor* gw = a.grads[1];
            Tensor* gb = a.grads[2];
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < c_out; ++o) {
                    const double* grow = g + (b * c_out + o) * steps;
                    if (gb) {
                        double acc = 0.0;
                        for (std::size_t t = 0; t < steps; ++t) {
                            acc += grow[t];
                        }
                        (*gb)[o] += acc;
                    }
                    for (std::size_t c = 0; c < c_in; ++c) {
                        const double* xrow = xin + (b * c_in + c) * steps;
                        for (std::size_t k = 0; k < kernel; ++k) {
                            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * dilation) - pad;
                            const auto [lo, hi] = tap_range(off);
                            const std::size_t widx = (o * c_in + c) * kernel + k;
                            if (gw) {
                                double acc = 0.0;
                                for (std::ptrdiff_t t = lo; t < hi; ++t) {
                                    acc += grow[t] * xrow[t + off];
                                }
                                (*gw)[widx] += acc;
                            }
                            if (gx) {
                                const double wv_k = w[widx];
                                double* gxrow = gx->data().data() + (b * c_in + c) * steps;
                                for (std::ptrdiff_t t = lo; t < hi; ++t) {
                                    gxrow[t + off] += wv_k * grow[t];
                                }
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct AxisLayout {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape));
    }
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace

Var reduce(Reduce kind, Var x, std::size_t axis) {
    const Tensor& in = x.value();
    const AxisLayout l = axis_layout(in.shape(), axis, "reduce");
    Shape out_shape = in.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out(out_shape);
    const double n = static_cast<double>(l.extent);
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            double sum = 0.0;
            for (std::size_t e = 0; e < l.extent; ++e) {
                sum += in[(o * l.extent + e) * l.inner + i];
            }
            double result = sum;
            if (kind != Reduce::sum) {
                result = sum / n;
            }
            if (kind == Reduce::var) {
                const double mean = result;
                double sq = 0.0;
                for (std::size_t e = 0; e < l.extent; ++e) {
                    const double d = in[(o * l.extent + e) * l.inner + i] - mean;
                    sq += d * d;
                }
                result = sq / n;
            }
            out[o * l.inner + i] = result;
        }
    }
    const char* name = kind == Reduce::sum ? "sum" : kind == Reduce::mean ? "mean" : "var";
    return tape_of(x).record(name, {x}, std::move(out), [kind, l, n](const BackwardArgs& a) {
        const Tensor& xin = *a.inputs[0];
        Tensor& gx = *a.grads[0];
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                const double g = a.grad_output[o * l.inner + i];
                double mean = 0.0;
                if (kind == Reduce::var) {
                    for (std::size_t e = 0; e < l.extent; ++e) {
                        mean += xin[(o * l.extent + e) * l.inner + i];
                    }
                    mean /= n;
                }
                for (std::size_t e = 0; e < l.extent; ++e) {
                    const std::size_t idx = (o * l.extent + e) * l.inner + i;
                    switch (kind) {
                        case Reduce::sum:
                            gx[idx] += g;
                            break;
                        case Reduce::mean:
                            gx[idx] += g / n;
                            break;
                        case Reduce::var:
                            gx[idx] += g * 2.0 * (xin[idx] - mean) / n;
                            break;
                    }
                }
            }
        }
    });
}

Var softmax(Var x, std::size_t axis) {
    const Tensor& in = x.value();
    const AxisLayout l = axis_layout(in.shape(), axis, "softmax");
    Tensor out(in.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            auto idx = [&](std::size_t e) { return (o * l.extent + e) * l.inner + i; };
            double peak = in[idx(0)];
            for (std::size_t e = 1; e < l.extent; ++e) peak = std::max(peak, in[idx(e)]);
            double total = 0.0;
            for (std::size_t e = 0; e < l.extent; ++e) {
                out[idx(e)] = std::exp(in[idx(e)] - peak);
                total += out[idx(e)];
            }
            for (std::size_t e = 0; e < l.extent; ++e) out[idx(e)] /= total;
        }
    }
    return tape_of(x).record("softmax", {x}, std::move(out), [l](const BackwardArgs& a) {
        const Tensor& y = a.output;
        const Tensor& g = a.grad_output;
        Tensor& gx = *a.grads[0];
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                auto idx = [&](std::size_t e) { return (o * l.extent + e) * l.inner + i; };
                double dot = 0.0;
                for (std::size_t e = 0; e < l.extent; ++e) dot += g[idx(e)] * y[idx(e)];
                for (std::size_t e = 0; e < l.extent; ++e) gx[idx(e)] += y[idx(e)] * (g[idx(e)] - dot);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// concat / split / narrow

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(first));
    }
    std::vector<std::size_t> extents;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw ShapeError("concat: shape " + shape_to_string(s) + " does not conform to " +
                             shape_to_string(first) + " on axis " + std::to_string(axis));
        }
        extents.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    const AxisLayout l = axis_layout(out_shape, axis, "concat");
    Tensor out(out_shape);
    std::size_t start = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        const std::size_t block = extents[p] * l.inner;
        for (std::size_t o = 0; o < l.outer; ++o) {
            std::copy_n(v.data().data() + o * block, block, out.data().data() + (o * l.extent + start) * l.inner);
        }
        start += extents[p];
    }
    return tape_of(parts[0]).record("concat", parts, std::move(out), [l, extents](const BackwardArgs& a) {
        std::size_t begin = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
            const std::size_t block = extents[p] * l.inner;
            if (Tensor* gp = a.grads[p]) {
                for (std::size_t o = 0; o < l.outer; ++o) {
                    const double* src = a.grad_output.data().data() + (o * l.extent + begin) * l.inner;
                    double* dst = gp->data().data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            begin += extents[p];
        }
    });
}

Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t length) {
    const Tensor& in = x.value();
    const AxisLayout l = axis_layout(in.shape(), axis, "narrow");
    if (start + length > l.extent) {
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis length " + std::to_string(l.extent));
    }
    Shape out_shape = in.shape();
    out_shape[axis] = length;
    Tensor out(out_shape);
    const std::size_t block = length * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
        std::copy_n(in.data().data() + (o * l.extent + start) * l.inner, block, out.data().data() + o * block);
    }
    return tape_of(x).record("narrow", {x}, std::move(out), [l, start, block](const BackwardArgs& a) {
        Tensor& gx = *a.grads[0];
        for (std::size_t o = 0; o < l.outer; ++o) {
            const double* src = a.grad_output.data().data() + o * block;
            double* dst = gx.data().data() + (o * l.extent + start) * l.inner;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
    });
}

std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) {
        throw ShapeError("split: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape));
    }
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total != shape[axis]) {
        throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis has length " +
                         std::to_string(shape[axis]));
    }
    std::vector<Var> parts;
    std::size_t start = 0;
    for (auto s : sizes) {
        parts.push_back(narrow(x, axis, start, s));
        start += s;
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps, Mode mode) {
    std::vector<Tensor> analytic;
    {
        Graph graph(mode);
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(graph.input(t, true));
        const Var loss = fn(graph, vars);
        const Gradients grads = graph.tape().backward(loss);
        for (const auto& v : vars) {
            analytic.push_back(grads.has(v) ? grads.of(v) : Tensor(v.shape(), 0.0));
        }
    }
    auto evaluate = [&](const std::vector<Tensor>& values) {
        Graph graph(mode, false);
        std::vector<Var> vars;
        for (const auto& t : values) vars.push_back(graph.input(t));
        return fn(graph, vars).value()[0];
    };
    GradCheckResult result;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t e = 0; e < inputs[i].size(); ++e) {
            const double original = inputs[i][e];
            inputs[i][e] = original + eps;
            const double plus = evaluate(inputs);
            inputs[i][e] = original - eps;
            const double minus = evaluate(inputs);
            inputs[i][e] = original;
            const double numeric = (plus - minus) / (2.0 * eps);
            result.max_relative_error =
                std::max(result.max_relative_error, relative_error(analytic[i][e], numeric));
            ++result.checked;
        }
    }
    return result;
}

GradCheckResult grad_check_params(const std::function<Var(Graph&)>& fn, std::span<Tensor* const> targets,
                                  double eps, Mode mode, std::size_t max_per_tensor, std::uint64_t seed) {
    std::vector<Tensor> analytic;
    {
        Graph graph(mode);
        const Var loss = fn(graph);
        const Gradients grads = graph.tape().backward(loss);
        for (Tensor* t : targets) {
            Tensor g(t->shape(), 0.0);
            for (const auto& b : graph.bindings()) {
                if (b.parameter == t && grads.has(b.var)) {
                    g = grads.of(b.var);
                }
            }
            analytic.push_back(std::move(g));
        }
    }
    auto evaluate = [&] {
        Graph graph(mode, false);
        return fn(graph).value()[0];
    };
    Pcg64 rng(seed);
    GradCheckResult result;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Tensor& t = *targets[i];
        std::vector<std::size_t> elements(t.size());
        std::iota(elements.begin(), elements.end(), std::size_t{0});
        if (max_per_tensor != 0 && elements.size() > max_per_tensor) {
            rng.shuffle(std::span<std::size_t>(elements));
            elements.resize(max_per_tensor);
        }
        for (std::size_t e : elements) {
            const double original = t[e];
            t[e] = original + eps;
            const double plus = evaluate();
            t[e] = original - eps;
            const double minus = evaluate();
            t[e] = original;
            const double numeric = (plus - minus) / (2.0 * eps);
            result.max_relative_error =
                std::max(result.max_relative_error, relative_error(analytic[i][e], numeric));
            ++result.checked;
        }
    }
    return result;
}

}  // namespace mgc
