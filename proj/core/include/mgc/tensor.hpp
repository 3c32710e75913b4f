// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors and a reverse-mode differentiation tape.
//
// A `Tensor` is a plain value (shape + row-major data). Differentiable
// computation happens on a `Tape`: every operation appends a node holding its
// forward value and a backward rule, and `Var` is a cheap handle to a node.
// Node inputs always refer to earlier nodes, so a single reverse sweep over
// the node list is a valid topological order for backpropagation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mgc/rng.hpp"

namespace mgc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor {
   public:
    Tensor() = default;
    /// Zero-filled tensor. Zero extents are allowed here (empty stop-channel
    /// maps); `create`-style factories below reject them.
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(const Shape& shape);
    static Tensor constant(const Shape& shape, double value);
    static Tensor uniform(const Shape& shape, std::uint64_t seed, double lo, double hi);
    static Tensor uniform(const Shape& shape, Pcg64& rng, double lo, double hi);
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    /// Bitwise equality of shape and data.
    friend bool operator==(const Tensor& a, const Tensor& b);

   private:
    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Tape

using NodeId = std::uint32_t;
class Tape;

/// Handle to a tape node.
class Var {
   public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    NodeId id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

   private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

/// Arguments handed to a node's backward rule. `grads[i]` is null when input
/// i does not require a gradient; otherwise it is a zero-initialized (or
/// partially accumulated) tensor of the input's shape to add into.
struct BackwardArgs {
    std::span<const Tensor* const> inputs;
    const Tensor& output;
    const Tensor& grad_output;
    std::span<Tensor* const> grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Gradients {
   public:
    Gradients() = default;
    Gradients(std::vector<Tensor> by_node, std::vector<bool> present)
        : by_node_(std::move(by_node)), present_(std::move(present)) {}

    bool has(Var v) const { return v.id() < present_.size() && present_[v.id()]; }
    /// Gradient of the loss w.r.t. `v`. Throws ContractError if none was produced.
    const Tensor& of(Var v) const;

   private:
    std::vector<Tensor> by_node_;
    std::vector<bool> present_;
};

class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var variable(Tensor value) { return leaf(std::move(value), true); }

    /// Appends an operation node. The backward rule is dropped when no input
    /// requires a gradient.
    Var record(const char* kind, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);
    Var record(const char* kind, std::span<const Var> inputs, Tensor value, BackwardFn backward);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    const char* kind(NodeId id) const { return nodes_[id].kind; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss.
    Gradients backward(Var loss) const;

   private:
    struct Node {
        const char* kind;
        std::vector<NodeId> inputs;
        Tensor value;
        BackwardFn backward;
        bool requires_grad;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Graph: one forward pass. Binds model parameters to tape leaves.

enum class Mode { train, eval };

class Graph {
   public:
    struct Binding {
        Tensor* parameter;
        Var var;
    };

    explicit Graph(Mode mode, bool track_gradients = true)
        : mode_(mode), track_(track_gradients) {}

    Tape& tape() { return tape_; }
    Mode mode() const { return mode_; }
    bool training() const { return mode_ == Mode::train; }
    bool tracking() const { return track_; }

    /// Leaf for a trainable tensor; requires grad iff the graph tracks gradients.
    Var param(Tensor& parameter);
    Var input(Tensor value, bool requires_grad = false) { return tape_.leaf(std::move(value), requires_grad); }
    Var constant(Tensor value) { return tape_.constant(std::move(value)); }

    const std::vector<Binding>& bindings() const { return bindings_; }

   private:
    Tape tape_;
    Mode mode_;
    bool track_;
    std::vector<Binding> bindings_;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast `b` onto `a`'s shape: `b` is
// right-aligned against `a` and each of its axes must equal `a`'s or be 1.

enum class Unary { relu, sigmoid, tanh, exp, log, sqrt };
enum class Binary { add, sub, mul, div };
enum class Reduce { sum, mean, var };

Var elementwise(Unary kind, Var x);
Var elementwise(Binary kind, Var a, Var b);

inline Var add(Var a, Var b) { return elementwise(Binary::add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(Binary::sub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(Binary::mul, a, b); }
inline Var div(Var a, Var b) { return elementwise(Binary::div, a, b); }
inline Var relu(Var x) { return elementwise(Unary::relu, x); }
inline Var sigmoid(Var x) { return elementwise(Unary::sigmoid, x); }
inline Var tanh(Var x) { return elementwise(Unary::tanh, x); }
inline Var exp(Var x) { return elementwise(Unary::exp, x); }
inline Var log(Var x) { return elementwise(Unary::log, x); }
inline Var sqrt(Var x) { return elementwise(Unary::sqrt, x); }

Var add_scalar(Var x, double value);
Var mul_scalar(Var x, double value);
/// max(x, floor); gradient is passed only where x > floor.
Var clamp_min(Var x, double floor);

Var matmul(Var a, Var b);
Var transpose(Var x);
Var reshape(Var x, Shape shape);

/// Stride-1 "same" convolution. x: [C_in, T] or [B, C_in, T];
/// weight: [C_out, C_in, K] with K odd; bias: [C_out].
Var conv1d(Var x, Var weight, Var bias, std::size_t dilation);

Var reduce(Reduce kind, Var x, std::size_t axis);
Var softmax(Var x, std::size_t axis);

Var concat(std::span<const Var> parts, std::size_t axis);
std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes);
/// Contiguous sub-range [start, start + length) along `axis`, copied.
Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t length);

// ---------------------------------------------------------------------------
// Central-difference gradient verification.

using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

/// relative error = |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double relative_error(double analytic, double numeric);

/// Checks d fn / d inputs for every input element.
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps = 1e-5,
                           Mode mode = Mode::train);

/// Checks gradients w.r.t. tensors that `fn` binds through `Graph::param`.
/// When `max_per_tensor` is nonzero, only that many seeded-random elements of
/// each target are perturbed.
GradCheckResult grad_check_params(const std::function<Var(Graph&)>& fn,
                                  std::span<Tensor* const> targets, double eps = 1e-5,
                                  Mode mode = Mode::train, std::size_t max_per_tensor = 0,
                                  std::uint64_t seed = 0);

}  // namespace mgc
