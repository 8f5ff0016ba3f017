// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a node in a dynamically built graph. Graphs are built
// per forward pass and released when the last handle goes away. Leaves bound
// to a Parameter accumulate their gradient into Parameter::grad on backward().

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "implant/tensor.hpp"

namespace implant {

struct Parameter {
    std::string name;
    Tensor value;
    // Scratch written by backward(); mutable so forward passes can take const models.
    mutable Tensor grad;
    bool trainable = false;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = false)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::like(value)), trainable(train) {}

    void zero_grad() const {
        if (grad.shape() != value.shape()) grad = Tensor::like(value);
        else grad.fill(0.0);
    }
};

namespace ad {

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;

    Tensor& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor::like(value);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }
    std::size_t size() const { return node_->value.size(); }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Gradient accumulated by the last backward() through this node.
    const Tensor& grad() const { return node_->grad; }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
/// Leaf bound to `p`. It requires grad iff p.trainable.
Var param(const Parameter& p);
/// Leaf that always requires grad; gradient readable through Var::grad().
Var leaf(Tensor value);
Var detach(const Var& x);

/// Runs backpropagation from a single-element root.
void backward(const Var& root);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var mul_const(const Var& a, const Tensor& m);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a list of single-element vars, reduced left to right.
Var add_n(const std::vector<Var>& terms);

// Matrix ops on rank-2 tensors.
Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
/// x · wᵀ + bias, x [n,in], w [out,in], bias [out] (may be undefined).
Var linear(const Var& x, const Var& w, const Var& bias = Var());
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var select_rows(const Var& x, const std::vector<int>& rows);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& x, int start, int len);
Var concat_cols(const std::vector<Var>& parts);
/// [n,d] -> [d]
Var mean_rows(const Var& x);
Var reshape(const Var& x, Shape shape);

// Spatial ops on [C,H,W].
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
/// Transposed convolution with stride == kernel (non-overlapping patches). w [Cin,Cout,k,k].
Var conv_transpose_patch(const Var& x, const Var& w, const Var& bias);
Var upsample_nearest2x(const Var& x);
/// x [C,H,W] + v [C] broadcast over space.
Var add_channel(const Var& x, const Var& v);
/// [C,H,W] -> [C]
Var mean_spatial(const Var& x);

/// Rows scaled to unit L2 norm. Throws on a zero row.
Var normalize_rows(const Var& x);
/// Mean over rows of -log softmax(logits)[i, target[i]].
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets);

/// Cosine similarity of two equally sized tensors, flattened. Throws on zero norm.
Var cosine(const Var& a, const Var& b);

}  // namespace ad
}  // namespace implant
