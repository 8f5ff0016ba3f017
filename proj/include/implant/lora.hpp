// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Low-rank adapters for frozen linear projections: y = W·v + scale·B·(A·v).

#pragma once

#include <string>
#include <vector>

#include "implant/autodiff.hpp"
#include "implant/rng.hpp"

namespace implant {

struct LoraConfig {
    int rank = 4;
    double scale = 1.0;
    double init_std = 0.02;
    /// Also attach adapters to the text encoder's self-attention projections.
    bool adapt_text_encoder = false;
};

struct LoraAdapter {
    std::string target_name;
    int rank = 0;
    double scale = 1.0;
    Parameter A;  // [rank, d_in], Gaussian init
    Parameter B;  // [d_out, rank], zero init

    static LoraAdapter create(std::string target, int d_in, int d_out, const LoraConfig& cfg, Rng& rng);

    int d_in() const { return A.value.dim(1); }
    int d_out() const { return B.value.dim(0); }
    /// scale · B · A, shaped like the wrapped weight.
    Tensor delta() const;
    std::size_t parameter_count() const { return A.value.size() + B.value.size(); }
};

/// Base projection plus an optional adapter. The base weight is only read.
class LoraLinearMap {
public:
    LoraLinearMap(const Parameter& base_weight, const LoraAdapter* adapter);

    /// x [n, d_in] -> [n, d_out]
    ad::Var forward(const ad::Var& x, const ad::Var& bias = ad::Var()) const;
    Tensor apply(const Tensor& v) const;
    /// W + Δ
    Tensor merged_weight() const;

private:
    const Parameter* base_;
    const LoraAdapter* adapter_;
};

/// Throws std::invalid_argument when the adapter shape does not fit the weight.
LoraLinearMap wrap_projection(const Parameter& base_weight, const LoraAdapter& adapter);

/// Singular values of a dense matrix, descending.
std::vector<double> singular_values(const Tensor& matrix);
/// Number of singular values above `tol`.
int numerical_rank(const Tensor& matrix, double tol = 1e-8);

}  // namespace implant
