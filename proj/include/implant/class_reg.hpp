// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Stochastically gated cosine pull of the learned prompt embedding towards
// its class embedding.

#pragma once

#include <string>

#include "implant/autodiff.hpp"
#include "implant/rng.hpp"

namespace implant {

struct ClassRegConfig {
    double alpha_cl = 1.0;
    double p_cl = 1.0;
    /// Empty means class_prompt_for(class name) per object.
    std::string class_prompt;

    /// Throws std::invalid_argument unless 0 <= p_cl <= 1 and alpha_cl >= 0.
    void validate() const;
};

/// Draws p ~ U[0,1) once and returns p < p_cl.
bool sample_gate(Rng& rng, double p_cl);

/// gate ? 1 - alpha_cl * cos(c_p, c_c) : 0. c_c is a constant target.
ad::Var class_characterizing_loss(const ad::Var& c_p_pooled, const Tensor& c_c_pooled, bool gate, double alpha_cl);
double class_characterizing_loss(const Tensor& c_p_pooled, const Tensor& c_c_pooled, bool gate, double alpha_cl);

}  // namespace implant
