// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/class_reg.hpp"

#include <stdexcept>

namespace implant {

void ClassRegConfig::validate() const {
    if (!(p_cl >= 0.0 && p_cl <= 1.0)) throw std::invalid_argument("class_reg.p_cl must lie in [0,1]");
    if (!(alpha_cl >= 0.0)) throw std::invalid_argument("class_reg.alpha_cl must be >= 0");
}

bool sample_gate(Rng& rng, double p_cl) { return rng.uniform() < p_cl; }

ad::Var class_characterizing_loss(const ad::Var& c_p_pooled, const Tensor& c_c_pooled, bool gate, double alpha_cl) {
    if (!gate) return ad::constant(Tensor::scalar(0.0));
    try {
        return ad::add_scalar(ad::scale(ad::cosine(c_p_pooled, ad::constant(c_c_pooled)), -alpha_cl), 1.0);
    } catch (const std::domain_error&) {
        throw std::domain_error("class-characterizing loss with a zero-norm argument");
    }
}

double class_characterizing_loss(const Tensor& c_p_pooled, const Tensor& c_c_pooled, bool gate, double alpha_cl) {
    return class_characterizing_loss(ad::constant(c_p_pooled), c_c_pooled, gate, alpha_cl).item();
}

}  // namespace implant
