// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace implant::nn {

Linear::Linear(std::string name, int in, int out, bool bias, Rng& rng, double gain) : name_(std::move(name)) {
    const double std = gain / std::sqrt(static_cast<double>(in));
    weight_ = Parameter(name_ + ".weight", rng.normal_tensor({out, in}, std));
    if (bias) bias_ = Parameter(name_ + ".bias", Tensor({out}, 0.0));
}

ad::Var Linear::forward(const ad::Var& x) const {
    LoraLinearMap map(weight_, adapter_ ? &*adapter_ : nullptr);
    return map.forward(x, bias_ ? ad::param(*bias_) : ad::Var());
}

void Linear::attach_adapter(const LoraConfig& cfg, Rng& rng) {
    adapter_ = LoraAdapter::create(name_, in_features(), out_features(), cfg, rng);
}

void Linear::set_adapter(LoraAdapter a) {
    LoraLinearMap check(weight_, &a);  // validates shapes
    (void)check;
    adapter_ = std::move(a);
}

void Linear::visit(const ParamVisitor& f) {
    f(weight_);
    if (bias_) f(*bias_);
}

void Linear::visit(const ConstParamVisitor& f) const {
    f(weight_);
    if (bias_) f(*bias_);
}

Conv2d::Conv2d(std::string name, int in, int out, int kernel, int stride, int pad, Rng& rng, double gain)
    : stride_(stride), pad_(pad) {
    const double std = gain / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight_ = Parameter(name + ".weight", rng.normal_tensor({out, in, kernel, kernel}, std));
    bias_ = Parameter(name + ".bias", Tensor({out}, 0.0));
}

ad::Var Conv2d::forward(const ad::Var& x) const {
    return ad::conv2d(x, ad::param(weight_), ad::param(bias_), stride_, pad_);
}

void Conv2d::visit(const ParamVisitor& f) {
    f(weight_);
    f(bias_);
}

void Conv2d::visit(const ConstParamVisitor& f) const {
    f(weight_);
    f(bias_);
}

PatchExpand::PatchExpand(std::string name, int in, int out, int kernel, Rng& rng, double gain) {
    const double std = gain / std::sqrt(static_cast<double>(in));
    weight_ = Parameter(name + ".weight", rng.normal_tensor({in, out, kernel, kernel}, std));
    bias_ = Parameter(name + ".bias", Tensor({out}, 0.0));
}

ad::Var PatchExpand::forward(const ad::Var& x) const {
    return ad::conv_transpose_patch(x, ad::param(weight_), ad::param(bias_));
}

void PatchExpand::visit(const ParamVisitor& f) {
    f(weight_);
    f(bias_);
}

void PatchExpand::visit(const ConstParamVisitor& f) const {
    f(weight_);
    f(bias_);
}

LayerNorm::LayerNorm(std::string name, int dim)
    : gain_(name + ".gain", Tensor({dim}, 1.0)), bias_(name + ".bias", Tensor({dim}, 0.0)) {}

ad::Var LayerNorm::forward(const ad::Var& x) const {
    return ad::layer_norm_rows(x, ad::param(gain_), ad::param(bias_));
}

void LayerNorm::visit(const ParamVisitor& f) {
    f(gain_);
    f(bias_);
}

void LayerNorm::visit(const ConstParamVisitor& f) const {
    f(gain_);
    f(bias_);
}

Tensor timestep_embedding(int t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("timestep embedding dim must be even");
    Tensor e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[static_cast<std::size_t>(i)] = std::sin(t * freq);
        e[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
    }
    return e;
}

}  // namespace implant::nn
