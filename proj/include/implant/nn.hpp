// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>

#include "implant/autodiff.hpp"
#include "implant/lora.hpp"
#include "implant/rng.hpp"

namespace implant::nn {

using ParamVisitor = std::function<void(Parameter&)>;
using ConstParamVisitor = std::function<void(const Parameter&)>;

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in, int out, bool bias, Rng& rng, double gain = 1.0);

    /// x [n, in] -> [n, out]; includes the adapter when one is attached.
    ad::Var forward(const ad::Var& x) const;

    const std::string& name() const { return name_; }
    int in_features() const { return weight_.value.dim(1); }
    int out_features() const { return weight_.value.dim(0); }

    void attach_adapter(const LoraConfig& cfg, Rng& rng);
    void detach_adapter() { adapter_.reset(); }
    bool has_adapter() const { return adapter_.has_value(); }
    LoraAdapter& adapter() { return *adapter_; }
    const LoraAdapter& adapter() const { return *adapter_; }
    void set_adapter(LoraAdapter a);

    Parameter& weight() { return weight_; }
    const Parameter& weight() const { return weight_; }

    /// Base weights only; adapter parameters are visited separately.
    void visit(const ParamVisitor& f);
    void visit(const ConstParamVisitor& f) const;

private:
    std::string name_;
    Parameter weight_;
    std::optional<Parameter> bias_;
    std::optional<LoraAdapter> adapter_;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in, int out, int kernel, int stride, int pad, Rng& rng, double gain = 1.0);
    ad::Var forward(const ad::Var& x) const;
    void visit(const ParamVisitor& f);
    void visit(const ConstParamVisitor& f) const;

private:
    Parameter weight_, bias_;
    int stride_ = 1, pad_ = 0;
};

/// Stride == kernel transposed convolution.
class PatchExpand {
public:
    PatchExpand() = default;
    PatchExpand(std::string name, int in, int out, int kernel, Rng& rng, double gain = 1.0);
    ad::Var forward(const ad::Var& x) const;
    void visit(const ParamVisitor& f);
    void visit(const ConstParamVisitor& f) const;

private:
    Parameter weight_, bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(std::string name, int dim);
    ad::Var forward(const ad::Var& x) const;
    void visit(const ParamVisitor& f);
    void visit(const ConstParamVisitor& f) const;

private:
    Parameter gain_, bias_;
};

/// Sinusoidal embedding of an integer timestep, length `dim`.
Tensor timestep_embedding(int t, int dim);

}  // namespace implant::nn
