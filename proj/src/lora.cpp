// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/lora.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace implant {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

LoraAdapter LoraAdapter::create(std::string target, int d_in, int d_out, const LoraConfig& cfg, Rng& rng) {
    if (cfg.rank <= 0) throw std::invalid_argument("LoRA rank must be positive");
    if (d_in <= 0 || d_out <= 0) throw std::invalid_argument("LoRA dims must be positive");
    LoraAdapter a;
    a.target_name = std::move(target);
    a.rank = cfg.rank;
    a.scale = cfg.scale;
    a.A = Parameter(a.target_name + ".lora_A", rng.normal_tensor({cfg.rank, d_in}, cfg.init_std), true);
    a.B = Parameter(a.target_name + ".lora_B", Tensor({d_out, cfg.rank}, 0.0), true);
    return a;
}

Tensor LoraAdapter::delta() const {
    Tensor d({d_out(), d_in()});
    Eigen::Map<RowMat>(d.data(), d_out(), d_in()) =
        scale * Eigen::Map<const RowMat>(B.value.data(), d_out(), rank) * Eigen::Map<const RowMat>(A.value.data(), rank, d_in());
    return d;
}

LoraLinearMap::LoraLinearMap(const Parameter& base_weight, const LoraAdapter* adapter)
    : base_(&base_weight), adapter_(adapter) {
    if (base_weight.value.rank() != 2) throw std::invalid_argument("projection weight must be a matrix");
    if (adapter) {
        const int out = base_weight.value.dim(0), in = base_weight.value.dim(1);
        if (adapter->A.value.rank() != 2 || adapter->B.value.rank() != 2 || adapter->d_in() != in ||
            adapter->d_out() != out || adapter->A.value.dim(0) != adapter->rank || adapter->B.value.dim(1) != adapter->rank) {
            throw std::invalid_argument("LoRA adapter '" + adapter->target_name + "' dimensions A" +
                                        shape_str(adapter->A.value.shape()) + " B" + shape_str(adapter->B.value.shape()) +
                                        " do not fit weight " + shape_str(base_weight.value.shape()));
        }
    }
}

ad::Var LoraLinearMap::forward(const ad::Var& x, const ad::Var& bias) const {
    ad::Var y = ad::linear(x, ad::param(*base_), bias);
    if (!adapter_) return y;
    ad::Var low = ad::linear(ad::linear(x, ad::param(adapter_->A)), ad::param(adapter_->B));
    return ad::add(y, ad::scale(low, adapter_->scale));
}

Tensor LoraLinearMap::apply(const Tensor& v) const {
    const Tensor x = v.rank() == 1 ? v.reshaped({1, static_cast<int>(v.size())}) : v;
    Tensor y = forward(ad::constant(x)).value();
    return v.rank() == 1 ? y.reshaped({static_cast<int>(y.size())}) : y;
}

Tensor LoraLinearMap::merged_weight() const {
    Tensor w = base_->value;
    if (adapter_) {
        const Tensor d = adapter_->delta();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += d[i];
    }
    return w;
}

LoraLinearMap wrap_projection(const Parameter& base_weight, const LoraAdapter& adapter) {
    return LoraLinearMap(base_weight, &adapter);
}

std::vector<double> singular_values(const Tensor& matrix) {
    if (matrix.rank() != 2) throw std::invalid_argument("singular_values expects a matrix");
    RowMat m = Eigen::Map<const RowMat>(matrix.data(), matrix.dim(0), matrix.dim(1));
    Eigen::JacobiSVD<RowMat> svd(m);
    const auto& s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

int numerical_rank(const Tensor& matrix, double tol) {
    int r = 0;
    for (double s : singular_values(matrix))
        if (s > tol) ++r;
    return r;
}

}  // namespace implant
