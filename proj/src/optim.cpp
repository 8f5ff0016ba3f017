// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace implant {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
        throw std::invalid_argument("Adam betas must lie in [0,1)");
}

void Adam::step(const std::vector<Parameter*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        if (p->grad.shape() != p->value.shape()) p->grad = Tensor::like(p->value);
        Tensor& m = m_.try_emplace(p->name, Tensor::like(p->value)).first->second;
        Tensor& v = v_.try_emplace(p->name, Tensor::like(p->value)).first->second;
        if (m.shape() != p->value.shape()) throw std::logic_error("optimizer state shape drift for " + p->name);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            p->value[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
        p->grad.fill(0.0);
    }
}

void Adam::save_state(TensorArchive& archive, const std::string& prefix) const {
    for (const auto& [name, m] : m_) archive.put(prefix + "m/" + name, m);
    for (const auto& [name, v] : v_) archive.put(prefix + "v/" + name, v);
    archive.set_meta(prefix + "t", std::to_string(t_));
}

void Adam::load_state(const TensorArchive& archive, const std::string& prefix) {
    m_.clear();
    v_.clear();
    for (const auto& n : archive.names_with_prefix(prefix + "m/")) m_[n.substr(prefix.size() + 2)] = archive.get(n);
    for (const auto& n : archive.names_with_prefix(prefix + "v/")) v_[n.substr(prefix.size() + 2)] = archive.get(n);
    t_ = archive.has_meta(prefix + "t") ? std::stol(archive.meta(prefix + "t")) : 0;
}

}  // namespace implant
