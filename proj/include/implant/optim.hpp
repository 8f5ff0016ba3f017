// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "implant/archive.hpp"
#include "implant/autodiff.hpp"

namespace implant {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with per-parameter moments keyed by parameter name.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    /// Applies one update from the accumulated grads, then zeroes them.
    void step(const std::vector<Parameter*>& params);
    long steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.lr = lr; }

    /// Entries "<prefix>m/<name>", "<prefix>v/<name>" and meta "<prefix>t".
    void save_state(TensorArchive& archive, const std::string& prefix = "adam/") const;
    void load_state(const TensorArchive& archive, const std::string& prefix = "adam/");

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace implant
