// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Object-specific losses: masked target-noise blending for one object, the
// k-subset combination over several objects, and pixel-to-latent masks.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/diffusion.hpp"
#include "implant/image.hpp"
#include "implant/rng.hpp"

namespace implant {

class MaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LatentMask {
    Tensor values;  // [h, w], entries 0 or 1

    int height() const { return values.dim(0); }
    int width() const { return values.dim(1); }
    double coverage() const;
    /// [channels, h, w] copy for elementwise use on latents.
    Tensor broadcast(int channels) const;

    static LatentMask filled(int h, int w, double v);
};

/// Area-average over each latent cell, then threshold at 0.5. Throws
/// MaskError when nothing survives ("object vanishes at latent scale").
LatentMask downsample_mask(const Mask& pixel_mask, int latent_h, int latent_w);

/// eps * m + eps_pred * (1 - m); eps_pred is data only.
Tensor blend_target_noise(const Tensor& eps, const Tensor& eps_pred, const LatentMask& mask);

/// One object's inputs to the masked term.
struct ObjectTerm {
    std::string identifier;
    LatentMask mask;
    ad::Var cond;  // encoded per-object prompt c_m
};

struct ObjectLoss {
    ad::Var total;
    ad::Var global;               // mean (eps - eps_theta(z_t, t, c))^2
    std::vector<ad::Var> masked;  // one per subset member
    std::vector<int> subset;
};

/// mean((eps~ - eps_theta(z~_t, t, c_m))^2) with z~ = z*m noised by the same t and eps.
ad::Var masked_term(const Tensor& z, int t, const Tensor& eps, const LatentMask& mask, const ad::Var& cond_m,
                    const Denoiser& model, const NoiseSchedule& schedule);

ObjectLoss single_object_loss(const Tensor& z, int t, const Tensor& eps, const ObjectTerm& object, const ad::Var& cond,
                              const Denoiser& model, const NoiseSchedule& schedule);

/// Sum of masked terms over `subset` plus one global term. Throws LossError
/// when |subset| != k, on repeated identifiers or on invalid indices.
ObjectLoss multi_object_loss(const Tensor& z, int t, const Tensor& eps, const std::vector<ObjectTerm>& objects,
                             const std::vector<int>& subset, int k, const ad::Var& cond, const Denoiser& model,
                             const NoiseSchedule& schedule);

enum class SubsetStrategy { Uniform, RoundRobin };

SubsetStrategy parse_subset_strategy(const std::string& name);
std::string to_string(SubsetStrategy s);

class CombinationSchedule {
public:
    /// Throws LossError unless r >= k >= 1.
    CombinationSchedule(int r, int k, SubsetStrategy strategy = SubsetStrategy::Uniform);

    int r() const { return r_; }
    int k() const { return k_; }
    SubsetStrategy strategy() const { return strategy_; }
    /// All k-combinations of {0..r-1}, lexicographic.
    const std::vector<std::vector<int>>& subsets() const { return subsets_; }
    std::size_t cursor() const { return cursor_; }
    void set_cursor(std::size_t c);

private:
    friend std::vector<int> next_subset(CombinationSchedule& schedule, Rng& rng);
    int r_, k_;
    SubsetStrategy strategy_;
    std::vector<std::vector<int>> subsets_;
    std::size_t cursor_ = 0;
};

/// Uniform: one draw from rng. RoundRobin: subsets in order, rng untouched.
std::vector<int> next_subset(CombinationSchedule& schedule, Rng& rng);

}  // namespace implant
