// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Latent diffusion backend pieces: noise schedule, forward noising, the
// conditional denoiser interface with a toy cross-attention UNet, the toy
// latent codec, the epsilon-prediction loss and a deterministic DDIM sampler.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "implant/autodiff.hpp"
#include "implant/image.hpp"
#include "implant/nn.hpp"

namespace implant {

class DiffusionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoiseSchedule {
public:
    /// Validates 0 < beta < 1 for every step.
    explicit NoiseSchedule(std::vector<double> betas);
    static NoiseSchedule linear(int steps = 100, double beta_start = 1e-4, double beta_end = 0.02);

    int steps() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_.at(check(t)); }
    double alpha_bar(int t) const { return alphas_bar_.at(check(t)); }
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas_bar() const { return alphas_bar_; }

private:
    std::size_t check(int t) const;
    std::vector<double> betas_;
    std::vector<double> alphas_bar_;
};

/// sqrt(ᾱ)·z + sqrt(1−ᾱ)·eps
Tensor add_noise(const Tensor& z, const Tensor& eps, double alpha_bar);
Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// ε_θ(z_t, t, c). Implementations must be differentiable in their trainable
/// parameters and in `cond`.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    /// z_t [C,h,w], cond [n, d] -> predicted noise [C,h,w]
    virtual ad::Var predict(const ad::Var& z_t, int t, const ad::Var& cond) const = 0;
};

struct LatentBatch {
    Tensor z;
    int t = 0;
    Tensor eps;
    ad::Var cond;
};

/// Mean squared error between eps and ε_θ(z_t, t, c); z_t is formed with the schedule.
ad::Var ldm_loss(const LatentBatch& batch, const Denoiser& model, const NoiseSchedule& schedule);

/// Runs `model` on every batch element independently.
std::vector<Tensor> denoise_batch(const Denoiser& model, const NoiseSchedule& schedule, const std::vector<LatentBatch>& batch);

struct UNetConfig {
    int latent_channels = 4;
    int latent_size = 8;
    int channels = 32;
    int mid_channels = 48;
    int cond_dim = 32;
    int heads = 2;
    int time_dim = 32;
};

/// Two-level UNet-like denoiser with one cross-attention block per level.
class ToyUNet : public Denoiser {
public:
    ToyUNet(const UNetConfig& cfg, int num_timesteps, Rng& rng);

    ad::Var predict(const ad::Var& z_t, int t, const ad::Var& cond) const override;

    const UNetConfig& config() const { return cfg_; }

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;
    /// The q/k/v/out projections of both cross-attention blocks.
    void for_each_cross_attention_projection(const std::function<void(nn::Linear&)>& f);
    void for_each_cross_attention_projection(const std::function<void(const nn::Linear&)>& f) const;

private:
    struct ResBlock {
        nn::Conv2d conv1, conv2;
        nn::Linear time_proj;
        ad::Var forward(const ad::Var& x, const ad::Var& temb) const;
        void visit(const nn::ParamVisitor& f);
        void visit(const nn::ConstParamVisitor& f) const;
    };
    struct CrossAttention {
        nn::LayerNorm norm;
        Parameter position;  // [h*w, C]
        nn::Linear to_q, to_k, to_v, to_out;
        int heads = 1;
        ad::Var forward(const ad::Var& x, const ad::Var& cond) const;
        void visit(const nn::ParamVisitor& f);
        void visit(const nn::ConstParamVisitor& f) const;
    };

    UNetConfig cfg_;
    int num_timesteps_;
    nn::Linear time1_, time2_;
    nn::Conv2d conv_in_;
    ResBlock res_hi_;
    CrossAttention attn_hi_;
    nn::Conv2d down_;
    ResBlock res_lo_;
    CrossAttention attn_lo_;
    nn::Conv2d up_;
    ResBlock res_out_;
    nn::Conv2d conv_out_;
};

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    /// image -> latent [C, h, w]
    virtual Tensor encode(const Image& image) const = 0;
    virtual Image decode(const Tensor& latent) const = 0;
    virtual int image_size() const = 0;
    virtual Shape latent_shape() const = 0;
};

struct CodecConfig {
    int image_size = 64;
    int latent_channels = 4;
    int hidden = 16;
};

/// Strided-convolution autoencoder with downsample factor 8 and latent
/// normalization (per-channel shift, global scale) fitted after training.
class ToyCodec : public LatentCodec {
public:
    ToyCodec(const CodecConfig& cfg, Rng& rng);

    Tensor encode(const Image& image) const override;
    Image decode(const Tensor& latent) const override;
    int image_size() const override { return cfg_.image_size; }
    Shape latent_shape() const override { return {cfg_.latent_channels, cfg_.image_size / 8, cfg_.image_size / 8}; }
    int downsample_factor() const { return 8; }

    /// Differentiable halves, on unnormalized latents.
    ad::Var encode_raw(const ad::Var& chw) const;
    ad::Var decode_raw(const ad::Var& latent) const;

    Tensor& latent_shift() { return shift_; }
    const Tensor& latent_shift() const { return shift_; }
    double latent_scale() const { return scale_; }
    void set_latent_scale(double s) { scale_ = s; }

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;

private:
    CodecConfig cfg_;
    nn::Conv2d enc1_, enc2_;
    nn::PatchExpand dec1_, dec2_;
    Tensor shift_;
    double scale_ = 1.0;
};

struct SamplerConfig {
    int steps = 50;
    double guidance = 1.0;
    std::uint64_t seed = 0;
};

/// Descending DDIM timesteps from T-1 to 0.
std::vector<int> ddim_timesteps(int num_timesteps, int steps);

/// Deterministic (eta = 0) DDIM from seeded Gaussian noise. With guidance != 1
/// the prediction is uncond + guidance·(cond − uncond), so `uncond` is required.
Tensor ddim_sample(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& cond,
                   const std::optional<Tensor>& uncond, const Shape& latent_shape, const SamplerConfig& cfg);

}  // namespace implant
