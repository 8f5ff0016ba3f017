// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// The toy text-to-image backend: vocabulary, encoder pair, latent codec,
// denoiser and schedule, with deterministic pretraining on the shapes
// dataset and a weight cache.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "implant/diffusion.hpp"
#include "implant/encoders.hpp"

namespace implant {

struct PretrainConfig {
    int codec_steps = 6000;
    double codec_lr = 2e-3;
    int clip_steps = 600;
    int clip_batch = 16;
    double clip_lr = 2e-3;
    double clip_temperature = 0.1;
    int unet_steps = 30000;
    double unet_lr = 1e-3;
    /// Denoiser loss weight (1 - ab) / ab clamped to [1, cap]; 1 disables it.
    double unet_weight_cap = 20.0;
    int latent_stat_samples = 256;
};

struct BackendConfig {
    std::uint64_t seed = 1234;
    int image_size = 64;
    int embed_dim = 32;
    int timesteps = 100;
    double beta_start = 5e-4;
    double beta_end = 0.1;
    TextEncoderConfig text;
    ImageEncoderConfig image;
    CodecConfig codec;
    UNetConfig unet;
    PretrainConfig pretrain;

    /// Canonical key=value listing of every field.
    std::string describe() const;
    /// Hex digest of describe(); names the cache entry.
    std::string fingerprint() const;
    void validate() const;
};

using LogFn = std::function<void(const std::string&)>;

struct PretrainReport {
    double codec_loss = 0.0;  // mean over the last 100 steps
    double clip_loss = 0.0;
    double unet_loss = 0.0;
    double codec_mae = 0.0;   // reconstruction error on held-out scenes
};

class ToyBackend {
public:
    /// Randomly initialized, untrained.
    explicit ToyBackend(const BackendConfig& cfg);

    static ToyBackend pretrained(const BackendConfig& cfg, const LogFn& log = {}, PretrainReport* report = nullptr);
    /// Loads "<cache_dir>/backend-<fingerprint>.safetensors" or pretrains and stores it.
    static ToyBackend load_or_pretrain(const BackendConfig& cfg, const std::filesystem::path& cache_dir, const LogFn& log = {});
    /// $IMPLANT_CACHE_DIR, else $XDG_CACHE_HOME/implant, else $HOME/.cache/implant.
    static std::filesystem::path default_cache_dir();

    void save(const std::filesystem::path& path) const;
    /// Throws ArchiveError on a missing tensor or a config mismatch.
    static ToyBackend load(const std::filesystem::path& path, const BackendConfig& cfg);

    const BackendConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    TextEncoder& text() { return text_; }
    const TextEncoder& text() const { return text_; }
    ImageEncoder& image() { return image_; }
    const ImageEncoder& image() const { return image_; }
    ToyCodec& codec() { return codec_; }
    const ToyCodec& codec() const { return codec_; }
    ToyUNet& unet() { return unet_; }
    const ToyUNet& unet() const { return unet_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;
    /// FNV-1a over every base weight (names and values).
    std::uint64_t weights_hash() const;
    std::size_t parameter_count() const;

private:
    ToyBackend(const BackendConfig& cfg, Rng&& rng);

    BackendConfig cfg_;
    Vocabulary vocab_;
    TextEncoder text_;
    ImageEncoder image_;
    ToyCodec codec_;
    ToyUNet unet_;
    NoiseSchedule schedule_;
};

// Pretraining stages, run in this order by ToyBackend::pretrained.
double pretrain_codec(ToyBackend& backend, const LogFn& log = {});
void fit_latent_normalization(ToyBackend& backend);
double pretrain_clip(ToyBackend& backend, const LogFn& log = {});
double pretrain_denoiser(ToyBackend& backend, const LogFn& log = {});
/// Mean abs pixel error of decode(encode(x)) over freshly drawn scenes.
double codec_reconstruction_error(const ToyBackend& backend, int samples, std::uint64_t seed);

}  // namespace implant
