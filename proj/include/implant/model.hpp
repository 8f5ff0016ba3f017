// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// A backend with implanted objects: learnable prompt rows bound to
// identifiers and LoRA adapters on the cross-attention projections.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "implant/archive.hpp"
#include "implant/backend.hpp"
#include "implant/lora.hpp"

namespace implant {

struct NamedParameter {
    std::string name;  // "lora/<target>/A", "lora/<target>/B" or "prompt_embedding/<identifier>"
    Parameter* param;
};

/// Adapter matrices followed by prompt rows, in the given order.
std::vector<NamedParameter> trainable_parameters(const std::vector<LoraAdapter*>& adapters,
                                                 const std::vector<PromptEmbedding*>& embeddings);
std::size_t parameter_count(const std::vector<NamedParameter>& params);

class ImplantModel : public Denoiser {
public:
    explicit ImplantModel(ToyBackend backend);

    ToyBackend& backend() { return backend_; }
    const ToyBackend& backend() const { return backend_; }
    const Vocabulary& vocab() const { return vocab_; }

    /// Reserves the identifier and binds `rows` [n_tokens, dim] to it.
    PromptEmbedding& add_identifier(const std::string& identifier, Tensor rows);
    bool has_identifier(const std::string& identifier) const { return embeddings_.count(identifier) != 0; }
    PromptEmbedding& embedding(const std::string& identifier);
    const PromptEmbedding& embedding(const std::string& identifier) const;
    std::vector<std::string> identifiers() const;

    /// Adapters on every cross-attention q/k/v/out projection (and the text
    /// encoder attention when configured). A is drawn per target from `seed`.
    void attach_adapters(const LoraConfig& cfg, std::uint64_t seed);
    void detach_adapters();
    bool has_adapters() const { return lora_.has_value(); }
    const std::optional<LoraConfig>& lora_config() const { return lora_; }
    std::vector<LoraAdapter*> adapters();
    std::vector<const LoraAdapter*> adapters() const;

    EmbeddingTable table() const;
    std::vector<int> tokenize(const std::string& prompt) const;
    /// Differentiable in the prompt rows (and text adapters).
    TextEncoding encode_prompt(const std::string& prompt) const;

    ad::Var predict(const ad::Var& z_t, int t, const ad::Var& cond) const override;

    std::vector<NamedParameter> trainable_parameters();
    std::size_t total_parameter_count() const;
    /// Hash of all frozen backend weights.
    std::uint64_t frozen_hash() const { return backend_.weights_hash(); }

    Tensor generate_latent(const std::string& prompt, const SamplerConfig& sampler) const;
    Image generate(const std::string& prompt, const SamplerConfig& sampler) const;

    /// Adapters as "lora/<target>/{A,B}" and prompt rows as "prompt_embedding/<id>".
    TensorArchive export_archive() const;
    /// Restores identifiers (reserving missing ones) and adapters from an export.
    void import_archive(const TensorArchive& archive);

private:
    ToyBackend backend_;
    Vocabulary vocab_;
    std::map<std::string, PromptEmbedding> embeddings_;
    std::optional<LoraConfig> lora_;

    void for_each_target(const std::function<void(nn::Linear&)>& f);
    void for_each_target(const std::function<void(const nn::Linear&)>& f) const;
};

class ExportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes "<dir>/adapters.safetensors" and "<dir>/manifest.json"; with
/// `write_merged` also "<dir>/merged.safetensors", a backend archive whose
/// projection weights are W + Δ.
void merge_and_export(const ImplantModel& model, const std::filesystem::path& dir, bool write_merged = false);
/// Inverse of merge_and_export on top of the same base backend.
ImplantModel load_export(ToyBackend base, const std::filesystem::path& dir);

}  // namespace implant
