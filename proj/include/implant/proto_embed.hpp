// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Prototypical prompt-embedding initialization: fit the identifier rows so the
// pooled text embedding of a carrier prompt points at the fused image,
// masked-image and class-text embeddings.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/encoders.hpp"
#include "implant/object.hpp"

namespace implant {

class ProtoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FusionInputs {
    Tensor whole_image;   // I(x)
    Tensor masked_image;  // I(x_m)
    Tensor class_text;    // pooled T(c_c)
};

/// Mean of the three inputs after scaling each to unit length.
Tensor fuse_embeddings(const FusionInputs& inputs);

/// 1 - cos(c_p_pooled, fused), differentiable in c_p_pooled.
ad::Var prototypical_loss(const ad::Var& c_p_pooled, const Tensor& fused);
double prototypical_loss(const Tensor& c_p_pooled, const Tensor& fused);

struct ProtoConfig {
    int n_tokens = 4;
    double learning_rate = 1e-2;
    int max_steps = 500;
    double tolerance = 1e-3;
    int patience = 50;
    double seed_noise = 0.01;
    std::uint64_t seed = 0;
};

struct ProtoResult {
    PromptEmbedding embedding;  // best rows seen
    double initial_loss = 0.0;
    double final_loss = 0.0;    // loss of the returned rows
    int steps_run = 0;
    bool converged = false;     // reached the tolerance
    bool stalled = false;       // stopped by the patience window
    std::vector<double> best_trace;  // best-so-far loss after each step, starting with the seed
    std::string warning;
};

/// Seed rows: the class name's token rows tiled to n_tokens plus N(0, seed_noise).
Tensor seed_prompt_rows(const std::string& class_name, const Vocabulary& vocab, const TextEncoder& text, int n_tokens,
                        double noise, std::uint64_t seed, const std::string& identifier);

/// Fused target for one object.
Tensor prototype_target(const ObjectSpec& object, const Vocabulary& vocab, const TextEncoder& text, const ImageEncoder& image);

/// Runs Adam on the identifier rows. `vocab` need not contain the identifier;
/// a private copy reserves it. Throws ProtoError on a non-finite loss.
ProtoResult initialize_prototypical(const ObjectSpec& object, const Vocabulary& vocab, const TextEncoder& text,
                                    const ImageEncoder& image, const ProtoConfig& cfg);

/// Same optimization from explicit seed rows towards an explicit target.
ProtoResult optimize_prompt_rows(const std::string& identifier, Tensor seed_rows, const Tensor& fused, const Vocabulary& vocab,
                                 const TextEncoder& text, const ProtoConfig& cfg);

}  // namespace implant
