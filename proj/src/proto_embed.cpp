// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/proto_embed.hpp"

#include <cmath>

#include "implant/optim.hpp"

namespace implant {

namespace {

Tensor unit(const Tensor& v, const char* what) {
    if (!v.all_finite()) throw ProtoError(std::string(what) + " embedding is not finite");
    double n2 = 0.0;
    for (double x : v.storage()) n2 += x * x;
    if (n2 == 0.0) throw ProtoError(std::string(what) + " embedding has zero norm");
    Tensor out = v;
    const double n = std::sqrt(n2);
    for (double& x : out.storage()) x /= n;
    return out;
}

}  // namespace

Tensor fuse_embeddings(const FusionInputs& in) {
    if (in.whole_image.size() != in.masked_image.size() || in.whole_image.size() != in.class_text.size())
        throw ProtoError("fusion inputs differ in dimension");
    const Tensor a = unit(in.whole_image, "image"), b = unit(in.masked_image, "masked image"), c = unit(in.class_text, "class text");
    Tensor out({static_cast<int>(a.size())});
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] + b[i] + c[i]) / 3.0;
    return out;
}

ad::Var prototypical_loss(const ad::Var& c_p_pooled, const Tensor& fused) {
    try {
        return ad::add_scalar(ad::scale(ad::cosine(c_p_pooled, ad::constant(fused)), -1.0), 1.0);
    } catch (const std::domain_error&) {
        throw ProtoError("prototypical loss with a zero-norm argument");
    }
}

double prototypical_loss(const Tensor& c_p_pooled, const Tensor& fused) {
    return prototypical_loss(ad::constant(c_p_pooled), fused).item();
}

Tensor seed_prompt_rows(const std::string& class_name, const Vocabulary& vocab, const TextEncoder& text, int n_tokens,
                        double noise, std::uint64_t seed, const std::string& identifier) {
    if (n_tokens < 1) throw ProtoError("n_tokens must be >= 1");
    std::vector<int> ids = tokenize(class_name, vocab);
    ids.erase(ids.begin());
    ids.pop_back();
    if (ids.empty()) throw ProtoError("class name '" + class_name + "' has no tokens");
    const int unk = vocab.index_of(Vocabulary::kUnk);
    for (int id : ids)
        if (id == unk) throw ProtoError("class name '" + class_name + "' is not in the vocabulary");
    const Tensor& table = text.token_embedding().value;
    const int D = table.dim(1);
    Rng rng(seed, "proto.seed:" + identifier);
    Tensor rows({n_tokens, D});
    for (int r = 0; r < n_tokens; ++r) {
        const int src = ids[static_cast<std::size_t>(r) % ids.size()];
        for (int j = 0; j < D; ++j) rows.at(r, j) = table.at(src, j) + noise * rng.normal();
    }
    return rows;
}

Tensor prototype_target(const ObjectSpec& object, const Vocabulary& vocab, const TextEncoder& text, const ImageEncoder& image) {
    object.validate();
    FusionInputs in;
    in.whole_image = encode_image(object.image, image).vector;
    in.masked_image = encode_image(apply_mask_to_image(object.image, object.mask), image).vector;
    in.class_text = text.encode(tokenize(class_prompt_for(object.class_name), vocab)).pooled.value();
    return fuse_embeddings(in);
}

ProtoResult optimize_prompt_rows(const std::string& identifier, Tensor seed_rows, const Tensor& fused, const Vocabulary& vocab,
                                 const TextEncoder& text, const ProtoConfig& cfg) {
    if (cfg.max_steps < 0) throw ProtoError("max_steps must be >= 0");
    Vocabulary v = vocab;
    if (!v.has_identifier(identifier)) v.reserve_identifier(identifier, seed_rows.dim(0));
    else if (static_cast<int>(v.identifier_ids(identifier).size()) != seed_rows.dim(0))
        throw ProtoError("identifier " + identifier + " is reserved with a different token count");
    const std::vector<int> ids = tokenize(identifier_prompt(identifier), v);

    ProtoResult res;
    res.embedding = PromptEmbedding{identifier, Parameter("prompt_embedding/" + identifier, std::move(seed_rows), true)};
    Parameter& rows = res.embedding.rows;
    EmbeddingTable table(text.token_embedding());
    table.bind(v, res.embedding);

    auto evaluate = [&]() { return prototypical_loss(text.encode(ids, table).pooled, fused); };

    ad::Var loss = evaluate();
    res.initial_loss = loss.item();
    if (!std::isfinite(res.initial_loss)) throw ProtoError("non-finite prototypical loss at the seed for " + identifier);
    double best = res.initial_loss;
    Tensor best_rows = rows.value;
    res.best_trace.push_back(best);
    if (best < cfg.tolerance) res.converged = true;

    Adam opt({cfg.learning_rate});
    int since_improve = 0;
    for (int s = 0; s < cfg.max_steps && !res.converged; ++s) {
        ad::backward(loss);
        opt.step({&rows});
        loss = evaluate();
        ++res.steps_run;
        const double l = loss.item();
        if (!std::isfinite(l))
            throw ProtoError("non-finite prototypical loss at step " + std::to_string(res.steps_run) + " for " + identifier);
        if (l < best) {
            best = l;
            best_rows = rows.value;
            since_improve = 0;
        } else if (++since_improve >= cfg.patience) {
            res.stalled = true;
            res.warning = "loss did not improve for " + std::to_string(cfg.patience) + " steps; returning best-so-far";
        }
        res.best_trace.push_back(best);
        if (best < cfg.tolerance) res.converged = true;
        if (res.stalled) break;
    }
    rows.value = best_rows;
    rows.zero_grad();
    res.final_loss = best;
    return res;
}

ProtoResult initialize_prototypical(const ObjectSpec& object, const Vocabulary& vocab, const TextEncoder& text,
                                    const ImageEncoder& image, const ProtoConfig& cfg) {
    const Tensor fused = prototype_target(object, vocab, text, image);
    Tensor seed = seed_prompt_rows(object.class_name, vocab, text, cfg.n_tokens, cfg.seed_noise, cfg.seed, object.identifier);
    try {
        return optimize_prompt_rows(object.identifier, std::move(seed), fused, vocab, text, cfg);
    } catch (const ProtoError& e) {
        throw ProtoError(object.identifier + " (" + object.class_name + "): " + e.what());
    }
}

}  // namespace implant
