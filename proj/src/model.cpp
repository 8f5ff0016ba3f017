// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/model.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace implant {

namespace {

const char* kAdapterPrefix = "lora/";
const char* kEmbeddingPrefix = "prompt_embedding/";

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::vector<NamedParameter> trainable_parameters(const std::vector<LoraAdapter*>& adapters,
                                                 const std::vector<PromptEmbedding*>& embeddings) {
    std::vector<NamedParameter> out;
    for (LoraAdapter* a : adapters) {
        out.push_back({kAdapterPrefix + a->target_name + "/A", &a->A});
        out.push_back({kAdapterPrefix + a->target_name + "/B", &a->B});
    }
    for (PromptEmbedding* e : embeddings) out.push_back({kEmbeddingPrefix + e->identifier, &e->rows});
    return out;
}

std::size_t parameter_count(const std::vector<NamedParameter>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.param->value.size();
    return n;
}

ImplantModel::ImplantModel(ToyBackend backend) : backend_(std::move(backend)), vocab_(backend_.vocab()) {}

PromptEmbedding& ImplantModel::add_identifier(const std::string& identifier, Tensor rows) {
    if (rows.rank() != 2 || rows.dim(1) != vocab_.embedding_dim())
        throw EncoderError("prompt rows for " + identifier + " must be [n, " + std::to_string(vocab_.embedding_dim()) + "], got " +
                           shape_str(rows.shape()));
    if (!rows.all_finite()) throw EncoderError("prompt rows for " + identifier + " are not finite");
    vocab_.reserve_identifier(identifier, rows.dim(0));
    PromptEmbedding pe{identifier, Parameter(std::string(kEmbeddingPrefix) + identifier, std::move(rows), true)};
    return embeddings_.emplace(identifier, std::move(pe)).first->second;
}

PromptEmbedding& ImplantModel::embedding(const std::string& identifier) {
    auto it = embeddings_.find(identifier);
    if (it == embeddings_.end()) throw UnknownIdentifierError(identifier);
    return it->second;
}

const PromptEmbedding& ImplantModel::embedding(const std::string& identifier) const {
    auto it = embeddings_.find(identifier);
    if (it == embeddings_.end()) throw UnknownIdentifierError(identifier);
    return it->second;
}

std::vector<std::string> ImplantModel::identifiers() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : embeddings_) out.push_back(k);
    return out;
}

void ImplantModel::for_each_target(const std::function<void(nn::Linear&)>& f) {
    backend_.unet().for_each_cross_attention_projection(f);
    if (lora_ && lora_->adapt_text_encoder) backend_.text().for_each_attention_projection(f);
}

void ImplantModel::for_each_target(const std::function<void(const nn::Linear&)>& f) const {
    backend_.unet().for_each_cross_attention_projection(f);
    if (lora_ && lora_->adapt_text_encoder) backend_.text().for_each_attention_projection(f);
}

void ImplantModel::attach_adapters(const LoraConfig& cfg, std::uint64_t seed) {
    detach_adapters();
    lora_ = cfg;
    for_each_target([&](nn::Linear& l) {
        Rng rng(seed, "lora.init:" + l.name());
        l.attach_adapter(cfg, rng);
    });
}

void ImplantModel::detach_adapters() {
    auto detach = [](nn::Linear& l) { l.detach_adapter(); };
    backend_.unet().for_each_cross_attention_projection(detach);
    backend_.text().for_each_attention_projection(detach);
    lora_.reset();
}

std::vector<LoraAdapter*> ImplantModel::adapters() {
    std::vector<LoraAdapter*> out;
    if (!lora_) return out;
    for_each_target([&](nn::Linear& l) {
        if (l.has_adapter()) out.push_back(&l.adapter());
    });
    return out;
}

std::vector<const LoraAdapter*> ImplantModel::adapters() const {
    std::vector<const LoraAdapter*> out;
    if (!lora_) return out;
    for_each_target([&](const nn::Linear& l) {
        if (l.has_adapter()) out.push_back(&l.adapter());
    });
    return out;
}

EmbeddingTable ImplantModel::table() const {
    EmbeddingTable t(backend_.text().token_embedding());
    for (const auto& [_, pe] : embeddings_) t.bind(vocab_, pe);
    return t;
}

std::vector<int> ImplantModel::tokenize(const std::string& prompt) const { return implant::tokenize(prompt, vocab_); }

TextEncoding ImplantModel::encode_prompt(const std::string& prompt) const {
    return backend_.text().encode(tokenize(prompt), table());
}

ad::Var ImplantModel::predict(const ad::Var& z_t, int t, const ad::Var& cond) const {
    return backend_.unet().predict(z_t, t, cond);
}

std::vector<NamedParameter> ImplantModel::trainable_parameters() {
    std::vector<PromptEmbedding*> pes;
    for (auto& [_, pe] : embeddings_) pes.push_back(&pe);
    return implant::trainable_parameters(adapters(), pes);
}

std::size_t ImplantModel::total_parameter_count() const {
    std::size_t n = backend_.parameter_count();
    for (const auto* a : adapters()) n += a->parameter_count();
    for (const auto& [_, pe] : embeddings_) n += pe.rows.value.size();
    return n;
}

Tensor ImplantModel::generate_latent(const std::string& prompt, const SamplerConfig& sampler) const {
    const Tensor cond = encode_prompt(prompt).sequence.value();
    std::optional<Tensor> uncond;
    if (sampler.guidance != 1.0) uncond = encode_prompt("").sequence.value();
    return ddim_sample(*this, backend_.schedule(), cond, uncond, backend_.codec().latent_shape(), sampler);
}

Image ImplantModel::generate(const std::string& prompt, const SamplerConfig& sampler) const {
    return backend_.codec().decode(generate_latent(prompt, sampler));
}

TensorArchive ImplantModel::export_archive() const {
    TensorArchive ar;
    for (const auto* a : adapters()) {
        ar.put(kAdapterPrefix + a->target_name + "/A", a->A.value);
        ar.put(kAdapterPrefix + a->target_name + "/B", a->B.value);
    }
    for (const auto& [id, pe] : embeddings_) ar.put(kEmbeddingPrefix + id, pe.rows.value);
    if (lora_) {
        ar.set_meta("lora.rank", std::to_string(lora_->rank));
        ar.set_meta("lora.scale", fmt_double(lora_->scale));
        ar.set_meta("lora.init_std", fmt_double(lora_->init_std));
        ar.set_meta("lora.adapt_text_encoder", lora_->adapt_text_encoder ? "1" : "0");
    }
    ar.set_meta("backend.fingerprint", backend_.config().fingerprint());
    return ar;
}

void ImplantModel::import_archive(const TensorArchive& ar) {
    if (ar.has_meta("backend.fingerprint") && ar.meta("backend.fingerprint") != backend_.config().fingerprint())
        throw ExportError("export was produced on a different backend (" + ar.meta("backend.fingerprint") + ")");
    for (const auto& name : ar.names_with_prefix(kEmbeddingPrefix)) {
        const std::string id = name.substr(std::string(kEmbeddingPrefix).size());
        const Tensor& rows = ar.get(name);
        if (has_identifier(id)) {
            PromptEmbedding& pe = embedding(id);
            if (pe.rows.value.shape() != rows.shape())
                throw ExportError("shape drift for " + name + ": " + shape_str(rows.shape()) + " vs " + shape_str(pe.rows.value.shape()));
            pe.rows.value = rows;
        } else {
            add_identifier(id, rows);
        }
    }
    const auto lora_names = ar.names_with_prefix(kAdapterPrefix);
    if (lora_names.empty()) return;
    if (!ar.has_meta("lora.rank")) throw ExportError("archive has adapters but no LoRA metadata");
    LoraConfig cfg;
    cfg.rank = std::stoi(ar.meta("lora.rank"));
    cfg.scale = std::stod(ar.meta("lora.scale"));
    if (ar.has_meta("lora.init_std")) cfg.init_std = std::stod(ar.meta("lora.init_std"));
    cfg.adapt_text_encoder = ar.has_meta("lora.adapt_text_encoder") && ar.meta("lora.adapt_text_encoder") == "1";
    detach_adapters();
    lora_ = cfg;
    std::set<std::string> used;
    for_each_target([&](nn::Linear& l) {
        const std::string a = kAdapterPrefix + l.name() + "/A", b = kAdapterPrefix + l.name() + "/B";
        if (!ar.contains(a) || !ar.contains(b)) throw ExportError("archive lacks adapter for " + l.name());
        LoraAdapter adapter;
        adapter.target_name = l.name();
        adapter.rank = cfg.rank;
        adapter.scale = cfg.scale;
        adapter.A = Parameter(l.name() + ".lora_A", ar.get(a), true);
        adapter.B = Parameter(l.name() + ".lora_B", ar.get(b), true);
        if (adapter.A.value.rank() != 2 || adapter.A.value.dim(0) != cfg.rank || adapter.B.value.rank() != 2 || adapter.B.value.dim(1) != cfg.rank)
            throw ExportError("adapter " + l.name() + " does not have rank " + std::to_string(cfg.rank));
        try {
            l.set_adapter(std::move(adapter));
        } catch (const std::invalid_argument& e) {
            throw ExportError("shape drift for adapter " + l.name() + ": " + e.what());
        }
        used.insert(a);
        used.insert(b);
    });
    for (const auto& n : lora_names)
        if (!used.count(n)) throw ExportError("archive adapter " + n + " has no matching projection");
}

void merge_and_export(const ImplantModel& model, const std::filesystem::path& dir, bool write_merged) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ExportError("cannot create " + dir.string() + ": " + ec.message());
    model.export_archive().save(dir / "adapters.safetensors");

    nlohmann::ordered_json m;
    m["format"] = "implant.adapters/1";
    m["backend"] = model.backend().config().fingerprint();
    const auto& lora = model.lora_config();
    m["rank"] = lora ? lora->rank : 0;
    m["scale"] = lora ? lora->scale : 0.0;
    m["adapt_text_encoder"] = lora ? lora->adapt_text_encoder : false;
    m["targets"] = nlohmann::json::array();
    for (const auto* a : model.adapters()) m["targets"].push_back(a->target_name);
    m["identifiers"] = nlohmann::json::array();
    for (const auto& id : model.identifiers())
        m["identifiers"].push_back({{"identifier", id}, {"n_tokens", model.embedding(id).n_tokens()}});
    m["merged"] = write_merged;

    if (write_merged) {
        ToyBackend merged = model.backend();
        auto merge = [](nn::Linear& l) {
            if (!l.has_adapter()) return;
            l.weight().value = LoraLinearMap(l.weight(), &l.adapter()).merged_weight();
            l.detach_adapter();
        };
        merged.unet().for_each_cross_attention_projection(merge);
        merged.text().for_each_attention_projection(merge);
        merged.save(dir / "merged.safetensors");
    }

    const auto path = dir / "manifest.json";
    const auto tmp = dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        out << m.dump(2) << "\n";
        if (!out) throw ExportError("failed to write " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ExportError("failed to write " + path.string() + ": " + ec.message());
}

ImplantModel load_export(ToyBackend base, const std::filesystem::path& dir) {
    const auto path = dir / "adapters.safetensors";
    if (!std::filesystem::exists(path)) throw ExportError("missing export " + path.string());
    ImplantModel model(std::move(base));
    model.import_archive(TensorArchive::load(path));
    return model;
}

}  // namespace implant
