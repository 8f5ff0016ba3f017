// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "implant/encoders.hpp"
#include "json.hpp"

namespace implant {

namespace {

using json = nlohmann::ordered_json;

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    std::set<std::string> ok(known.begin(), known.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

KidEstimator parse_estimator(const std::string& s) {
    if (s == "unbiased") return KidEstimator::Unbiased;
    if (s == "paired") return KidEstimator::Paired;
    if (s == "biased") return KidEstimator::Biased;
    throw ConfigError("unknown KID estimator '" + s + "' (expected unbiased, paired or biased)");
}

std::string estimator_name(KidEstimator e) {
    switch (e) {
    case KidEstimator::Unbiased: return "unbiased";
    case KidEstimator::Paired: return "paired";
    case KidEstimator::Biased: return "biased";
    }
    return "unbiased";
}

}  // namespace

ProjectConfig ProjectConfig::from_json(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, "config", {"seed", "output_dir", "cache_dir", "objects", "proto", "finetune", "generate", "eval", "backend"});
    ProjectConfig c;
    read(j, "seed", c.seed, "config");
    std::string s = c.output_dir.string();
    read(j, "output_dir", s, "config");
    c.output_dir = resolve(s, base_dir);
    if (j.contains("cache_dir")) {
        read(j, "cache_dir", s, "config");
        c.cache_dir = resolve(s, base_dir);
    }

    if (j.contains("objects")) {
        if (!j["objects"].is_array()) throw ConfigError("config.objects must be a list");
        int i = 0;
        for (const auto& o : j["objects"]) {
            const std::string where = "objects[" + std::to_string(i++) + "]";
            reject_unknown(o, where, {"image_path", "mask_path", "class_name", "identifier"});
            for (const char* req : {"image_path", "mask_path", "class_name", "identifier"})
                if (!o.contains(req)) throw ConfigError(where + " is missing '" + req + "'");
            ObjectEntry e;
            std::string img, mask;
            read(o, "image_path", img, where);
            read(o, "mask_path", mask, where);
            read(o, "class_name", e.class_name, where);
            read(o, "identifier", e.identifier, where);
            e.image_path = resolve(img, base_dir);
            e.mask_path = resolve(mask, base_dir);
            c.objects.push_back(std::move(e));
        }
    }

    if (j.contains("proto")) {
        const auto& p = j["proto"];
        reject_unknown(p, "proto", {"n_tokens", "learning_rate", "max_steps", "tolerance", "patience", "seed_noise"});
        read(p, "n_tokens", c.proto.n_tokens, "proto");
        read(p, "learning_rate", c.proto.learning_rate, "proto");
        read(p, "max_steps", c.proto.max_steps, "proto");
        read(p, "tolerance", c.proto.tolerance, "proto");
        read(p, "patience", c.proto.patience, "proto");
        read(p, "seed_noise", c.proto.seed_noise, "proto");
    }

    if (j.contains("finetune")) {
        const auto& f = j["finetune"];
        reject_unknown(f, "finetune",
                       {"learning_rate", "steps", "batch_size", "alpha_cl", "p_cl", "class_prompt", "k", "subset_strategy", "lora",
                        "loss_weights"});
        auto& ft = c.finetune;
        read(f, "learning_rate", ft.learning_rate, "finetune");
        read(f, "steps", ft.steps, "finetune");
        read(f, "batch_size", ft.batch_size, "finetune");
        read(f, "alpha_cl", ft.class_reg.alpha_cl, "finetune");
        read(f, "p_cl", ft.class_reg.p_cl, "finetune");
        read(f, "class_prompt", ft.class_reg.class_prompt, "finetune");
        read(f, "k", ft.k, "finetune");
        if (f.contains("subset_strategy")) {
            read(f, "subset_strategy", s, "finetune");
            try {
                ft.subset_strategy = parse_subset_strategy(s);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("finetune.subset_strategy: ") + e.what());
            }
        }
        if (f.contains("lora")) {
            const auto& l = f["lora"];
            reject_unknown(l, "finetune.lora", {"rank", "scale", "init_std", "adapt_text_encoder"});
            read(l, "rank", ft.lora.rank, "finetune.lora");
            read(l, "scale", ft.lora.scale, "finetune.lora");
            read(l, "init_std", ft.lora.init_std, "finetune.lora");
            read(l, "adapt_text_encoder", ft.lora.adapt_text_encoder, "finetune.lora");
        }
        if (f.contains("loss_weights")) {
            const auto& w = f["loss_weights"];
            reject_unknown(w, "finetune.loss_weights", {"masked", "global", "cl"});
            read(w, "masked", ft.loss_weights.masked, "finetune.loss_weights");
            read(w, "global", ft.loss_weights.global, "finetune.loss_weights");
            read(w, "cl", ft.loss_weights.cl, "finetune.loss_weights");
        }
    }

    if (j.contains("generate")) {
        const auto& g = j["generate"];
        reject_unknown(g, "generate", {"steps", "guidance"});
        read(g, "steps", c.generate.steps, "generate");
        read(g, "guidance", c.generate.guidance, "generate");
    }

    if (j.contains("eval")) {
        const auto& e = j["eval"];
        reject_unknown(e, "eval", {"prompts", "seeds", "kid_estimator", "kid_subset_size", "kid_subsets"});
        read(e, "prompts", c.eval.prompts, "eval");
        read(e, "seeds", c.eval.seeds, "eval");
        if (e.contains("kid_estimator")) {
            read(e, "kid_estimator", s, "eval");
            c.eval.kid.estimator = parse_estimator(s);
        }
        read(e, "kid_subset_size", c.eval.kid.subset_size, "eval");
        read(e, "kid_subsets", c.eval.kid.subsets, "eval");
    }

    if (j.contains("backend")) {
        const auto& b = j["backend"];
        reject_unknown(b, "backend", {"seed", "timesteps", "beta_start", "beta_end", "codec_steps", "clip_steps", "unet_steps"});
        read(b, "seed", c.backend.seed, "backend");
        read(b, "timesteps", c.backend.timesteps, "backend");
        read(b, "beta_start", c.backend.beta_start, "backend");
        read(b, "beta_end", c.backend.beta_end, "backend");
        read(b, "codec_steps", c.backend.pretrain.codec_steps, "backend");
        read(b, "clip_steps", c.backend.pretrain.clip_steps, "backend");
        read(b, "unet_steps", c.backend.pretrain.unet_steps, "backend");
    }
    c.set_seed(c.seed);
    return c;
}

void ProjectConfig::set_seed(std::uint64_t s) {
    seed = s;
    proto.seed = s;
    finetune.seed = s;
    eval.kid.seed = s;
}

ProjectConfig ProjectConfig::load(const std::filesystem::path& path, bool objects_required) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ProjectConfig c = from_json(ss.str(), std::filesystem::absolute(path).parent_path());
    if (objects_required) {
        c.validate(true);
    } else {
        try {
            c.backend.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    return c;
}

std::string ProjectConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["output_dir"] = output_dir.string();
    if (!cache_dir.empty()) j["cache_dir"] = cache_dir.string();
    j["objects"] = json::array();
    for (const auto& o : objects)
        j["objects"].push_back(
            {{"image_path", o.image_path.string()}, {"mask_path", o.mask_path.string()}, {"class_name", o.class_name}, {"identifier", o.identifier}});
    j["proto"] = {{"n_tokens", proto.n_tokens},       {"learning_rate", proto.learning_rate}, {"max_steps", proto.max_steps},
                  {"tolerance", proto.tolerance},     {"patience", proto.patience},           {"seed_noise", proto.seed_noise}};
    const auto& ft = finetune;
    j["finetune"] = {{"learning_rate", ft.learning_rate},
                     {"steps", ft.steps},
                     {"batch_size", ft.batch_size},
                     {"alpha_cl", ft.class_reg.alpha_cl},
                     {"p_cl", ft.class_reg.p_cl},
                     {"class_prompt", ft.class_reg.class_prompt},
                     {"k", ft.k},
                     {"subset_strategy", to_string(ft.subset_strategy)},
                     {"lora", {{"rank", ft.lora.rank}, {"scale", ft.lora.scale}, {"init_std", ft.lora.init_std}, {"adapt_text_encoder", ft.lora.adapt_text_encoder}}},
                     {"loss_weights", {{"masked", ft.loss_weights.masked}, {"global", ft.loss_weights.global}, {"cl", ft.loss_weights.cl}}}};
    j["generate"] = {{"steps", generate.steps}, {"guidance", generate.guidance}};
    j["eval"] = {{"prompts", eval.prompts},
                 {"seeds", eval.seeds},
                 {"kid_estimator", estimator_name(eval.kid.estimator)},
                 {"kid_subset_size", eval.kid.subset_size},
                 {"kid_subsets", eval.kid.subsets}};
    j["backend"] = {{"seed", backend.seed},
                    {"timesteps", backend.timesteps},
                    {"beta_start", backend.beta_start},
                    {"beta_end", backend.beta_end},
                    {"codec_steps", backend.pretrain.codec_steps},
                    {"clip_steps", backend.pretrain.clip_steps},
                    {"unet_steps", backend.pretrain.unet_steps}};
    return j.dump(2) + "\n";
}

void ProjectConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out << to_json();
    if (!out) throw ConfigError("cannot write config file " + path.string());
}

void ProjectConfig::validate(bool check_files) const {
    if (objects.empty()) throw ConfigError("config lists no objects");
    std::set<std::string> ids;
    for (const auto& o : objects) {
        if (!is_placeholder(o.identifier))
            throw ConfigError("identifier '" + o.identifier + "' must look like [name]");
        if (!ids.insert(o.identifier).second) throw ConfigError("identifier " + o.identifier + " is used by two objects");
        if (o.class_name.empty() || o.class_name.find(' ') != std::string::npos)
            throw ConfigError("class name '" + o.class_name + "' must be a single word");
        if (check_files) {
            if (!std::filesystem::is_regular_file(o.image_path)) throw ConfigError("image file not found: " + o.image_path.string());
            if (!std::filesystem::is_regular_file(o.mask_path)) throw ConfigError("mask file not found: " + o.mask_path.string());
        }
    }
    if (proto.n_tokens < 1) throw ConfigError("proto.n_tokens must be >= 1");
    if (proto.max_steps < 0) throw ConfigError("proto.max_steps must be >= 0");
    if (!(proto.learning_rate > 0)) throw ConfigError("proto.learning_rate must be > 0");
    try {
        finetune.validate();
        backend.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (generate.steps < 1 || generate.steps > backend.timesteps)
        throw ConfigError("generate.steps must be in [1, " + std::to_string(backend.timesteps) + "]");
    if (eval.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
    if (eval.kid.subset_size < 0 || eval.kid.subsets < 1) throw ConfigError("eval KID subset settings are invalid");
}

std::filesystem::path ProjectConfig::resolved_cache_dir() const {
    return cache_dir.empty() ? ToyBackend::default_cache_dir() : cache_dir;
}

}  // namespace implant
