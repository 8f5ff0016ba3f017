// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "implant/proto_embed.hpp"
#include "implant/trainer.hpp"
#include "json.hpp"

namespace implant {

namespace {

using json = nlohmann::ordered_json;

void say(const LogFn& log, const std::string& s) {
    if (log) log(s);
}

/// Creates `dir`; an existing non-empty directory needs `force` and is cleared.
void prepare_stage_dir(const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw PipelineError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw PipelineError(dir.string() + " already has outputs; pass --force to replace them");
            for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
        }
    }
    fs::create_directories(dir);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << text;
        if (!out) throw std::runtime_error("failed to write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<std::pair<std::string, std::string>> id_to_class(const ProjectConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& o : cfg.objects) out.emplace_back(o.identifier, o.class_name);
    return out;
}

std::vector<std::string> placeholders_in(const std::string& prompt) {
    std::vector<std::string> out;
    std::istringstream is(prompt);
    for (std::string w; is >> w;)
        if (is_placeholder(w)) out.push_back(w);
    return out;
}

void check_prompt_identifiers(const std::string& prompt, const ImplantModel& model) {
    for (const auto& p : placeholders_in(prompt)) {
        if (model.has_identifier(p)) continue;
        std::string known;
        for (const auto& id : model.identifiers()) known += (known.empty() ? "" : ", ") + id;
        throw PipelineError("prompt references unknown identifier " + p + " (bundle has: " + (known.empty() ? "none" : known) + ")");
    }
}

SamplerConfig sampler_for(const ProjectConfig& cfg, std::uint64_t seed) {
    SamplerConfig s;
    s.steps = cfg.generate.steps;
    s.guidance = cfg.generate.guidance;
    s.seed = seed;
    return s;
}

std::filesystem::path embeddings_archive(const ProjectConfig& cfg) { return embeddings_dir(cfg) / "embeddings.safetensors"; }

}  // namespace

std::filesystem::path embeddings_dir(const ProjectConfig& cfg) { return cfg.output_dir / "embeddings"; }
std::filesystem::path bundle_dir(const ProjectConfig& cfg) { return cfg.output_dir / "bundle"; }
std::filesystem::path generate_dir(const ProjectConfig& cfg) { return cfg.output_dir / "generate"; }
std::filesystem::path eval_dir(const ProjectConfig& cfg) { return cfg.output_dir / "eval"; }

std::vector<ObjectSpec> load_objects(const ProjectConfig& cfg) {
    std::vector<ObjectSpec> out;
    for (const auto& o : cfg.objects) {
        if (!std::filesystem::is_regular_file(o.image_path)) throw PipelineError("image file not found: " + o.image_path.string());
        if (!std::filesystem::is_regular_file(o.mask_path)) throw PipelineError("mask file not found: " + o.mask_path.string());
        Image img;
        Mask mask;
        try {
            img = load_image(o.image_path);
        } catch (const std::exception& e) {
            throw PipelineError("cannot read image " + o.image_path.string() + ": " + e.what());
        }
        try {
            mask = load_mask(o.mask_path);
        } catch (const std::exception& e) {
            throw PipelineError("cannot read mask " + o.mask_path.string() + ": " + e.what());
        }
        try {
            out.push_back(ObjectSpec::make(std::move(img), std::move(mask), o.class_name, o.identifier));
        } catch (const std::exception& e) {
            throw PipelineError("object " + o.identifier + ": " + e.what());
        }
    }
    return out;
}

ToyBackend load_backend(const ProjectConfig& cfg, const LogFn& log) {
    return ToyBackend::load_or_pretrain(cfg.backend, cfg.resolved_cache_dir(), log);
}

InitEmbeddingResult cmd_init_embedding(const ProjectConfig& cfg, const StageOptions& opts) {
    cfg.validate(false);
    const auto objects = load_objects(cfg);
    const auto dir = embeddings_dir(cfg);
    prepare_stage_dir(dir, opts.force);
    const ToyBackend backend = load_backend(cfg, opts.log);

    InitEmbeddingResult res;
    TensorArchive ar;
    ar.set_meta("implant.embeddings", "1");
    ar.set_meta("backend.fingerprint", cfg.backend.fingerprint());
    json report = json::array();
    for (const auto& o : objects) {
        ProtoResult r;
        try {
            r = initialize_prototypical(o, backend.vocab(), backend.text(), backend.image(), cfg.proto);
        } catch (const std::exception& e) {
            throw TrainingAbort(std::string("embedding initialization failed: ") + e.what(), {});
        }
        say(opts.log, "init-embedding " + o.identifier + ": L_PE " + std::to_string(r.initial_loss) + " -> " + std::to_string(r.final_loss) +
                          " in " + std::to_string(r.steps_run) + " steps" + (r.warning.empty() ? "" : " (" + r.warning + ")"));
        ar.put("prompt_embedding/" + o.identifier, r.embedding.rows.value);
        ar.set_meta("class/" + o.identifier, o.class_name);
        ar.set_meta("n_tokens/" + o.identifier, std::to_string(r.embedding.n_tokens()));
        ar.set_meta("final_loss/" + o.identifier, json(r.final_loss).dump());
        ar.set_meta("steps/" + o.identifier, std::to_string(r.steps_run));
        EmbeddingRow row{o.identifier, o.class_name, r.initial_loss, r.final_loss, r.steps_run, r.converged, r.warning};
        report.push_back({{"identifier", row.identifier},
                          {"class_name", row.class_name},
                          {"initial_loss", row.initial_loss},
                          {"final_loss", row.final_loss},
                          {"steps", row.steps},
                          {"converged", row.converged},
                          {"warning", row.warning}});
        res.rows.push_back(std::move(row));
    }
    res.archive = embeddings_archive(cfg);
    ar.save(res.archive);
    write_text(dir / "report.json", report.dump(2) + "\n");
    return res;
}

FinetuneOutcome cmd_finetune(const ProjectConfig& cfg, const FinetuneOptions& opts) {
    cfg.validate(false);
    const auto objects = load_objects(cfg);
    if (!std::filesystem::exists(embeddings_archive(cfg))) {
        if (!opts.auto_init)
            throw PipelineError("missing stage-1 artifact " + embeddings_archive(cfg).string() + "; run init-embedding first or pass --init");
        cmd_init_embedding(cfg, opts);
    }
    if (opts.resume && !std::filesystem::exists(*opts.resume)) throw PipelineError("checkpoint not found: " + opts.resume->string());
    const TensorArchive emb = TensorArchive::load(embeddings_archive(cfg));
    if (emb.meta("backend.fingerprint") != cfg.backend.fingerprint())
        throw PipelineError("embeddings were made with a different backend; rerun init-embedding");
    for (const auto& o : cfg.objects) {
        if (!emb.contains("prompt_embedding/" + o.identifier))
            throw PipelineError("stage-1 archive has no embedding for " + o.identifier + "; rerun init-embedding");
        if (emb.meta("class/" + o.identifier) != o.class_name)
            throw PipelineError("stage-1 archive binds " + o.identifier + " to class " + emb.meta("class/" + o.identifier));
    }

    const auto dir = bundle_dir(cfg);
    if (opts.resume) {
        // The checkpoint may live inside the bundle being replaced.
        const auto tmp = cfg.output_dir / ".resume.safetensors";
        std::filesystem::copy_file(*opts.resume, tmp, std::filesystem::copy_options::overwrite_existing);
        prepare_stage_dir(dir, true);
        std::filesystem::rename(tmp, dir / ".resume.safetensors");
    } else {
        prepare_stage_dir(dir, opts.force);
    }

    ImplantModel model(load_backend(cfg, opts.log));
    for (const auto& o : cfg.objects) model.add_identifier(o.identifier, emb.get("prompt_embedding/" + o.identifier));

    auto on_step = [&](const TrainStepRecord& r) {
        if (r.step % 10 == 0 || r.step + 1 == cfg.finetune.steps)
            say(opts.log, "step " + std::to_string(r.step) + " loss " + std::to_string(r.loss_total));
    };
    std::optional<Trainer> trainer;
    if (opts.resume) {
        const auto ck = dir / ".resume.safetensors";
        trainer.emplace(Trainer::resume(model, objects, cfg.finetune, ck));
        std::filesystem::remove(ck);
        say(opts.log, "resumed at step " + std::to_string(trainer->steps_done()));
    } else {
        trainer.emplace(model, objects, cfg.finetune);
    }
    try {
        trainer->run(on_step);
    } catch (const TrainingAbort&) {
        trainer->write_log(dir / "train_log.jsonl");
        throw;
    }
    merge_and_export(model, dir, false);
    trainer->write_log(dir / "train_log.jsonl");
    trainer->save_checkpoint(dir / "checkpoint.safetensors");
    write_text(dir / "config.json", cfg.to_json());
    return {trainer->records(), dir};
}

ImplantModel load_bundle(const ProjectConfig& cfg, const std::filesystem::path& bundle, const LogFn& log) {
    const auto manifest = bundle / "manifest.json";
    if (!std::filesystem::exists(manifest)) throw PipelineError("no bundle at " + bundle.string() + "; run finetune first");
    json m;
    try {
        std::ifstream in(manifest);
        m = json::parse(in);
    } catch (const std::exception& e) {
        throw PipelineError("unreadable manifest " + manifest.string() + ": " + e.what());
    }
    if (m.value("backend", std::string()) != cfg.backend.fingerprint())
        throw PipelineError("bundle " + bundle.string() + " was trained on a different backend");
    return load_export(load_backend(cfg, log), bundle);
}

std::vector<GeneratedImage> cmd_generate(const ProjectConfig& cfg, const std::string& prompt, std::uint64_t seed, int count,
                                         const StageOptions& opts) {
    if (count < 1) throw PipelineError("count must be >= 1");
    if (prompt.empty()) throw PipelineError("prompt must not be empty");
    const ImplantModel model = load_bundle(cfg, bundle_dir(cfg), opts.log);
    check_prompt_identifiers(prompt, model);
    const auto dir = generate_dir(cfg);
    prepare_stage_dir(dir, opts.force);

    std::vector<GeneratedImage> out;
    for (int i = 0; i < count; ++i) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
        const SamplerConfig sc = sampler_for(cfg, s);
        GeneratedImage g{prompt, s, model.generate(prompt, sc), dir / ("seed" + std::to_string(s) + ".png")};
        save_image(g.image, g.path);
        json side = {{"prompt", prompt},
                     {"seed", s},
                     {"steps", sc.steps},
                     {"guidance", sc.guidance},
                     {"identifiers", model.identifiers()},
                     {"backend", cfg.backend.fingerprint()},
                     {"image", g.path.filename().string()}};
        write_text(dir / ("seed" + std::to_string(s) + ".json"), side.dump(2) + "\n");
        say(opts.log, "wrote " + g.path.string());
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::string> default_eval_prompts(const ProjectConfig& cfg) {
    std::vector<std::string> ids;
    for (const auto& o : cfg.objects) ids.push_back(o.identifier);
    std::vector<std::string> out{global_prompt(ids)};
    if (ids.size() > 1)
        for (const auto& id : ids) out.push_back(identifier_prompt(id));
    return out;
}

EvaluateOutcome cmd_evaluate(const ProjectConfig& cfg, const StageOptions& opts) {
    cfg.validate(false);
    const auto objects = load_objects(cfg);
    const auto prompts = cfg.eval.prompts.empty() ? default_eval_prompts(cfg) : cfg.eval.prompts;
    const std::size_t n = prompts.size() * cfg.eval.seeds.size();
    if (n < 2) throw PipelineError("evaluation needs at least 2 images (prompts x seeds) for KID");
    const ImplantModel model = load_bundle(cfg, bundle_dir(cfg), opts.log);
    for (const auto& p : prompts) check_prompt_identifiers(p, model);
    const auto dir = eval_dir(cfg);
    prepare_stage_dir(dir, opts.force);
    std::filesystem::create_directories(dir / "images");

    const ToyBackend& backend = model.backend();
    const ImplantModel base(backend);
    const auto mapping = id_to_class(cfg);
    std::vector<Image> gen, ref;
    std::vector<std::string> class_prompts;
    json per_image = json::array();
    for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
        const std::string cp = substitute_identifiers(prompts[pi], mapping);
        for (const auto seed : cfg.eval.seeds) {
            const SamplerConfig sc = sampler_for(cfg, seed);
            gen.push_back(model.generate(prompts[pi], sc));
            ref.push_back(base.generate(cp, sc));
            class_prompts.push_back(cp);
            const std::string stem = "p" + std::to_string(pi) + "_seed" + std::to_string(seed);
            save_image(gen.back(), dir / "images" / (stem + ".png"));
            save_image(ref.back(), dir / "images" / (stem + "_base.png"));
            per_image.push_back({{"prompt", prompts[pi]}, {"class_prompt", cp}, {"seed", seed}, {"image", "images/" + stem + ".png"}});
        }
    }

    const Image& reference = objects.front().image;
    const ImageEncoderFeatures fx(backend.image());
    EvaluateOutcome res;
    res.dir = dir;
    res.report.ia = image_alignment(gen, reference, backend.image());
    res.report.ta = text_alignment(gen, class_prompts, backend.vocab(), backend.text(), backend.image());
    res.report.kid = kid(extract_features(fx, gen), extract_features(fx, ref), cfg.eval.kid);
    res.report.n_images = static_cast<int>(gen.size());
    res.report.n_prompts = static_cast<int>(prompts.size());
    res.report.feature_extractor = fx.name();
    res.reference_self_ia = image_alignment({reference}, reference, backend.image());

    json j = json::parse(res.report.to_json());
    j["diagnostics"] = {{"reference_self_ia", res.reference_self_ia}};
    j["images"] = per_image;
    write_text(dir / "report.json", j.dump(2) + "\n");
    write_text(dir / "report.csv", MetricReport::csv_header() + "\n" + res.report.csv_row() + "\n");
    say(opts.log, "IA " + std::to_string(res.report.ia) + " TA " + std::to_string(res.report.ta) + " KID " + std::to_string(res.report.kid));
    return res;
}

}  // namespace implant
