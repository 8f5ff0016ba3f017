// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// implant: command-line front end for the pipeline stages.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "implant/pipeline.hpp"
#include "implant/trainer.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;

struct Common {
    std::string config;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
    auto* opt = app->add_option("--config", c.config, "project config (JSON)")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    app->add_option("--output-dir", c.output_dir, "overrides output_dir from the config");
    app->add_option("--seed", c.seed, "overrides the project seed");
    app->add_flag("--force", c.force, "replace existing outputs of this stage");
    app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

implant::ProjectConfig load_config(const Common& c, bool objects_required) {
    implant::ProjectConfig cfg;
    if (!c.config.empty()) cfg = implant::ProjectConfig::load(c.config, objects_required);
    if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
    if (c.seed) cfg.set_seed(*c.seed);
    return cfg;
}

implant::LogFn logger(const Common& c) {
    if (c.quiet) return {};
    return [](const std::string& s) { std::cerr << s << "\n"; };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"implant: one-shot object implanting for a toy latent diffusion model"};
    app.require_subcommand(1);

    Common c;
    auto* init = app.add_subcommand("init-embedding", "initialize prototypical prompt embeddings");
    add_common(init, c);

    bool auto_init = false;
    std::string resume;
    auto* ft = app.add_subcommand("finetune", "fine-tune adapters and prompt rows into a bundle");
    add_common(ft, c);
    ft->add_flag("--init", auto_init, "run init-embedding first if its outputs are missing");
    ft->add_option("--resume", resume, "continue from a training checkpoint")->check(CLI::ExistingFile);

    std::string prompt;
    int count = 1;
    auto* gen = app.add_subcommand("generate", "generate images from the bundle");
    add_common(gen, c);
    gen->add_option("--prompt", prompt, "prompt; may reference implanted identifiers")->required();
    gen->add_option("--count", count, "number of images (image i uses seed + i)")->check(CLI::PositiveNumber);

    auto* ev = app.add_subcommand("evaluate", "compute IA, TA and KID for the bundle");
    add_common(ev, c);

    auto* pre = app.add_subcommand("pretrain-backend", "pretrain or load the cached toy backend");
    add_common(pre, c, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    implant::ProjectConfig cfg;
    try {
        cfg = load_config(c, !*pre);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }
    const implant::LogFn log = logger(c);

    try {
        if (*init) {
            const auto r = implant::cmd_init_embedding(cfg, {c.force, log});
            for (const auto& row : r.rows)
                std::cout << row.identifier << "\t" << row.class_name << "\tL_PE " << row.initial_loss << " -> " << row.final_loss << "\n";
        } else if (*ft) {
            implant::FinetuneOptions o;
            o.force = c.force;
            o.log = log;
            o.auto_init = auto_init;
            if (!resume.empty()) o.resume = resume;
            const auto r = implant::cmd_finetune(cfg, o);
            std::cout << "bundle " << r.bundle.string() << " (" << r.records.size() << " steps, final loss "
                      << (r.records.empty() ? 0.0 : r.records.back().loss_total) << ")\n";
        } else if (*gen) {
            const auto imgs = implant::cmd_generate(cfg, prompt, cfg.seed, count, {c.force, log});
            for (const auto& g : imgs) std::cout << g.path.string() << "\n";
        } else if (*ev) {
            const auto r = implant::cmd_evaluate(cfg, {c.force, log});
            std::cout << implant::MetricReport::csv_header() << "\n" << r.report.csv_row() << "\n";
        } else if (*pre) {
            const auto b = implant::load_backend(cfg, log);
            std::cout << "backend " << cfg.backend.fingerprint() << " in " << cfg.resolved_cache_dir().string() << " ("
                      << b.parameter_count() << " parameters)\n";
        }
    } catch (const implant::PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const implant::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const implant::TrainingAbort& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return kRuntimeAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeAbort;
    }
    return kOk;
}
