// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// The four pipeline stages on top of a ProjectConfig. Every stage writes
// into its own subdirectory of output_dir:
//   embeddings/  embeddings.safetensors, report.json
//   bundle/      adapters.safetensors, manifest.json, train_log.jsonl, checkpoint.safetensors
//   generate/    <stem>.png + <stem>.json per image
//   eval/        report.json, report.csv, images/

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/config.hpp"
#include "implant/evalkit.hpp"
#include "implant/model.hpp"
#include "implant/object.hpp"

namespace implant {

/// Bad inputs or existing outputs: reported before any work is done.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StageOptions {
    bool force = false;
    LogFn log;
};

std::filesystem::path embeddings_dir(const ProjectConfig& cfg);
std::filesystem::path bundle_dir(const ProjectConfig& cfg);
std::filesystem::path generate_dir(const ProjectConfig& cfg);
std::filesystem::path eval_dir(const ProjectConfig& cfg);

/// Loads every object's image and mask. Throws PipelineError naming the path.
std::vector<ObjectSpec> load_objects(const ProjectConfig& cfg);

ToyBackend load_backend(const ProjectConfig& cfg, const LogFn& log = {});

struct EmbeddingRow {
    std::string identifier;
    std::string class_name;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int steps = 0;
    bool converged = false;
    std::string warning;
};

struct InitEmbeddingResult {
    std::vector<EmbeddingRow> rows;  // config order
    std::filesystem::path archive;
};

InitEmbeddingResult cmd_init_embedding(const ProjectConfig& cfg, const StageOptions& opts = {});

struct FinetuneOptions : StageOptions {
    /// Run init-embedding first when its artifacts are missing.
    bool auto_init = false;
    /// Continue from this checkpoint instead of starting fresh.
    std::optional<std::filesystem::path> resume;
};

struct FinetuneOutcome {
    std::vector<TrainStepRecord> records;
    std::filesystem::path bundle;
};

FinetuneOutcome cmd_finetune(const ProjectConfig& cfg, const FinetuneOptions& opts = {});

/// Loads the stage-2 bundle on top of the configured backend.
ImplantModel load_bundle(const ProjectConfig& cfg, const std::filesystem::path& bundle, const LogFn& log = {});

struct GeneratedImage {
    std::string prompt;
    std::uint64_t seed = 0;
    Image image;
    std::filesystem::path path;
};

/// `count` images for `prompt`; image i uses seed + i. Throws PipelineError
/// naming any placeholder the bundle does not know.
std::vector<GeneratedImage> cmd_generate(const ProjectConfig& cfg, const std::string& prompt, std::uint64_t seed, int count,
                                         const StageOptions& opts = {});

struct EvaluateOutcome {
    MetricReport report;
    double reference_self_ia = 0.0;
    std::filesystem::path dir;
};

/// Generates eval.prompts x eval.seeds, then IA against the training image, TA
/// on class-substituted prompts and KID against base-model generations on the
/// same class-substituted prompts.
EvaluateOutcome cmd_evaluate(const ProjectConfig& cfg, const StageOptions& opts = {});

/// Prompts used by cmd_evaluate when eval.prompts is empty.
std::vector<std::string> default_eval_prompts(const ProjectConfig& cfg);

}  // namespace implant
