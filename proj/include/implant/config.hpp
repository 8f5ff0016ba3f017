// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Project configuration: one JSON file describing objects and every stage.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/backend.hpp"
#include "implant/evalkit.hpp"
#include "implant/proto_embed.hpp"
#include "implant/trainer.hpp"

namespace implant {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ObjectEntry {
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    std::string class_name;
    std::string identifier;
};

struct GenerateSettings {
    int steps = 50;
    double guidance = 1.0;
};

struct EvalSettings {
    std::vector<std::string> prompts;
    std::vector<std::uint64_t> seeds = {0, 1};
    KidOptions kid;
};

struct ProjectConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "implant-out";
    std::filesystem::path cache_dir;  // empty: environment default
    std::vector<ObjectEntry> objects;
    ProtoConfig proto;
    FinetuneConfig finetune;
    GenerateSettings generate;
    EvalSettings eval;
    BackendConfig backend;

    /// Parses JSON text. Relative paths resolve against `base_dir`.
    static ProjectConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
    /// Reads, parses and validates (including that object files exist). With
    /// `objects_required = false` only the backend section is checked.
    static ProjectConfig load(const std::filesystem::path& path, bool objects_required = true);
    std::string to_json() const;
    void save(const std::filesystem::path& path) const;

    /// Structural checks; with `check_files` also that image and mask paths exist.
    void validate(bool check_files = true) const;
    /// Sets the project seed and the stage seeds derived from it.
    void set_seed(std::uint64_t s);
    std::filesystem::path resolved_cache_dir() const;
};

}  // namespace implant
