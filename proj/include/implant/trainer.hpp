// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// One-shot fine-tuning loop: object-specific masked loss plus the gated class
// regularizer, optimized over adapters and prompt rows only.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/class_reg.hpp"
#include "implant/lora.hpp"
#include "implant/masked_loss.hpp"
#include "implant/model.hpp"
#include "implant/object.hpp"
#include "implant/optim.hpp"

namespace implant {

struct LossWeights {
    double masked = 1.0;
    double global = 1.0;
    double cl = 1.0;
};

struct FinetuneConfig {
    double learning_rate = 1e-4;
    int steps = 100;
    int batch_size = 1;
    std::uint64_t seed = 0;
    ClassRegConfig class_reg;
    int k = 2;
    SubsetStrategy subset_strategy = SubsetStrategy::Uniform;
    LoraConfig lora;
    LossWeights loss_weights;

    void validate() const;
    /// Canonical listing; `with_steps = false` gives the resume-compatibility key.
    std::string describe(bool with_steps = true) const;
    /// Digest of describe(false).
    std::string compatibility_hash() const;
};

struct TrainStepRecord {
    int step = 0;
    double loss_total = 0.0;
    std::vector<double> loss_masked;  // aligned with subset
    double loss_global = 0.0;
    double loss_cl = 0.0;             // summed over objects
    bool gate = false;
    std::vector<int> subset;
    std::vector<int> timesteps;       // one per batch element

    std::string to_json() const;
    static TrainStepRecord from_json(const std::string& line);
    /// Weighted sum of the components.
    double weighted_sum(const LossWeights& w) const;
};

class TrainingAbort : public std::runtime_error {
public:
    TrainingAbort(const std::string& what, TrainStepRecord last) : std::runtime_error(what), last_(std::move(last)) {}
    const TrainStepRecord& last_record() const { return last_; }

private:
    TrainStepRecord last_;
};

class TrainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Trainer {
public:
    /// Objects must already have prompt rows in `model`. Attaches adapters if
    /// the model has none. Throws TrainerError / MaskError on bad inputs.
    Trainer(ImplantModel& model, std::vector<ObjectSpec> objects, FinetuneConfig cfg);

    /// Restores model rows, adapters, optimizer state and the log. Throws
    /// TrainerError on a config hash mismatch, ArchiveError on corruption.
    static Trainer resume(ImplantModel& model, std::vector<ObjectSpec> objects, FinetuneConfig cfg,
                          const std::filesystem::path& checkpoint);

    /// Runs until config().steps steps have been taken in total.
    void run(const std::function<void(const TrainStepRecord&)>& on_step = {});
    /// One step; returns its record.
    const TrainStepRecord& step_once();

    int steps_done() const { return static_cast<int>(records_.size()); }
    const std::vector<TrainStepRecord>& records() const { return records_; }
    const FinetuneConfig& config() const { return cfg_; }
    int effective_k() const { return schedule_.k(); }
    const std::string& global_prompt_text() const { return global_prompt_; }
    const Tensor& latent() const { return z_; }

    void save_checkpoint(const std::filesystem::path& path) const;
    void write_log(const std::filesystem::path& path) const;

private:
    ImplantModel& model_;
    std::vector<ObjectSpec> objects_;
    FinetuneConfig cfg_;
    Tensor z_;
    std::vector<LatentMask> masks_;
    std::vector<Tensor> class_pooled_;
    std::string global_prompt_;
    CombinationSchedule schedule_;
    Adam opt_;
    std::vector<TrainStepRecord> records_;
};

struct FinetuneResult {
    std::vector<TrainStepRecord> records;
    TensorArchive exported;
};

/// Trainer(model, objects, cfg).run() and the model export.
FinetuneResult finetune(ImplantModel& model, const std::vector<ObjectSpec>& objects, const FinetuneConfig& cfg);

}  // namespace implant
