// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/trainer.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace implant {

namespace {

constexpr const char* kCheckpointFormat = "implant.checkpoint/1";

void check_identical_images(const std::vector<ObjectSpec>& objects) {
    for (std::size_t i = 1; i < objects.size(); ++i)
        if (!(objects[i].image == objects[0].image))
            throw TrainerError("objects " + objects[0].identifier + " and " + objects[i].identifier +
                               " must come from the same training image");
}

}  // namespace

void FinetuneConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("finetune.steps must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("finetune.learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("finetune.batch_size must be >= 1");
    if (k < 1) throw std::invalid_argument("loss.k must be >= 1");
    if (lora.rank < 1) throw std::invalid_argument("lora.rank must be >= 1");
    if (loss_weights.masked < 0 || loss_weights.global < 0 || loss_weights.cl < 0)
        throw std::invalid_argument("loss weights must be >= 0");
    class_reg.validate();
}

std::string FinetuneConfig::describe(bool with_steps) const {
    std::ostringstream os;
    os.precision(17);
    os << "lr=" << learning_rate << ";batch=" << batch_size << ";seed=" << seed << ";alpha_cl=" << class_reg.alpha_cl
       << ";p_cl=" << class_reg.p_cl << ";class_prompt=" << class_reg.class_prompt << ";k=" << k
       << ";subset=" << to_string(subset_strategy) << ";lora=" << lora.rank << "," << lora.scale << "," << lora.init_std << ","
       << lora.adapt_text_encoder << ";w=" << loss_weights.masked << "," << loss_weights.global << "," << loss_weights.cl;
    if (with_steps) os << ";steps=" << steps;
    return os.str();
}

std::string FinetuneConfig::compatibility_hash() const {
    const std::string d = describe(false);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(d.data(), d.size())));
    return buf;
}

std::string TrainStepRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["loss_total"] = loss_total;
    j["loss_masked"] = loss_masked;
    j["loss_global"] = loss_global;
    j["loss_cl"] = loss_cl;
    j["gate"] = gate;
    j["subset"] = subset;
    j["t"] = timesteps;
    return j.dump();
}

TrainStepRecord TrainStepRecord::from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    TrainStepRecord r;
    r.step = j.at("step").get<int>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_masked = j.at("loss_masked").get<std::vector<double>>();
    r.loss_global = j.at("loss_global").get<double>();
    r.loss_cl = j.at("loss_cl").get<double>();
    r.gate = j.at("gate").get<bool>();
    r.subset = j.at("subset").get<std::vector<int>>();
    r.timesteps = j.at("t").get<std::vector<int>>();
    return r;
}

double TrainStepRecord::weighted_sum(const LossWeights& w) const {
    double m = 0.0;
    for (double v : loss_masked) m += v;
    return w.masked * m + w.global * loss_global + w.cl * loss_cl;
}

Trainer::Trainer(ImplantModel& model, std::vector<ObjectSpec> objects, FinetuneConfig cfg)
    : model_(model),
      objects_(std::move(objects)),
      cfg_((cfg.validate(), cfg)),
      schedule_(std::max<int>(1, static_cast<int>(objects_.size())), std::min<int>(cfg.k, std::max<int>(1, static_cast<int>(objects_.size()))),
                cfg.subset_strategy),
      opt_({cfg.learning_rate}) {
    if (objects_.empty()) throw TrainerError("fine-tuning needs at least one object");
    std::set<std::string> ids;
    std::vector<std::string> id_list;
    for (const auto& o : objects_) {
        o.validate();
        if (!ids.insert(o.identifier).second) throw TrainerError("duplicate identifier " + o.identifier);
        if (!model_.has_identifier(o.identifier))
            throw TrainerError("no prompt embedding for " + o.identifier + "; run the embedding initialization first");
        id_list.push_back(o.identifier);
    }
    check_identical_images(objects_);

    const auto& b = model_.backend();
    z_ = b.codec().encode(objects_.front().image);
    for (const auto& o : objects_) {
        masks_.push_back(downsample_mask(o.mask, z_.dim(1), z_.dim(2)));
        const std::string cp = cfg_.class_reg.class_prompt.empty() ? class_prompt_for(o.class_name) : cfg_.class_reg.class_prompt;
        class_pooled_.push_back(b.text().encode(tokenize(cp, b.vocab())).pooled.value());
    }
    global_prompt_ = global_prompt(id_list);
    if (!model_.has_adapters()) model_.attach_adapters(cfg_.lora, derive_seed(cfg_.seed, "lora"));
}

const TrainStepRecord& Trainer::step_once() {
    const int s = steps_done();
    const auto& sched = model_.backend().schedule();
    const int T = sched.steps();

    TrainStepRecord rec;
    rec.step = s;
    Rng gate_rng(cfg_.seed, "gate", static_cast<std::uint64_t>(s));
    rec.gate = sample_gate(gate_rng, cfg_.class_reg.p_cl);
    Rng subset_rng(cfg_.seed, "subset", static_cast<std::uint64_t>(s));
    schedule_.set_cursor(static_cast<std::size_t>(s));
    rec.subset = next_subset(schedule_, subset_rng);

    const ad::Var cond = model_.encode_prompt(global_prompt_).sequence;
    std::vector<ObjectTerm> terms;
    for (std::size_t i = 0; i < objects_.size(); ++i)
        terms.push_back({objects_[i].identifier, masks_[i], model_.encode_prompt(objects_[i].object_prompt).sequence});

    std::vector<ad::Var> masked_sum(rec.subset.size());
    std::vector<ad::Var> global_parts;
    const double inv_b = 1.0 / cfg_.batch_size;
    for (int bi = 0; bi < cfg_.batch_size; ++bi) {
        const auto idx = static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(cfg_.batch_size) + static_cast<std::uint64_t>(bi);
        Rng t_rng(cfg_.seed, "t", idx);
        const int t = static_cast<int>(t_rng.below(static_cast<std::uint64_t>(T)));
        Rng eps_rng(cfg_.seed, "eps", idx);
        const Tensor eps = eps_rng.normal_tensor(z_.shape());
        rec.timesteps.push_back(t);
        ObjectLoss l = multi_object_loss(z_, t, eps, terms, rec.subset, schedule_.k(), cond, model_, sched);
        for (std::size_t m = 0; m < l.masked.size(); ++m)
            masked_sum[m] = masked_sum[m].defined() ? ad::add(masked_sum[m], l.masked[m]) : l.masked[m];
        global_parts.push_back(l.global);
    }
    for (auto& m : masked_sum) m = ad::scale(m, inv_b);
    const ad::Var global = ad::scale(ad::add_n(global_parts), inv_b);

    std::vector<ad::Var> cl_parts;
    for (std::size_t i = 0; i < objects_.size(); ++i) {
        const ad::Var pooled = model_.encode_prompt(objects_[i].object_prompt).pooled;
        cl_parts.push_back(class_characterizing_loss(pooled, class_pooled_[i], rec.gate, cfg_.class_reg.alpha_cl));
    }
    const ad::Var cl = ad::add_n(cl_parts);

    const auto& w = cfg_.loss_weights;
    std::vector<ad::Var> total_parts;
    for (const auto& m : masked_sum) total_parts.push_back(ad::scale(m, w.masked));
    total_parts.push_back(ad::scale(global, w.global));
    total_parts.push_back(ad::scale(cl, w.cl));
    const ad::Var total = ad::add_n(total_parts);

    for (const auto& m : masked_sum) rec.loss_masked.push_back(m.item());
    rec.loss_global = global.item();
    rec.loss_cl = cl.item();
    rec.loss_total = total.item();
    if (!std::isfinite(rec.loss_total))
        throw TrainingAbort("non-finite loss at step " + std::to_string(s) + ": " + rec.to_json(), rec);

    ad::backward(total);
    std::vector<Parameter*> params;
    for (const auto& np : model_.trainable_parameters()) params.push_back(np.param);
    opt_.step(params);
    for (Parameter* p : params)
        if (!p->value.all_finite()) throw TrainingAbort("non-finite parameter " + p->name + " after step " + std::to_string(s), rec);

    records_.push_back(std::move(rec));
    return records_.back();
}

void Trainer::run(const std::function<void(const TrainStepRecord&)>& on_step) {
    while (steps_done() < cfg_.steps) {
        const auto& r = step_once();
        if (on_step) on_step(r);
    }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    TensorArchive ar = model_.export_archive();
    opt_.save_state(ar);
    ar.set_meta("implant.checkpoint", kCheckpointFormat);
    ar.set_meta("trainer.step", std::to_string(steps_done()));
    ar.set_meta("trainer.config_hash", cfg_.compatibility_hash());
    std::string log;
    for (const auto& r : records_) log += r.to_json() + "\n";
    ar.set_meta("trainer.log", log);
    ar.save(path);
}

void Trainer::write_log(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        for (const auto& r : records_) out << r.to_json() << "\n";
        if (!out) throw TrainerError("failed to write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Trainer Trainer::resume(ImplantModel& model, std::vector<ObjectSpec> objects, FinetuneConfig cfg,
                        const std::filesystem::path& checkpoint) {
    const TensorArchive ar = TensorArchive::load(checkpoint);
    if (!ar.has_meta("implant.checkpoint") || ar.meta("implant.checkpoint") != kCheckpointFormat)
        throw TrainerError(checkpoint.string() + " is not a training checkpoint");
    if (ar.meta("trainer.config_hash") != cfg.compatibility_hash())
        throw TrainerError("checkpoint config hash " + ar.meta("trainer.config_hash") + " does not match " + cfg.compatibility_hash());
    std::vector<TrainStepRecord> records;
    std::istringstream log(ar.meta("trainer.log"));
    for (std::string line; std::getline(log, line);)
        if (!line.empty()) records.push_back(TrainStepRecord::from_json(line));
    if (std::to_string(records.size()) != ar.meta("trainer.step")) throw TrainerError("checkpoint log length does not match its step");
    if (static_cast<int>(records.size()) > cfg.steps)
        throw TrainerError("checkpoint is at step " + std::to_string(records.size()) + ", beyond the configured " + std::to_string(cfg.steps));

    // Stage into a copy so a failure leaves `model` untouched.
    ImplantModel staged = model;
    staged.import_archive(ar);
    model = std::move(staged);
    Trainer tr(model, std::move(objects), cfg);
    tr.opt_.load_state(ar);
    tr.records_ = std::move(records);
    return tr;
}

FinetuneResult finetune(ImplantModel& model, const std::vector<ObjectSpec>& objects, const FinetuneConfig& cfg) {
    Trainer tr(model, objects, cfg);
    tr.run();
    return {tr.records(), model.export_archive()};
}

}  // namespace implant
