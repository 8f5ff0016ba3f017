// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// implant_acceptance: runs the ten acceptance checks against the pretrained
// default backend and prints one PASS/FAIL line for each.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "implant/class_reg.hpp"
#include "implant/evalkit.hpp"
#include "implant/masked_loss.hpp"
#include "implant/pipeline.hpp"
#include "implant/proto_embed.hpp"
#include "implant/shapes.hpp"
#include "implant/trainer.hpp"

using namespace implant;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Shared state for the checks.
struct Context {
    ToyBackend backend;
    Scene scene;
    RenderedScene rendered;
    std::vector<ObjectSpec> objects;
    fs::path work;
    double lr_toy = 1e-2;
};

Tensor randn(Shape s, std::uint64_t seed, const std::string& purpose) { return Rng(seed, purpose).normal_tensor(std::move(s)); }

double relative_error(double a, double n, double floor) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); }

double central_difference(const std::function<double()>& f, double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * h);
}

LatentMask random_mask(Rng& rng, int h, int w) {
    LatentMask m = LatentMask::filled(h, w, 0.0);
    for (auto& v : m.values.storage()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    m.values[rng.below(m.values.size())] = 1.0;
    return m;
}

ImplantModel model_with_objects(const Context& ctx, bool perturb_adapters) {
    ImplantModel m(ctx.backend);
    for (const auto& o : ctx.objects)
        m.add_identifier(o.identifier, seed_prompt_rows(o.class_name, m.vocab(), m.backend().text(), 4, 0.01, 0, o.identifier));
    m.attach_adapters(LoraConfig{}, 0);
    if (perturb_adapters) {
        Rng rng(1, "acceptance.adapters");
        for (auto* a : m.adapters()) a->B.value = rng.normal_tensor(a->B.value.shape(), 0.05);
    }
    return m;
}

FinetuneConfig toy_finetune(const Context& ctx, int steps) {
    FinetuneConfig c;
    c.learning_rate = ctx.lr_toy;
    c.steps = steps;
    return c;
}

ImplantModel model_for_training(const Context& ctx) {
    ImplantModel m(ctx.backend);
    for (const auto& o : ctx.objects)
        m.add_identifier(o.identifier, seed_prompt_rows(o.class_name, m.vocab(), m.backend().text(), 4, 0.01, 0, o.identifier));
    return m;
}

// 1
Outcome masked_identity(const Context& ctx) {
    const auto t0 = Clock::now();
    const ImplantModel m = model_with_objects(ctx, true);
    const auto& sched = m.backend().schedule();
    const Shape ls = m.backend().codec().latent_shape();
    Rng rng(1, "acceptance.c1");
    double worst = 0;
    for (int n = 0; n < 100; ++n) {
        const Tensor z = rng.normal_tensor(ls), eps = rng.normal_tensor(ls);
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
        const LatentMask mask = random_mask(rng, ls[1], ls[2]);
        const ad::Var cm = ad::constant(m.encode_prompt(ctx.objects[n % 2].object_prompt).sequence.value());
        const double term = masked_term(z, t, eps, mask, cm, m, sched).item();
        const Tensor mm = mask.broadcast(ls[0]);
        Tensor zm = z;
        for (std::size_t i = 0; i < z.size(); ++i) zm[i] *= mm[i];
        const Tensor pred = m.predict(ad::constant(add_noise(zm, t, eps, sched)), t, cm).value();
        double oracle = 0;
        for (std::size_t i = 0; i < z.size(); ++i) oracle += mm[i] * (eps[i] - pred[i]) * (eps[i] - pred[i]);
        oracle /= static_cast<double>(z.size());
        worst = std::max(worst, std::abs(term - oracle));
    }
    const double secs = seconds_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "100 instances, max abs err %.2e, %.2fs", worst, secs);
    return {worst < 1e-6 && secs < 5.0, buf};
}

// 2
Outcome degenerate_masks(const Context& ctx) {
    const ImplantModel m = model_with_objects(ctx, true);
    const auto& sched = m.backend().schedule();
    const Tensor z = m.backend().codec().encode(ctx.rendered.image);
    const Shape ls = z.shape();
    bool ok = true;
    double ones_gap = 0, zeros_val = 0;
    for (int k = 0; k < 5; ++k) {
        const Tensor eps = randn(ls, static_cast<std::uint64_t>(k), "acceptance.c2");
        const int t = 10 + 17 * k;
        const ad::Var cm = m.encode_prompt(ctx.objects[0].object_prompt).sequence;
        const double ones = masked_term(z, t, eps, LatentMask::filled(ls[1], ls[2], 1.0), cm, m, sched).item();
        const double plain = ldm_loss({z, t, eps, cm}, m, sched).item();
        const double zeros = masked_term(z, t, eps, LatentMask::filled(ls[1], ls[2], 0.0), cm, m, sched).item();
        ones_gap = std::max(ones_gap, std::abs(ones - plain));
        zeros_val = std::max(zeros_val, std::abs(zeros));
        ok = ok && ones == plain && zeros == 0.0;
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "all-ones vs plain loss gap %.1e, all-zeros value %.1e", ones_gap, zeros_val);
    return {ok, buf};
}

// 3
Outcome multi_object(const Context& ctx) {
    const ImplantModel m = model_with_objects(ctx, true);
    const auto& sched = m.backend().schedule();
    const Shape ls = m.backend().codec().latent_shape();
    Rng rng(3, "acceptance.c3");
    double worst = 0;
    for (int r : {2, 3}) {
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<ObjectTerm> objs;
            for (int i = 0; i < r; ++i)
                objs.push_back({"[o" + std::to_string(i) + "]", random_mask(rng, ls[1], ls[2]), ad::constant(rng.normal_tensor({6, 32}))});
            const Tensor z = rng.normal_tensor(ls), eps = rng.normal_tensor(ls);
            const int t = static_cast<int>(rng.below(100));
            const ad::Var c = ad::constant(rng.normal_tensor({8, 32}));
            CombinationSchedule cs(r, 2);
            const auto subset = next_subset(cs, rng);
            const double total = multi_object_loss(z, t, eps, objs, subset, 2, c, m, sched).total.item();
            double oracle = ldm_loss({z, t, eps, c}, m, sched).item();
            for (int i : subset) oracle += single_object_loss(z, t, eps, objs[static_cast<std::size_t>(i)], c, m, sched).masked[0].item();
            worst = std::max(worst, std::abs(total - oracle));
        }
    }
    CombinationSchedule four(4, 2);
    Rng draws(4, "acceptance.c3.subset");
    std::set<std::vector<int>> seen;
    for (int i = 0; i < 6000; ++i) seen.insert(next_subset(four, draws));
    char buf[160];
    std::snprintf(buf, sizeof buf, "r in {2,3}, k=2: max abs err %.2e; r=4,k=2 universe %zu, seen %zu", worst, four.subsets().size(), seen.size());
    return {worst < 1e-6 && four.subsets().size() == 6 && seen.size() == 6, buf};
}

// 4
Outcome gradient_suite(const Context& ctx) {
    ImplantModel m = model_with_objects(ctx, true);
    const auto& b = m.backend();
    const auto& sched = b.schedule();
    const ObjectSpec& obj = ctx.objects[0];
    const Tensor fused = prototype_target(obj, b.vocab(), b.text(), b.image());
    const Tensor class_pooled = b.text().encode(tokenize(class_prompt_for(obj.class_name), b.vocab())).pooled.value();
    Parameter& rows = m.embedding(obj.identifier).rows;
    const std::string carrier = identifier_prompt(obj.identifier);

    auto l_pe = [&] { return prototypical_loss(m.encode_prompt(carrier).pooled, fused); };
    auto l_cl = [&] { return class_characterizing_loss(m.encode_prompt(obj.object_prompt).pooled, class_pooled, true, 1.0); };

    const Tensor z = b.codec().encode(ctx.rendered.image);
    const Tensor eps = randn(z.shape(), 4, "acceptance.c4.eps");
    std::vector<LatentMask> masks;
    for (const auto& o : ctx.objects) masks.push_back(downsample_mask(o.mask, z.dim(1), z.dim(2)));
    std::vector<std::string> ids;
    for (const auto& o : ctx.objects) ids.push_back(o.identifier);
    const std::string gp = global_prompt(ids);
    auto l_train = [&] {
        std::vector<ObjectTerm> terms;
        for (std::size_t i = 0; i < ctx.objects.size(); ++i) terms.push_back({ctx.objects[i].identifier, masks[i], m.encode_prompt(ctx.objects[i].object_prompt).sequence});
        ObjectLoss sp = multi_object_loss(z, 37, eps, terms, {0, 1}, 2, m.encode_prompt(gp).sequence, m, sched);
        std::vector<ad::Var> parts = {sp.total};
        for (const auto& o : ctx.objects) {
            const Tensor cc = b.text().encode(tokenize(class_prompt_for(o.class_name), b.vocab())).pooled.value();
            parts.push_back(class_characterizing_loss(m.encode_prompt(o.object_prompt).pooled, cc, true, 1.0));
        }
        return ad::add_n(parts);
    };

    auto check = [&](const std::function<ad::Var()>& loss, const std::vector<Parameter*>& params, int coords, double h, double floor,
                     std::uint64_t seed) {
        for (auto& p : m.trainable_parameters()) p.param->zero_grad();
        ad::backward(loss());
        Rng pick(seed, "acceptance.c4.pick");
        double worst = 0;
        for (int k = 0; k < coords; ++k) {
            Parameter* p = params[pick.below(params.size())];
            const auto i = static_cast<std::size_t>(pick.below(p->value.size()));
            const double analytic = p->grad[i];
            const double num = central_difference([&] { return loss().item(); }, p->value[i], h);
            worst = std::max(worst, relative_error(analytic, num, floor));
        }
        return worst;
    };

    std::vector<Parameter*> lora_b, prompt_rows;
    for (auto* a : m.adapters()) lora_b.push_back(&a->B);
    for (const auto& o : ctx.objects) prompt_rows.push_back(&m.embedding(o.identifier).rows);
    const double e_pe = check(l_pe, {&rows}, 10, 1e-5, 1e-7, 1);
    const double e_cl = check(l_cl, {&rows}, 10, 1e-5, 1e-7, 2);
    const double e_tr = std::max(check(l_train, lora_b, 10, 1e-5, 1e-6, 3), check(l_train, prompt_rows, 10, 1e-5, 1e-6, 4));
    char buf[160];
    std::snprintf(buf, sizeof buf, "max rel err L_PE %.1e, L_CL %.1e, training loss (LoRA B, prompt rows) %.1e", e_pe, e_cl, e_tr);
    return {e_pe < 1e-4 && e_cl < 1e-4 && e_tr < 1e-3, buf};
}

// 5
Outcome proto_efficacy(const Context& ctx) {
    const auto t0 = Clock::now();
    const auto& b = ctx.backend;
    double margin_sum = 0, worst_reduction = 1.0;
    const int seeds = 20;
    const int d = b.vocab().embedding_dim();
    double table_sd = 0;
    const Tensor& table = b.text().token_embedding().value;
    for (double v : table.storage()) table_sd += v * v;
    table_sd = std::sqrt(table_sd / static_cast<double>(table.size()));
    for (int s = 0; s < seeds; ++s) {
        const ObjectSpec& obj = ctx.objects[static_cast<std::size_t>(s % 2)];
        ProtoConfig pc;
        pc.seed = static_cast<std::uint64_t>(s);
        const ProtoResult r = initialize_prototypical(obj, b.vocab(), b.text(), b.image(), pc);
        const Tensor fused = prototype_target(obj, b.vocab(), b.text(), b.image());
        ProtoConfig zero = pc;
        zero.max_steps = 0;
        Tensor random_rows = randn({pc.n_tokens, d}, static_cast<std::uint64_t>(s), "acceptance.c5.random");
        for (auto& v : random_rows.storage()) v *= table_sd;
        const ProtoResult rnd = optimize_prompt_rows(obj.identifier, random_rows, fused, b.vocab(), b.text(), zero);
        margin_sum += (1.0 - r.final_loss) - (1.0 - rnd.initial_loss);
        worst_reduction = std::min(worst_reduction, r.initial_loss > 0 ? 1.0 - r.final_loss / r.initial_loss : 1.0);
    }
    const double margin = margin_sum / seeds, secs = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "cos margin over random %.3f, min L_PE reduction %.1f%%, %.1fs", margin, 100 * worst_reduction, secs);
    return {margin > 0.1 && worst_reduction >= 0.5 && secs < 60, buf};
}

// 6
Outcome gating(const Context& ctx) {
    bool ok = true;
    int off_nonzero = 0, on_closed = 0;
    for (double p : {0.0, 1.0}) {
        ImplantModel m = model_for_training(ctx);
        FinetuneConfig c = toy_finetune(ctx, 100);
        c.class_reg.p_cl = p;
        Trainer t(m, ctx.objects, c);
        t.run();
        for (const auto& r : t.records()) {
            if (p == 0.0 && (r.gate || r.loss_cl != 0.0)) ++off_nonzero;
            if (p == 1.0 && !r.gate) ++on_closed;
        }
    }
    ok = off_nonzero == 0 && on_closed == 0;
    Rng rng(6, "acceptance.c6");
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += sample_gate(rng, 0.5);
    const double rate = hits / 10000.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "p_cl=0 nonzero steps %d, p_cl=1 closed steps %d, p_cl=0.5 rate %.4f", off_nonzero, on_closed, rate);
    return {ok && rate >= 0.48 && rate <= 0.52, buf};
}

// 7
Outcome lora_contracts(const Context& ctx) {
    ImplantModel plain = model_for_training(ctx);
    ImplantModel adapted = model_for_training(ctx);
    adapted.attach_adapters(LoraConfig{}, 0);
    const Tensor z = randn(plain.backend().codec().latent_shape(), 7, "acceptance.c7");
    bool identical = true;
    for (int t : {0, 50, 99}) {
        const std::string p = ctx.objects[0].object_prompt;
        identical = identical && plain.predict(ad::constant(z), t, plain.encode_prompt(p).sequence).value() ==
                                     adapted.predict(ad::constant(z), t, adapted.encode_prompt(p).sequence).value();
    }
    ImplantModel m = model_for_training(ctx);
    const std::uint64_t frozen = m.frozen_hash();
    Trainer t(m, ctx.objects, toy_finetune(ctx, 100));
    int drift = 0;
    t.run([&](const TrainStepRecord&) { drift += m.frozen_hash() != frozen; });
    int max_rank = 0;
    for (const auto* a : m.adapters()) max_rank = std::max(max_rank, numerical_rank(a->delta()));
    char buf[160];
    std::snprintf(buf, sizeof buf, "identity at init %s, max rank(delta) %d of %d, frozen-hash changes %d over 100 steps",
                  identical ? "exact" : "broken", max_rank, t.config().lora.rank, drift);
    return {identical && max_rank <= t.config().lora.rank && drift == 0, buf};
}

ProjectConfig project_in(const Context& ctx, const fs::path& dir) {
    fs::create_directories(dir);
    save_image(ctx.rendered.image, dir / "scene.png");
    ProjectConfig c;
    c.output_dir = dir / "out";
    for (std::size_t i = 0; i < ctx.objects.size(); ++i) {
        const auto mpath = dir / ("mask" + std::to_string(i) + ".png");
        save_mask(ctx.objects[i].mask, mpath);
        c.objects.push_back({dir / "scene.png", mpath, ctx.objects[i].class_name, ctx.objects[i].identifier});
    }
    c.finetune.learning_rate = ctx.lr_toy;
    c.set_seed(0);
    c.save(dir / "project.json");
    return c;
}

// 8
Outcome overfit(const Context& ctx) {
    const auto t0 = Clock::now();
    const ProjectConfig c = project_in(ctx, ctx.work / "overfit");
    FinetuneOptions fo;
    fo.auto_init = true;
    fo.force = true;
    const auto ft = cmd_finetune(c, fo);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += ft.records[static_cast<std::size_t>(i)].loss_total / 10;
        last += ft.records[ft.records.size() - 10 + static_cast<std::size_t>(i)].loss_total / 10;
    }
    std::vector<std::string> ids;
    for (const auto& o : ctx.objects) ids.push_back(o.identifier);
    const auto gen = cmd_generate(c, global_prompt(ids), c.seed, 1, {true, {}});
    const double mae = mean_abs_error(gen[0].image, ctx.rendered.image);
    const double secs = seconds_since(t0);
    char buf[200];
    std::snprintf(buf, sizeof buf, "lr %.0e, loss first10 %.4f -> last10 %.4f, reconstruction MAE %.4f, %.1fs", ctx.lr_toy, first, last, mae,
                  secs);
    return {ft.records.size() == 100 && last < first && mae < 0.15 && secs < 300, buf};
}

// 9
Outcome kid_checks(const Context&) {
    auto rows = [](int n, int d, double mean, std::uint64_t seed) {
        Tensor t = Rng(seed, "acceptance.c9").normal_tensor({n, d});
        for (auto& v : t.storage()) v += mean;
        return t;
    };
    const int reps = 50;
    std::vector<double> v;
    for (int r = 0; r < reps; ++r) v.push_back(kid(rows(100, 8, 0, 100 + static_cast<std::uint64_t>(r)), rows(100, 8, 0, 200 + static_cast<std::uint64_t>(r))));
    double mean = 0, var = 0;
    for (double x : v) mean += x / reps;
    for (double x : v) var += (x - mean) * (x - mean) / (reps - 1);
    const double se = std::sqrt(var / reps);

    const Tensor a = rows(5, 6, 0, 1), b = rows(5, 6, 0.7, 2);
    auto k = [](const Tensor& x, int i, const Tensor& y, int j) {
        double dot = 0;
        for (int c = 0; c < x.dim(1); ++c) dot += x.at(i, c) * y.at(j, c);
        return std::pow(dot / x.dim(1) + 1, 3);
    };
    double xx = 0, yy = 0, xy = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            if (i != j) {
                xx += k(a, i, a, j);
                yy += k(b, i, b, j);
            }
            xy += k(a, i, b, j);
        }
    const double brute = xx / 20 + yy / 20 - 2 * xy / 25;
    const double brute_err = std::abs(kid(a, b) - brute);
    const double sep = kid(rows(200, 8, 0, 3), rows(200, 8, 3, 4));
    char buf[200];
    std::snprintf(buf, sizeof buf, "same-dist mean %.2e (3 SE = %.2e), n=m=5 brute err %.1e, separated %.3f", mean, 3 * se, brute_err, sep);
    return {std::abs(mean) <= 3 * se && brute_err < 1e-10 && sep > 0.5, buf};
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
    }
    return out;
}

// 10
Outcome determinism(const Context& ctx) {
    const ProjectConfig c = project_in(ctx, ctx.work / "determinism");
    std::vector<std::string> ids;
    for (const auto& o : ctx.objects) ids.push_back(o.identifier);
    auto run_all = [&] {
        StageOptions force{true, {}};
        cmd_init_embedding(c, force);
        FinetuneOptions fo;
        fo.force = true;
        cmd_finetune(c, fo);
        cmd_generate(c, global_prompt(ids), c.seed, 2, force);
        return read_tree(c.output_dir);
    };
    const auto first = run_all();
    const auto second = run_all();
    const bool bytes_equal = first == second && !first.empty();

    ImplantModel full = model_for_training(ctx);
    Trainer tf(full, ctx.objects, toy_finetune(ctx, 100));
    tf.run();
    ImplantModel half = model_for_training(ctx);
    Trainer th(half, ctx.objects, toy_finetune(ctx, 50));
    th.run();
    const fs::path ckpt = ctx.work / "determinism" / "half.safetensors";
    th.save_checkpoint(ckpt);
    ImplantModel resumed = model_for_training(ctx);
    Trainer tr = Trainer::resume(resumed, ctx.objects, toy_finetune(ctx, 100), ckpt);
    tr.run();
    double worst = 0;
    for (std::size_t i = 0; i < 100; ++i) worst = std::max(worst, std::abs(tf.records()[i].loss_total - tr.records()[i].loss_total));
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu artifacts %s across reruns; 50+50 vs 100 max loss diff %.1e", first.size(),
                  bytes_equal ? "byte-identical" : "DIFFER", worst);
    return {bytes_equal && tr.records().size() == 100 && worst <= 1e-6, buf};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"implant acceptance suite"};
    std::string work = (fs::temp_directory_path() / "implant-acceptance").string();
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory for pipeline runs");
    app.add_option("--only", only, "run only these criteria (1-10)");
    CLI11_PARSE(app, argc, argv);

    const auto t0 = Clock::now();
    BackendConfig bc;
    ToyBackend backend = ToyBackend::load_or_pretrain(bc, ToyBackend::default_cache_dir(), [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); });
    Rng scene_rng(0, "scene");
    const Scene scene = random_scene(scene_rng, 2);
    const RenderedScene rs = render_scene(scene, bc.image_size);
    std::vector<ObjectSpec> objects;
    for (int i = 0; i < 2; ++i)
        objects.push_back(ObjectSpec::make(rs.image, rs.masks[static_cast<std::size_t>(i)], shape_class_name(scene.shapes[static_cast<std::size_t>(i)].kind),
                                           "[obj" + std::to_string(i + 1) + "]"));
    Context ctx{std::move(backend), scene, rs, objects, fs::path(work)};
    fs::remove_all(ctx.work);
    fs::create_directories(ctx.work);
    std::printf("backend %s, scene \"%s\"\n", bc.fingerprint().c_str(), rs.caption.c_str());

    const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> checks = {
        {"masked-loss algebraic identity", masked_identity},
        {"degenerate masks", degenerate_masks},
        {"multi-object decomposition", multi_object},
        {"gradient suite", gradient_suite},
        {"prototypical-init efficacy", proto_efficacy},
        {"regularization gating", gating},
        {"LoRA contracts", lora_contracts},
        {"one-shot overfit regression", overfit},
        {"KID estimator", kid_checks},
        {"determinism and resume", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = checks[i].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, checks[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%s (%.1fs)\n", failed ? "SOME CRITERIA FAILED" : "ALL CRITERIA PASSED", seconds_since(t0));
    return failed ? 1 : 0;
}
