// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "implant/class_reg.hpp"
#include "implant/masked_loss.hpp"
#include "implant/object.hpp"
#include "implant/optim.hpp"
#include "implant/proto_embed.hpp"
#include "test_util.hpp"

using namespace implant;
using implant::testing::relative_error;
using implant::testing::tiny_backend;

namespace {

Tensor randn(Shape s, std::uint64_t seed) { return Rng(seed, "test.losses").normal_tensor(std::move(s)); }

Tensor unit(Tensor v) {
    double n = 0;
    for (double x : v.storage()) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v.storage()) x /= n;
    return v;
}

double cosine(const Tensor& a, const Tensor& b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return d / std::sqrt(na * nb);
}

ObjectSpec square_object() {
    const RenderedScene rs = render_scene(implant::testing::fixed_scene(), 64);
    return ObjectSpec::make(rs.image, rs.masks[0], "square", "[sq*]");
}

// eps_theta = w * z_t + b * mean(cond); w, b trainable and shaped like the latent.
class LinearDenoiser : public Denoiser {
public:
    LinearDenoiser(std::uint64_t seed)
        : w("w", randn({4, 8, 8}, seed), true), b("b", randn({4, 8, 8}, seed + 1), true) {}
    ad::Var predict(const ad::Var& z_t, int, const ad::Var& cond) const override {
        const double c = ad::mean_rows(cond).value().sum() / cond.value().dim(1);
        return ad::add(ad::mul(ad::param(w), z_t), ad::scale(ad::param(b), c));
    }
    Parameter w, b;
};

LatentMask random_latent_mask(std::uint64_t seed) {
    Rng rng(seed, "test.mask");
    LatentMask m = LatentMask::filled(8, 8, 0.0);
    for (auto& v : m.values.storage()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    m.values[0] = 1.0;
    return m;
}

}  // namespace

// ---- proto_embed

TEST(Fusion, ClosedFormExamples) {
    const Tensor v = unit(randn({5}, 1));
    EXPECT_LT(max_abs_diff(fuse_embeddings({v, v, v}), v), 1e-15);
    const Tensor e1({3}, std::vector<double>{1, 0, 0}), e2({3}, std::vector<double>{0, 1, 0}), e3({3}, std::vector<double>{0, 0, 1});
    const Tensor f = fuse_embeddings({e1, e2, e3});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f[i], 1.0 / 3.0, 1e-15);
}

TEST(Fusion, NormalizeThenAverageOracle) {
    const Tensor a = randn({32}, 2), b = randn({32}, 3), c = randn({32}, 4);
    const Tensor f = fuse_embeddings({a, b, c});
    const Tensor ua = unit(a), ub = unit(b), uc = unit(c);
    double n = 0;
    for (std::size_t i = 0; i < 32; ++i) {
        EXPECT_NEAR(f[i], (ua[i] + ub[i] + uc[i]) / 3.0, 1e-7);
        n += f[i] * f[i];
    }
    EXPECT_LE(std::sqrt(n), 1.0 + 1e-12);
}

TEST(Fusion, Errors) {
    const Tensor a = randn({4}, 5);
    EXPECT_THROW(fuse_embeddings({a, Tensor({4}), a}), ProtoError);
    EXPECT_THROW(fuse_embeddings({a, randn({5}, 6), a}), ProtoError);
    Tensor nan = a;
    nan[2] = std::nan("");
    EXPECT_THROW(fuse_embeddings({a, a, nan}), ProtoError);
}

TEST(PrototypicalLoss, CosineDistanceExamples) {
    const Tensor f = randn({8}, 7);
    Tensor neg = f, orth({8});
    for (auto& x : neg.storage()) x = -x;
    orth[0] = f[1];
    orth[1] = -f[0];
    EXPECT_NEAR(prototypical_loss(f, f), 0.0, 1e-12);
    EXPECT_NEAR(prototypical_loss(neg, f), 2.0, 1e-12);
    EXPECT_NEAR(prototypical_loss(orth, f), 1.0, 1e-12);
    EXPECT_THROW(prototypical_loss(Tensor({8}), f), ProtoError);
}

TEST(Proto, SeedRowsTileClassTokens) {
    const auto& b = tiny_backend();
    const Tensor rows = seed_prompt_rows("circle", b.vocab(), b.text(), 4, 0.0, 1, "[c*]");
    ASSERT_EQ(rows.shape(), (Shape{4, b.vocab().embedding_dim()}));
    const int id = b.vocab().index_of("circle");
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < rows.dim(1); ++j) ASSERT_EQ(rows.at(r, j), b.text().token_embedding().value.at(id, j));
    EXPECT_THROW(seed_prompt_rows("teapot", b.vocab(), b.text(), 4, 0.0, 1, "[c*]"), ProtoError);
    EXPECT_THROW(seed_prompt_rows("circle", b.vocab(), b.text(), 0, 0.0, 1, "[c*]"), ProtoError);
}

TEST(Proto, ZeroStepsReturnsSeedAndRunsAreBitwiseDeterministic) {
    const auto& b = tiny_backend();
    const ObjectSpec obj = square_object();
    ProtoConfig cfg;
    cfg.max_steps = 0;
    const ProtoResult r0 = initialize_prototypical(obj, b.vocab(), b.text(), b.image(), cfg);
    EXPECT_EQ(r0.embedding.rows.value, seed_prompt_rows("square", b.vocab(), b.text(), 4, cfg.seed_noise, cfg.seed, obj.identifier));
    EXPECT_EQ(r0.steps_run, 0);
    EXPECT_EQ(r0.final_loss, r0.initial_loss);

    cfg.max_steps = 60;
    const ProtoResult a = initialize_prototypical(obj, b.vocab(), b.text(), b.image(), cfg);
    const ProtoResult c = initialize_prototypical(obj, b.vocab(), b.text(), b.image(), cfg);
    EXPECT_EQ(a.embedding.rows.value, c.embedding.rows.value);
    EXPECT_EQ(a.final_loss, c.final_loss);
}

TEST(Proto, SingleTokenOptimizationReducesLossTenfold) {
    const auto& b = tiny_backend();
    TextEncoderConfig tc;
    tc.layers = 1;
    tc.identity_init = true;
    Rng rng(21, "test.text");
    const TextEncoder text(tc, b.vocab().base_size(), rng);
    ProtoConfig cfg;
    cfg.n_tokens = 1;
    cfg.tolerance = 0.0;
    const ProtoResult r = initialize_prototypical(square_object(), b.vocab(), text, b.image(), cfg);
    EXPECT_LT(r.final_loss, 0.1 * r.initial_loss) << r.initial_loss << " -> " << r.final_loss;
    EXPECT_LE(r.steps_run, 500);
    ASSERT_FALSE(r.best_trace.empty());
    for (std::size_t i = 1; i < r.best_trace.size(); ++i) ASSERT_LE(r.best_trace[i], r.best_trace[i - 1]);
    EXPECT_EQ(r.best_trace.back(), r.final_loss);
}

TEST(Proto, ToleranceAndPatienceStop) {
    const auto& b = tiny_backend();
    ProtoConfig cfg;
    cfg.tolerance = 1.5;
    const ProtoResult r = initialize_prototypical(square_object(), b.vocab(), b.text(), b.image(), cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.steps_run, 0);

    cfg.tolerance = 0.0;
    cfg.patience = 1;
    cfg.learning_rate = 50.0;
    const ProtoResult s = initialize_prototypical(square_object(), b.vocab(), b.text(), b.image(), cfg);
    EXPECT_TRUE(s.stalled);
    EXPECT_LT(s.steps_run, 500);
}

TEST(Proto, OptimizedBeatsRandomRows) {
    const auto& b = tiny_backend();
    const Tensor fused = prototype_target(square_object(), b.vocab(), b.text(), b.image());
    const int d = b.vocab().embedding_dim();
    ProtoConfig cfg;
    cfg.max_steps = 100;
    cfg.n_tokens = 4;
    double opt_cos = 0, rand_cos = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        const Tensor rows = randn({4, d}, 100 + static_cast<std::uint64_t>(s));
        cfg.seed = static_cast<std::uint64_t>(s);
        const ProtoResult r = optimize_prompt_rows("[sq*]", rows, fused, b.vocab(), b.text(), cfg);
        opt_cos += 1.0 - r.final_loss;
        rand_cos += 1.0 - r.initial_loss;
    }
    EXPECT_GT(opt_cos / seeds - rand_cos / seeds, 0.1);
}

TEST(Proto, LossGradientMatchesFiniteDifferences) {
    const auto& b = tiny_backend();
    const Tensor fused = prototype_target(square_object(), b.vocab(), b.text(), b.image());
    Vocabulary v = b.vocab();
    v.reserve_identifier("[sq*]", 4);
    PromptEmbedding e{"[sq*]", Parameter("prompt_embedding/[sq*]", randn({4, v.embedding_dim()}, 9), true)};
    EmbeddingTable table(b.text().token_embedding());
    table.bind(v, e);
    const auto idx = tokenize(identifier_prompt("[sq*]"), v);
    auto loss = [&] { return prototypical_loss(b.text().encode(idx, table).pooled, fused); };
    e.rows.zero_grad();
    ad::backward(loss());
    Rng pick(10, "test.pick");
    for (int k = 0; k < 5; ++k) {
        const auto i = static_cast<std::size_t>(pick.below(e.rows.value.size()));
        const double num = implant::testing::central_difference([&] { return loss().item(); }, e.rows.value[i], 1e-5);
        EXPECT_LT(relative_error(e.rows.grad[i], num, 1e-7), 1e-4);
    }
}

// ---- class_reg

TEST(ClassReg, GateExtremesAndRate) {
    Rng rng(1, "gate");
    for (int i = 0; i < 1000; ++i) {
        ASSERT_FALSE(sample_gate(rng, 0.0));
        ASSERT_TRUE(sample_gate(rng, 1.0));
    }
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += sample_gate(rng, 0.5);
    EXPECT_GE(hits, 4800);
    EXPECT_LE(hits, 5200);
}

TEST(ClassReg, GateConsumesOneDraw) {
    Rng a(2, "gate"), b(2, "gate");
    sample_gate(a, 0.3);
    b.uniform();
    EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(ClassReg, LossExamplesAndScaleInvariance) {
    const Tensor v = randn({16}, 3), w = randn({16}, 4);
    Tensor orth({16});
    orth[0] = v[1];
    orth[1] = -v[0];
    EXPECT_EQ(class_characterizing_loss(v, w, false, 1.0), 0.0);
    EXPECT_EQ(class_characterizing_loss(Tensor({16}), w, false, 1.0), 0.0);
    EXPECT_NEAR(class_characterizing_loss(v, v, true, 1.0), 0.0, 1e-12);
    EXPECT_NEAR(class_characterizing_loss(orth, v, true, 1.0), 1.0, 1e-12);
    EXPECT_NEAR(class_characterizing_loss(v, w, true, 0.5), 1.0 - 0.5 * cosine(v, w), 1e-12);
    Tensor v2 = v;
    for (auto& x : v2.storage()) x *= 2.0;
    EXPECT_NEAR(class_characterizing_loss(v2, w, true, 1.0), class_characterizing_loss(v, w, true, 1.0), 1e-7);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const double l = class_characterizing_loss(randn({16}, 50 + s), randn({16}, 90 + s), true, 1.0);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 2.0);
    }
    EXPECT_THROW(class_characterizing_loss(Tensor({16}), w, true, 1.0), std::domain_error);
}

TEST(ClassReg, ConfigValidation) {
    EXPECT_NO_THROW(ClassRegConfig{}.validate());
    EXPECT_THROW((ClassRegConfig{1.0, 1.5, ""}.validate()), std::invalid_argument);
    EXPECT_THROW((ClassRegConfig{-0.1, 0.5, ""}.validate()), std::invalid_argument);
}

TEST(ClassReg, GradientIntoPromptRowsOnlyWhenGated) {
    const auto& b = tiny_backend();
    Vocabulary v = b.vocab();
    v.reserve_identifier("[sq*]", 2);
    PromptEmbedding e{"[sq*]", Parameter("prompt_embedding/[sq*]", randn({2, v.embedding_dim()}, 11), true)};
    EmbeddingTable table(b.text().token_embedding());
    table.bind(v, e);
    const auto idx = tokenize(object_prompt_for("[sq*]", "square"), v);
    const Tensor cc = b.text().encode(tokenize(class_prompt_for("square"), v)).pooled.value();
    auto loss = [&](bool gate) { return class_characterizing_loss(b.text().encode(idx, table).pooled, cc, gate, 1.0); };
    e.rows.zero_grad();
    ad::Var off = loss(false);
    if (off.requires_grad()) ad::backward(off);
    EXPECT_EQ(e.rows.grad.max_abs(), 0.0);
    ad::backward(loss(true));
    Rng pick(12, "test.pick");
    for (int k = 0; k < 5; ++k) {
        const auto i = static_cast<std::size_t>(pick.below(e.rows.value.size()));
        const double num = implant::testing::central_difference([&] { return loss(true).item(); }, e.rows.value[i], 1e-5);
        EXPECT_LT(relative_error(e.rows.grad[i], num, 1e-7), 1e-4);
    }
}

// ---- masked_loss

TEST(LatentMaskOps, DownsampleExamples) {
    const LatentMask full = downsample_mask(Mask(64, 64, 1), 8, 8);
    EXPECT_EQ(full.coverage(), 1.0);
    Mask top(64, 64, 0);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 64; ++j) top.at(i, j) = 1;
    const LatentMask half = downsample_mask(top, 8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) ASSERT_EQ(half.values.at(i, j), i < 4 ? 1.0 : 0.0);
    EXPECT_THROW(downsample_mask(Mask(64, 64, 0), 8, 8), MaskError);
    Mask speck(64, 64, 0);
    speck.at(3, 3) = 1;
    try {
        downsample_mask(speck, 8, 8);
        FAIL();
    } catch (const MaskError& err) {
        EXPECT_NE(std::string(err.what()).find("vanishes"), std::string::npos);
    }
}

TEST(LatentMaskOps, DownsampleMatchesCellCountOracle) {
    const RenderedScene rs = implant::testing::two_object_scene(3);
    for (const Mask& m : rs.masks) {
        const LatentMask lm = downsample_mask(m, 8, 8);
        for (int ci = 0; ci < 8; ++ci)
            for (int cj = 0; cj < 8; ++cj) {
                int on = 0;
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) on += m.at(ci * 8 + i, cj * 8 + j);
                ASSERT_EQ(lm.values.at(ci, cj), on / 64.0 >= 0.5 ? 1.0 : 0.0) << ci << "," << cj;
            }
    }
}

TEST(Blend, Examples) {
    const Tensor eps = randn({4, 8, 8}, 1), pred = randn({4, 8, 8}, 2);
    EXPECT_EQ(blend_target_noise(eps, pred, LatentMask::filled(8, 8, 1.0)), eps);
    EXPECT_EQ(blend_target_noise(eps, pred, LatentMask::filled(8, 8, 0.0)), pred);
    const LatentMask m = random_latent_mask(3);
    const Tensor out = blend_target_noise(eps, pred, m);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const double mv = m.values.at(i, j);
                ASSERT_NEAR(out.at(c, i, j), eps.at(c, i, j) * mv + pred.at(c, i, j) * (1 - mv), 1e-7);
            }
    EXPECT_THROW(blend_target_noise(eps, randn({4, 8, 4}, 2), m), LossError);
    EXPECT_THROW(blend_target_noise(eps, pred, LatentMask::filled(4, 4, 1.0)), LossError);
}

TEST(MaskedTerm, CollapsesAndDetachedIdentity) {
    const auto s = NoiseSchedule::linear();
    const LinearDenoiser model(5);
    const Tensor z = randn({4, 8, 8}, 6), eps = randn({4, 8, 8}, 7);
    const ad::Var c = ad::constant(randn({3, 32}, 8)), cm = ad::constant(randn({5, 32}, 9));
    EXPECT_EQ(masked_term(z, 20, eps, LatentMask::filled(8, 8, 0.0), cm, model, s).item(), 0.0);
    EXPECT_NEAR(masked_term(z, 20, eps, LatentMask::filled(8, 8, 1.0), c, model, s).item(), ldm_loss({z, 20, eps, c}, model, s).item(), 1e-12);

    for (std::uint64_t k = 0; k < 5; ++k) {
        const LatentMask m = random_latent_mask(10 + k);
        const Tensor mm = m.broadcast(4);
        Tensor zm = z;
        for (std::size_t i = 0; i < z.size(); ++i) zm[i] *= mm[i];
        const Tensor pred = model.predict(ad::constant(add_noise(zm, 20, eps, s)), 20, cm).value();
        double oracle = 0;
        for (std::size_t i = 0; i < z.size(); ++i) oracle += mm[i] * (eps[i] - pred[i]) * (eps[i] - pred[i]);
        oracle /= z.size();
        EXPECT_NEAR(masked_term(z, 20, eps, m, cm, model, s).item(), oracle, 1e-6);
    }
}

TEST(MaskedTerm, GradientIsLocalToTheMask) {
    const auto s = NoiseSchedule::linear();
    LinearDenoiser model(12);
    const Tensor z = randn({4, 8, 8}, 13), eps = randn({4, 8, 8}, 14);
    const ad::Var cm = ad::constant(randn({5, 32}, 15));
    const LatentMask m = random_latent_mask(16);
    const Tensor mm = m.broadcast(4);
    model.w.zero_grad();
    model.b.zero_grad();
    ad::backward(masked_term(z, 30, eps, m, cm, model, s));
    const Tensor gw_masked = model.w.grad, gb_masked = model.b.grad;
    int inside_nonzero = 0;
    for (std::size_t i = 0; i < mm.size(); ++i) {
        if (mm[i] == 0.0) {
            ASSERT_EQ(gw_masked[i], 0.0);
            ASSERT_EQ(gb_masked[i], 0.0);
        } else {
            inside_nonzero += gb_masked[i] != 0.0;
        }
    }
    EXPECT_GT(inside_nonzero, 0);

    // the full-mask gradient restricted to the mask equals the masked gradient up to the z~ change in w
    model.w.zero_grad();
    model.b.zero_grad();
    ad::backward(masked_term(z, 30, eps, LatentMask::filled(8, 8, 1.0), cm, model, s));
    for (std::size_t i = 0; i < mm.size(); ++i)
        if (mm[i] == 1.0) ASSERT_NEAR(model.b.grad[i], gb_masked[i], 1e-12);
}

TEST(ObjectLosses, SingleEqualsMultiWithOneObject) {
    const auto s = NoiseSchedule::linear();
    const LinearDenoiser model(20);
    const Tensor z = randn({4, 8, 8}, 21), eps = randn({4, 8, 8}, 22);
    const ad::Var c = ad::constant(randn({4, 32}, 23));
    const ObjectTerm o{"[a*]", random_latent_mask(24), ad::constant(randn({5, 32}, 25))};
    const ObjectLoss single = single_object_loss(z, 40, eps, o, c, model, s);
    const ObjectLoss multi = multi_object_loss(z, 40, eps, {o}, {0}, 1, c, model, s);
    EXPECT_EQ(single.total.item(), multi.total.item());
    EXPECT_NEAR(single.total.item(), single.masked[0].item() + single.global.item(), 1e-15);
    EXPECT_NEAR(single.global.item(), ldm_loss({z, 40, eps, c}, model, s).item(), 1e-15);
}

TEST(ObjectLosses, MultiObjectTermByTermOracle) {
    const auto s = NoiseSchedule::linear();
    const LinearDenoiser model(30);
    const Tensor z = randn({4, 8, 8}, 31), eps = randn({4, 8, 8}, 32);
    const ad::Var c = ad::constant(randn({6, 32}, 33));
    std::vector<ObjectTerm> objs;
    for (int i = 0; i < 3; ++i)
        objs.push_back({"[o" + std::to_string(i) + "]", random_latent_mask(40 + i), ad::constant(randn({5, 32}, 50 + i))});
    const ObjectLoss l = multi_object_loss(z, 60, eps, objs, {0, 2}, 2, c, model, s);
    const double oracle = masked_term(z, 60, eps, objs[0].mask, objs[0].cond, model, s).item() +
                          masked_term(z, 60, eps, objs[2].mask, objs[2].cond, model, s).item() + ldm_loss({z, 60, eps, c}, model, s).item();
    EXPECT_NEAR(l.total.item(), oracle, 1e-6);
    EXPECT_EQ(l.subset, (std::vector<int>{0, 2}));
    EXPECT_GE(l.total.item(), 0.0);

    std::vector<ObjectTerm> zeros = {objs[0], objs[1]};
    zeros[0].mask = LatentMask::filled(8, 8, 0.0);
    zeros[1].mask = LatentMask::filled(8, 8, 0.0);
    EXPECT_NEAR(multi_object_loss(z, 60, eps, zeros, {0, 1}, 2, c, model, s).total.item(), ldm_loss({z, 60, eps, c}, model, s).item(), 1e-15);
}

TEST(ObjectLosses, Errors) {
    const auto s = NoiseSchedule::linear();
    const LinearDenoiser model(1);
    const Tensor z = randn({4, 8, 8}, 2), eps = randn({4, 8, 8}, 3);
    const ad::Var c = ad::constant(randn({3, 32}, 4));
    const ObjectTerm a{"[a]", random_latent_mask(5), c}, b{"[b]", random_latent_mask(6), c}, dup{"[a]", random_latent_mask(7), c};
    EXPECT_THROW(multi_object_loss(z, 1, eps, {a, b}, {0}, 2, c, model, s), LossError);
    EXPECT_THROW(multi_object_loss(z, 1, eps, {a, dup}, {0, 1}, 2, c, model, s), LossError);
    EXPECT_THROW(multi_object_loss(z, 1, eps, {a, b}, {0, 0}, 2, c, model, s), LossError);
    EXPECT_THROW(multi_object_loss(z, 1, eps, {a, b}, {0, 5}, 2, c, model, s), LossError);
    EXPECT_THROW(masked_term(z, 1, randn({4, 8, 4}, 1), a.mask, c, model, s), LossError);
}

TEST(Combinations, EnumerationAndErrors) {
    EXPECT_EQ(CombinationSchedule(3, 2).subsets(), (std::vector<std::vector<int>>{{0, 1}, {0, 2}, {1, 2}}));
    EXPECT_EQ(CombinationSchedule(5, 3).subsets().size(), 10u);
    EXPECT_EQ(CombinationSchedule(4, 4).subsets().size(), 1u);
    EXPECT_THROW(CombinationSchedule(2, 3), LossError);
    EXPECT_THROW(CombinationSchedule(2, 0), LossError);
    CombinationSchedule two(2, 2);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) ASSERT_EQ(next_subset(two, rng), (std::vector<int>{0, 1}));
    EXPECT_EQ(parse_subset_strategy("roundrobin"), SubsetStrategy::RoundRobin);
    EXPECT_EQ(to_string(SubsetStrategy::Uniform), "uniform");
    EXPECT_THROW(parse_subset_strategy("random"), std::invalid_argument);
}

TEST(Combinations, UniformDrawCounts) {
    CombinationSchedule sched(4, 2);
    Rng rng(7, "subset");
    std::map<std::vector<int>, int> counts;
    for (int i = 0; i < 6000; ++i) ++counts[next_subset(sched, rng)];
    ASSERT_EQ(counts.size(), 6u);
    for (const auto& [sub, n] : counts) {
        EXPECT_GE(n, 850);
        EXPECT_LE(n, 1150);
    }
}

TEST(Combinations, CompletenessOverManyDraws) {
    for (int r = 1; r <= 5; ++r)
        for (int k = 1; k <= r; ++k) {
            CombinationSchedule sched(r, k);
            Rng rng(static_cast<std::uint64_t>(r * 10 + k), "subset");
            std::set<std::vector<int>> seen;
            for (std::size_t i = 0; i < sched.subsets().size() * 200; ++i) seen.insert(next_subset(sched, rng));
            EXPECT_EQ(seen.size(), sched.subsets().size()) << r << " choose " << k;
        }
}

TEST(Combinations, RoundRobinCyclesWithoutRng) {
    CombinationSchedule sched(3, 2, SubsetStrategy::RoundRobin);
    Rng rng(1), untouched(1);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(next_subset(sched, rng), sched.subsets()[static_cast<std::size_t>(i % 3)]);
    EXPECT_EQ(rng.next_u64(), untouched.next_u64());
    sched.set_cursor(2);
    EXPECT_EQ(next_subset(sched, rng), (std::vector<int>{1, 2}));
}

// ---- objects and optimizer

TEST(Objects, PromptTemplates) {
    EXPECT_EQ(object_prompt_for("[cup*]", "cup"), "a photo of [cup*] cup");
    EXPECT_EQ(class_prompt_for("cup"), "a photo of a cup");
    EXPECT_EQ(global_prompt({"[a]", "[b]", "[c]"}), "a photo of [a] and [b] and [c]");
    EXPECT_EQ(substitute_identifiers("a photo of [a] and [b]", {{"[a]", "cup"}, {"[b]", "dog"}}), "a photo of cup and dog");
    EXPECT_EQ(count_word("a [v] and [v]", "[v]"), 2);
    EXPECT_THROW(global_prompt({}), ObjectError);
}

TEST(Objects, Validation) {
    ObjectSpec o = square_object();
    EXPECT_NO_THROW(o.validate());
    ObjectSpec empty = o;
    empty.mask = Mask(64, 64, 0);
    EXPECT_THROW(empty.validate(), ObjectError);
    ObjectSpec full = o;
    full.mask = Mask(64, 64, 1);
    EXPECT_NO_THROW(full.validate());
    ObjectSpec badsize = o;
    badsize.mask = Mask(32, 32, 1);
    EXPECT_THROW(badsize.validate(), ObjectError);
    ObjectSpec twice = o;
    twice.object_prompt = "a [sq*] and [sq*]";
    EXPECT_THROW(twice.validate(), ObjectError);
    EXPECT_THROW(ObjectSpec::make(o.image, o.mask, "square", "sq").validate(), ObjectError);
    EXPECT_THROW(ObjectSpec::make(o.image, o.mask, "red square", "[sq*]").validate(), ObjectError);
}

TEST(Adam, FirstStepsMatchClosedForm) {
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt(cfg);
    Parameter p("p", Tensor({2}, std::vector<double>{1.0, -2.0}), true);
    double m = 0, v = 0, x = 1.0;
    for (int t = 1; t <= 3; ++t) {
        const double g = 2.0 * x;
        p.zero_grad();
        ad::backward(ad::sum(ad::square(ad::param(p))));
        ASSERT_NEAR(p.grad[0], g, 1e-15);
        opt.step({&p});
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.value[0], x, 1e-12);
        EXPECT_EQ(p.grad.max_abs(), 0.0);
    }
    EXPECT_EQ(opt.steps_taken(), 3);
    EXPECT_THROW(Adam(AdamConfig{0.0}), std::invalid_argument);
}

TEST(Adam, StateRoundTrip) {
    AdamConfig cfg;
    Adam a(cfg), b(cfg);
    Parameter p("p", randn({3}, 1), true), q("p", p.value, true);
    for (int i = 0; i < 2; ++i) {
        ad::backward(ad::sum(ad::square(ad::param(p))));
        a.step({&p});
    }
    TensorArchive ar;
    a.save_state(ar);
    b.load_state(ar);
    q.value = p.value;
    ad::backward(ad::sum(ad::square(ad::param(p))));
    ad::backward(ad::sum(ad::square(ad::param(q))));
    a.step({&p});
    b.step({&q});
    EXPECT_EQ(p.value, q.value);
}
