// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "implant/diffusion.hpp"
#include "implant/model.hpp"
#include "test_util.hpp"

using namespace implant;
using implant::testing::relative_error;
using implant::testing::tiny_backend;

namespace {

Tensor randn(Shape s, std::uint64_t seed) { return Rng(seed, "test.diffusion").normal_tensor(std::move(s)); }

Tensor affine(Tensor x, double a, double b) {
    for (auto& v : x.storage()) v = a * v + b;
    return x;
}

// Returns eps + offset, or a fixed random tensor, regardless of z_t.
class StubDenoiser : public Denoiser {
public:
    explicit StubDenoiser(Tensor out) : out_(std::move(out)) {}
    ad::Var predict(const ad::Var&, int, const ad::Var&) const override { return ad::constant(out_); }

private:
    Tensor out_;
};

// Prediction depends on cond only through its mean, linearly.
class CondStub : public Denoiser {
public:
    ad::Var predict(const ad::Var& z_t, int t, const ad::Var& cond) const override {
        const double c = ad::mean_rows(cond).value().sum();
        return ad::constant(affine(z_t.value(), 0.1 + 0.001 * t, c));
    }
};

}  // namespace

TEST(Schedule, DefaultsAreMonotoneAndValid) {
    for (const auto& s : {NoiseSchedule::linear(), tiny_backend().schedule()}) {
        EXPECT_GE(s.alpha_bar(0), 0.99);
        for (int t = 0; t < s.steps(); ++t) {
            ASSERT_GT(s.beta(t), 0.0);
            ASSERT_LT(s.beta(t), 1.0);
            if (t > 0) ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        }
    }
    const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 0; t < 100; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 99.0);
    EXPECT_NEAR(s.alpha_bar(99), prod, 1e-12);
}

TEST(Schedule, RejectsInvalidBetasAndTimesteps) {
    EXPECT_THROW(NoiseSchedule({}), DiffusionError);
    EXPECT_THROW(NoiseSchedule({0.1, 1.0}), DiffusionError);
    EXPECT_THROW(NoiseSchedule({0.0}), DiffusionError);
    EXPECT_THROW(NoiseSchedule::linear(0), DiffusionError);
    EXPECT_THROW(NoiseSchedule::linear(10).alpha_bar(10), DiffusionError);
    EXPECT_THROW(NoiseSchedule::linear(10).alpha_bar(-1), DiffusionError);
}

TEST(AddNoise, ForcedExtremesAndScalarOracle) {
    const Tensor z = randn({4, 8, 8}, 1), eps = randn({4, 8, 8}, 2);
    EXPECT_EQ(add_noise(z, eps, 1.0), z);
    EXPECT_EQ(add_noise(z, eps, 0.0), eps);
    const auto s = NoiseSchedule::linear();
    const Tensor zt = add_noise(z, 37, eps, s);
    const double ab = s.alpha_bar(37);
    for (std::size_t i = 0; i < z.size(); ++i) ASSERT_NEAR(zt[i], std::sqrt(ab) * z[i] + std::sqrt(1 - ab) * eps[i], 1e-7);
    EXPECT_THROW(add_noise(z, 100, eps, s), DiffusionError);
    EXPECT_THROW(add_noise(z, randn({4, 8}, 3), 0.5), DiffusionError);
}

TEST(AddNoise, VarianceMatchesScheduleOverManyDraws) {
    const auto s = NoiseSchedule::linear();
    const Tensor z = randn({64}, 4);
    double zm = 0, zv = 0;
    for (double x : z.storage()) zm += x;
    zm /= z.size();
    for (double x : z.storage()) zv += (x - zm) * (x - zm);
    zv /= z.size();
    Rng rng(5, "test.noise");
    for (int t : {10, 50, 90}) {
        const double ab = s.alpha_bar(t);
        // pooled variance of z_t around its per-coordinate-invariant grand mean
        double sum = 0, sq = 0;
        const int draws = 10000;
        for (int k = 0; k < draws; ++k) {
            const Tensor zt = add_noise(z, t, rng.normal_tensor(z.shape()), s);
            for (double x : zt.storage()) {
                sum += x;
                sq += x * x;
            }
        }
        const double n = static_cast<double>(draws) * z.size();
        const double var = sq / n - (sum / n) * (sum / n);
        const double expect = ab * zv + (1 - ab);
        EXPECT_NEAR(var / expect, 1.0, 0.05) << "t=" << t;
    }
}

TEST(LdmLoss, StubOracles) {
    const auto s = NoiseSchedule::linear();
    const Tensor z = randn({4, 8, 8}, 6), eps = randn({4, 8, 8}, 7);
    const ad::Var cond = ad::constant(randn({3, 32}, 8));
    EXPECT_NEAR(ldm_loss({z, 12, eps, cond}, StubDenoiser(eps), s).item(), 0.0, 1e-15);
    EXPECT_NEAR(ldm_loss({z, 12, eps, cond}, StubDenoiser(affine(eps, 1.0, 1.0)), s).item(), 1.0, 1e-12);
    const Tensor r = randn({4, 8, 8}, 9);
    double mse = 0;
    for (std::size_t i = 0; i < r.size(); ++i) mse += (eps[i] - r[i]) * (eps[i] - r[i]);
    mse /= r.size();
    const double l = ldm_loss({z, 12, eps, cond}, StubDenoiser(r), s).item();
    EXPECT_NEAR(l, mse, 1e-7);
    EXPECT_GE(l, 0.0);
    EXPECT_THROW(ldm_loss({z, 12, eps, cond}, StubDenoiser(randn({4, 4, 4}, 1)), s), DiffusionError);
}

TEST(Denoiser, ConditioningIsWiredAndBatchEquivariant) {
    const auto& b = tiny_backend();
    const auto& u = b.unet();
    const Tensor z = randn({4, 8, 8}, 10);
    const ad::Var c1 = b.text().encode(tokenize("a photo of a red circle", b.vocab())).sequence;
    const ad::Var c2 = b.text().encode(tokenize("a photo of a blue star", b.vocab())).sequence;
    const Tensor p1 = u.predict(ad::constant(z), 30, c1).value();
    EXPECT_GT(max_abs_diff(p1, u.predict(ad::constant(z), 30, c2).value()), 0.0);
    EXPECT_TRUE(p1.all_finite());

    std::vector<LatentBatch> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({randn({4, 8, 8}, 20 + i), 10 * i + 5, randn({4, 8, 8}, 30 + i), i % 2 ? c1 : c2});
    const auto out = denoise_batch(u, b.schedule(), batch);
    std::vector<LatentBatch> perm = {batch[2], batch[0], batch[1]};
    const auto pout = denoise_batch(u, b.schedule(), perm);
    EXPECT_EQ(pout[0], out[2]);
    EXPECT_EQ(pout[1], out[0]);
    EXPECT_EQ(pout[2], out[1]);
}

TEST(Denoiser, InputValidation) {
    const auto& u = tiny_backend().unet();
    const ad::Var cond = ad::constant(randn({3, 32}, 1));
    EXPECT_THROW(u.predict(ad::constant(randn({4, 8, 8}, 1)), 100, cond), DiffusionError);
    EXPECT_THROW(u.predict(ad::constant(randn({3, 8, 8}, 1)), 5, cond), DiffusionError);
    EXPECT_THROW(u.predict(ad::constant(randn({4, 8, 8}, 1)), 5, ad::constant(randn({3, 16}, 1))), DiffusionError);
}

TEST(Denoiser, LoraBGradientMatchesFiniteDifferences) {
    ImplantModel m(tiny_backend());
    m.add_identifier("[v*]", affine(randn({1, 32}, 2), 0.2, 0.0));
    m.attach_adapters(LoraConfig{}, 3);
    Rng rng(4, "test.b");
    for (auto* a : m.adapters()) a->B.value = rng.normal_tensor(a->B.value.shape(), 0.05);
    const LatentBatch proto{randn({4, 8, 8}, 11), 25, randn({4, 8, 8}, 12), ad::Var()};
    auto loss = [&] {
        LatentBatch b = proto;
        b.cond = m.encode_prompt("a photo of [v*]").sequence;
        return ldm_loss(b, m, m.backend().schedule());
    };
    for (auto& p : m.trainable_parameters()) p.param->zero_grad();
    ad::backward(loss());
    Rng pick(5, "test.pick");
    for (auto* a : m.adapters()) {
        const auto i = static_cast<std::size_t>(pick.below(a->B.value.size()));
        const double num = implant::testing::central_difference([&] { return loss().item(); }, a->B.value[i], 1e-5);
        EXPECT_LT(relative_error(a->B.grad[i], num, 1e-8), 1e-3) << a->target_name;
    }
}

TEST(Codec, DeterministicShapeContract) {
    const auto& c = tiny_backend().codec();
    const Image img = implant::testing::two_object_scene(1).image;
    const Tensor z = c.encode(img);
    EXPECT_EQ(z.shape(), (Shape{4, 8, 8}));
    EXPECT_EQ(c.latent_shape(), (Shape{4, 8, 8}));
    EXPECT_EQ(z, c.encode(img));
    const Image d = c.decode(z);
    EXPECT_EQ(d.height, 64);
    EXPECT_NO_THROW(d.validate());
    Tensor bad = z;
    bad[0] = std::nan("");
    EXPECT_THROW(c.decode(bad), std::exception);
}

TEST(Sampler, TimestepsAndDeterminism) {
    const auto ts = ddim_timesteps(100, 10);
    ASSERT_EQ(ts.size(), 10u);
    EXPECT_EQ(ts.front(), 99);
    EXPECT_EQ(ts.back(), 0);
    for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
    EXPECT_THROW(ddim_timesteps(100, 0), DiffusionError);
    EXPECT_THROW(ddim_timesteps(100, 101), DiffusionError);

    const auto& b = tiny_backend();
    const Tensor cond = b.text().encode(tokenize("a photo of a red circle", b.vocab())).sequence.value();
    SamplerConfig sc{8, 1.0, 42};
    const Tensor a1 = ddim_sample(b.unet(), b.schedule(), cond, std::nullopt, {4, 8, 8}, sc);
    EXPECT_EQ(a1, ddim_sample(b.unet(), b.schedule(), cond, std::nullopt, {4, 8, 8}, sc));
    sc.seed = 43;
    EXPECT_NE(a1, ddim_sample(b.unet(), b.schedule(), cond, std::nullopt, {4, 8, 8}, sc));
}

TEST(Sampler, GuidanceIdentity) {
    const auto s = NoiseSchedule::linear();
    const CondStub stub;
    const Tensor cond = randn({2, 32}, 1);
    const SamplerConfig one{10, 1.0, 7};
    const Tensor plain = ddim_sample(stub, s, cond, std::nullopt, {4, 8, 8}, one);
    EXPECT_EQ(ddim_sample(stub, s, cond, cond, {4, 8, 8}, one), plain);
    const SamplerConfig three{10, 3.0, 7};
    EXPECT_LT(max_abs_diff(ddim_sample(stub, s, cond, cond, {4, 8, 8}, three), plain), 1e-12);
    EXPECT_THROW(ddim_sample(stub, s, cond, std::nullopt, {4, 8, 8}, three), DiffusionError);
}

TEST(Sampler, ModelGenerateIsBitwiseStable) {
    ImplantModel m(tiny_backend());
    const SamplerConfig sc{5, 1.0, 3};
    EXPECT_EQ(m.generate("a photo of a red circle", sc), m.generate("a photo of a red circle", sc));
}
