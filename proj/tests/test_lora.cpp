// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "implant/archive.hpp"
#include "implant/lora.hpp"
#include "implant/model.hpp"
#include "test_util.hpp"

using namespace implant;
using implant::testing::tiny_backend;

namespace {

LoraAdapter random_adapter(int d_in, int d_out, int rank, std::uint64_t seed, double scale = 1.0) {
    LoraConfig cfg;
    cfg.rank = rank;
    cfg.scale = scale;
    Rng rng(seed, "test.lora");
    LoraAdapter a = LoraAdapter::create("t", d_in, d_out, cfg, rng);
    a.B.value = rng.normal_tensor({d_out, rank});
    return a;
}

ImplantModel small_model(const LoraConfig& lc) {
    ImplantModel m(tiny_backend());
    m.add_identifier("[v*]", Rng(3, "test.rows").normal_tensor({2, m.vocab().embedding_dim()}, 0.2));
    m.attach_adapters(lc, 11);
    return m;
}

Tensor fixed_prediction(const ImplantModel& m) {
    const Tensor z = Rng(5, "test.z").normal_tensor({4, 8, 8});
    return m.predict(ad::constant(z), 40, m.encode_prompt("a photo of [v*]").sequence).value();
}

}  // namespace

TEST(Lora, ZeroInitAndZeroScaleGiveBaseOutputExactly) {
    Parameter w("w", Rng(1).normal_tensor({6, 5}), false);
    LoraConfig cfg;
    Rng rng(2);
    const LoraAdapter a = LoraAdapter::create("w", 5, 6, cfg, rng);
    EXPECT_EQ(a.delta().max_abs(), 0.0);
    EXPECT_EQ(a.B.value.max_abs(), 0.0);
    const Tensor x = Rng(3).normal_tensor({4, 5});
    const Tensor base = ad::matmul_nt(ad::constant(x), ad::constant(w.value)).value();
    EXPECT_EQ(wrap_projection(w, a).forward(ad::constant(x)).value(), base);

    LoraAdapter s0 = random_adapter(5, 6, 2, 4, 0.0);
    EXPECT_EQ(wrap_projection(w, s0).forward(ad::constant(x)).value(), base);
}

TEST(Lora, ForwardMatchesExplicitOracle) {
    Parameter w("w", Rng(1).normal_tensor({6, 5}), false);
    const Tensor w_before = w.value;
    const LoraAdapter a = random_adapter(5, 6, 3, 9, 0.5);
    const Tensor v = Rng(4).normal_tensor({5});
    const Tensor out = wrap_projection(w, a).apply(v);
    for (int o = 0; o < 6; ++o) {
        double expect = 0.0;
        for (int i = 0; i < 5; ++i) expect += w.value.at(o, i) * v[static_cast<std::size_t>(i)];
        for (int r = 0; r < 3; ++r) {
            double av = 0.0;
            for (int i = 0; i < 5; ++i) av += a.A.value.at(r, i) * v[static_cast<std::size_t>(i)];
            expect += 0.5 * a.B.value.at(o, r) * av;
        }
        EXPECT_NEAR(out[static_cast<std::size_t>(o)], expect, 1e-12);
    }
    EXPECT_EQ(w.value, w_before);
}

TEST(Lora, DimensionMismatchThrows) {
    Parameter w("w", Tensor({6, 5}), false);
    EXPECT_THROW(wrap_projection(w, random_adapter(4, 6, 2, 1)), std::invalid_argument);
    EXPECT_THROW(wrap_projection(w, random_adapter(5, 7, 2, 1)), std::invalid_argument);
}

TEST(Lora, DeltaRankBoundedBySvd) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const LoraAdapter a = random_adapter(8, 8, 2, s);
        const Tensor d = a.delta();
        Eigen::MatrixXd m(8, 8);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) m(i, j) = d.at(i, j);
        const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
        int rank = 0;
        for (int i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-8;
        EXPECT_LE(rank, 2);
        EXPECT_EQ(numerical_rank(d), rank);
        const auto ours = singular_values(d);
        for (int i = 0; i < 8; ++i) EXPECT_NEAR(ours[static_cast<std::size_t>(i)], sv(i), 1e-9);
    }
}

TEST(Lora, ParameterCountFromShapes) {
    LoraConfig cfg;
    cfg.rank = 4;
    Rng rng(1);
    LoraAdapter a1 = LoraAdapter::create("p1", 16, 16, cfg, rng);
    LoraAdapter a2 = LoraAdapter::create("p2", 16, 16, cfg, rng);
    PromptEmbedding e{"[v*]", Parameter("prompt_embedding/[v*]", Tensor({4, 16}), true)};
    const auto params = trainable_parameters({&a1, &a2}, {&e});
    EXPECT_EQ(parameter_count(params), 320u);
    ASSERT_EQ(params.size(), 5u);
    EXPECT_EQ(params[0].name, "lora/p1/A");
    EXPECT_EQ(params[4].name, "prompt_embedding/[v*]");
    EXPECT_EQ(parameter_count(trainable_parameters({}, {&e})), 64u);
}

TEST(Lora, ModelWithoutAdaptersExposesOnlyPromptRows) {
    ImplantModel m(tiny_backend());
    m.add_identifier("[v*]", Tensor({3, m.vocab().embedding_dim()}, 0.1));
    const auto params = m.trainable_parameters();
    ASSERT_EQ(params.size(), 1u);
    EXPECT_EQ(params[0].name, "prompt_embedding/[v*]");
}

TEST(Lora, ModelAdaptersTargetCrossAttentionOnly) {
    const ImplantModel m = small_model(LoraConfig{});
    const auto adapters = m.adapters();
    EXPECT_EQ(adapters.size(), 8u);
    for (const auto* a : adapters) {
        EXPECT_NE(a->target_name.find("attn"), std::string::npos) << a->target_name;
        EXPECT_EQ(a->rank, 4);
    }
    LoraConfig with_text;
    with_text.adapt_text_encoder = true;
    EXPECT_GT(small_model(with_text).adapters().size(), 8u);
}

TEST(Lora, IdentityAtInitOnFullModel) {
    ImplantModel plain(tiny_backend());
    plain.add_identifier("[v*]", Rng(3, "test.rows").normal_tensor({2, plain.vocab().embedding_dim()}, 0.2));
    LoraConfig with_text;
    with_text.adapt_text_encoder = true;
    const ImplantModel adapted = small_model(with_text);
    EXPECT_EQ(fixed_prediction(adapted), fixed_prediction(plain));
}

TEST(Lora, ParameterEconomyAtToyScale) {
    ImplantModel m = small_model(LoraConfig{});
    const double trainable = static_cast<double>(parameter_count(m.trainable_parameters()));
    EXPECT_LT(trainable / static_cast<double>(m.total_parameter_count()), 0.05);
}

TEST(Lora, ExportReloadReproducesForward) {
    ImplantModel m = small_model(LoraConfig{});
    Rng rng(6, "test.perturb");
    for (auto* a : m.adapters()) a->B.value = rng.normal_tensor(a->B.value.shape(), 0.05);
    const Tensor before = fixed_prediction(m);
    const auto dir = implant::testing::temp_dir("lora-export");
    merge_and_export(m, dir, true);
    const ImplantModel back = load_export(tiny_backend(), dir);
    EXPECT_LT(max_abs_diff(fixed_prediction(back), before), 1e-6);
    for (const auto* a : back.adapters()) EXPECT_LE(numerical_rank(a->delta()), 4);

    const TensorArchive ar = TensorArchive::load(dir / "adapters.safetensors");
    for (const auto& n : ar.names()) EXPECT_TRUE(n.rfind("lora/", 0) == 0 || n.rfind("prompt_embedding/", 0) == 0) << n;

    ImplantModel merged(ToyBackend::load(dir / "merged.safetensors", tiny_backend().config()));
    merged.add_identifier("[v*]", m.embedding("[v*]").rows.value);
    EXPECT_LT(max_abs_diff(fixed_prediction(merged), before), 1e-6);
}

TEST(Lora, MergedWithZeroDeltaEqualsBase) {
    const ImplantModel m = small_model(LoraConfig{});
    const auto dir = implant::testing::temp_dir("lora-merged-zero");
    merge_and_export(m, dir, true);
    const ToyBackend merged = ToyBackend::load(dir / "merged.safetensors", tiny_backend().config());
    EXPECT_EQ(merged.weights_hash(), tiny_backend().weights_hash());
}

TEST(Lora, ReloadRejectsShapeDrift) {
    ImplantModel m = small_model(LoraConfig{});
    const auto dir = implant::testing::temp_dir("lora-drift");
    merge_and_export(m, dir);
    TensorArchive ar = TensorArchive::load(dir / "adapters.safetensors");
    const std::string name = ar.names_with_prefix("lora/").front();
    ar.put(name, Tensor({4, 3}));
    ar.save(dir / "adapters.safetensors");
    EXPECT_THROW(load_export(tiny_backend(), dir), ExportError);
}
