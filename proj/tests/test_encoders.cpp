// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "implant/encoders.hpp"
#include "implant/shapes.hpp"
#include "test_util.hpp"

using namespace implant;
using implant::testing::relative_error;
using implant::testing::tiny_backend;

namespace {

struct BoundPrompt {
    Vocabulary vocab;
    PromptEmbedding emb;
};

BoundPrompt with_identifier(const std::string& id, int n_tokens, std::uint64_t seed) {
    BoundPrompt out{tiny_backend().vocab(), {}};
    out.vocab.reserve_identifier(id, n_tokens);
    out.emb.identifier = id;
    out.emb.rows = Parameter("prompt_embedding/" + id, Rng(seed, "test.rows").normal_tensor({n_tokens, out.vocab.embedding_dim()}, 0.3), true);
    return out;
}

}  // namespace

TEST(Vocabulary, TokenizeReservedIdentifier) {
    Vocabulary v = tiny_backend().vocab();
    const auto ids = v.reserve_identifier("[v*]", 1);
    const auto toks = tokenize("a [v*] dog", v);
    EXPECT_EQ(std::count(toks.begin(), toks.end(), ids[0]), 1);
    EXPECT_EQ(toks.front(), v.index_of(Vocabulary::kBos));
    EXPECT_EQ(toks.back(), v.index_of(Vocabulary::kEos));
}

TEST(Vocabulary, EmptyPromptIsBosEos) {
    const auto toks = tokenize("", tiny_backend().vocab());
    ASSERT_EQ(toks.size(), 2u);
}

TEST(Vocabulary, MultiRowIdentifierExpandsToItsGroup) {
    Vocabulary v = tiny_backend().vocab();
    const auto ids = v.reserve_identifier("[cup*]", 4);
    const auto toks = tokenize("a photo of [cup*]", v);
    EXPECT_TRUE(std::search(toks.begin(), toks.end(), ids.begin(), ids.end()) != toks.end());
    EXPECT_EQ(v.identifier_ids("[cup*]").size(), 4u);
}

TEST(Vocabulary, UnknownIdentifierNamesToken) {
    try {
        tokenize("a photo of [ghost*]", tiny_backend().vocab());
        FAIL() << "expected UnknownIdentifierError";
    } catch (const UnknownIdentifierError& e) {
        EXPECT_NE(std::string(e.what()).find("[ghost*]"), std::string::npos);
    }
}

TEST(Vocabulary, ReserveErrors) {
    Vocabulary v = tiny_backend().vocab();
    v.reserve_identifier("[a]", 2);
    EXPECT_THROW(v.reserve_identifier("[a]", 2), EncoderError);
    EXPECT_THROW(v.reserve_identifier("plain", 1), EncoderError);
    EXPECT_THROW(v.reserve_identifier("[b]", 0), EncoderError);
}

TEST(Vocabulary, RoundTripOverPromptCorpus) {
    Vocabulary v = tiny_backend().vocab();
    v.reserve_identifier("[v*]", 2);
    v.reserve_identifier("[w*]", 1);
    const auto& words = shape_class_names();
    int n = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(s, "test.corpus");
        std::string p = s % 2 ? "photo of [v*]" : "a photo of [w*] and [v*]";
        const int extra = static_cast<int>(rng.below(3));
        for (int i = 0; i < extra; ++i) p += " " + words[rng.below(words.size())];
        EXPECT_EQ(detokenize(tokenize(p, v), v), p);
        ++n;
    }
    EXPECT_EQ(n, 50);
}

TEST(Vocabulary, SaveLoadRoundTrip) {
    const auto dir = implant::testing::temp_dir("vocab");
    Vocabulary v = tiny_backend().vocab();
    v.reserve_identifier("[v*]", 3);
    v.save(dir / "vocab.txt");
    const Vocabulary back = Vocabulary::load(dir / "vocab.txt", v.embedding_dim());
    EXPECT_EQ(back.tokens(), v.tokens());
    EXPECT_TRUE(back.has_identifier("[v*]"));
    EXPECT_EQ(back.base_size(), v.base_size());
}

TEST(TextEncoder, DeterministicAndShared) {
    const auto& b = tiny_backend();
    const auto idx = tokenize("a photo of a red circle", b.vocab());
    const TextEncoding a = b.text().encode(idx), c = b.text().encode(idx);
    EXPECT_EQ(a.pooled.value(), c.pooled.value());
    EXPECT_EQ(a.sequence.value(), c.sequence.value());
    EXPECT_EQ(a.pooled.size(), static_cast<std::size_t>(b.image().dim()));
    EXPECT_NO_THROW(check_shared_space(b.text(), b.image()));
}

TEST(TextEncoder, PooledIsMeanOfSequence) {
    const auto& b = tiny_backend();
    const TextEmbedding e = encode_text(tokenize("a photo of a blue ring", b.vocab()), EmbeddingTable(b.text().token_embedding()), b.text());
    const int n = e.sequence.dim(0), d = e.sequence.dim(1);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += e.sequence.at(i, j);
        EXPECT_NEAR(e.pooled[static_cast<std::size_t>(j)], s / n, 1e-12);
    }
}

TEST(TextEncoder, UnusedIdentifierRowHasNoEffectAndNoGradient) {
    auto bp = with_identifier("[v*]", 2, 1);
    bp.vocab.reserve_identifier("[w*]", 1);
    PromptEmbedding other{"[w*]", Parameter("prompt_embedding/[w*]", Tensor({1, bp.vocab.embedding_dim()}, 0.1), true)};
    EmbeddingTable table(tiny_backend().text().token_embedding());
    table.bind(bp.vocab, bp.emb);
    table.bind(bp.vocab, other);
    const auto idx = tokenize("a photo of [v*]", bp.vocab);
    const Tensor before = tiny_backend().text().encode(idx, table).pooled.value();
    other.rows.value.fill(5.0);
    EXPECT_EQ(tiny_backend().text().encode(idx, table).pooled.value(), before);

    bp.emb.rows.zero_grad();
    other.rows.zero_grad();
    ad::backward(ad::sum(tiny_backend().text().encode(idx, table).pooled));
    EXPECT_EQ(other.rows.grad.max_abs(), 0.0);
    EXPECT_GT(bp.emb.rows.grad.max_abs(), 0.0);
}

TEST(TextEncoder, PooledGradientMatchesFiniteDifferences) {
    auto bp = with_identifier("[v*]", 2, 2);
    EmbeddingTable table(tiny_backend().text().token_embedding());
    table.bind(bp.vocab, bp.emb);
    const auto idx = tokenize("a photo of [v*]", bp.vocab);
    const Tensor w = Rng(9, "test.w").normal_tensor({bp.vocab.embedding_dim()});
    auto f = [&] { return ad::sum(ad::mul_const(tiny_backend().text().encode(idx, table).pooled, w)).item(); };
    bp.emb.rows.zero_grad();
    ad::backward(ad::sum(ad::mul_const(tiny_backend().text().encode(idx, table).pooled, w)));
    Rng pick(3, "test.coords");
    for (int k = 0; k < 10; ++k) {
        const auto i = static_cast<std::size_t>(pick.below(bp.emb.rows.value.size()));
        const double num = implant::testing::central_difference(f, bp.emb.rows.value[i], 1e-3);
        EXPECT_LT(relative_error(bp.emb.rows.grad[i], num, 1e-6), 1e-4) << "coordinate " << i;
    }
}

TEST(TextEncoder, LengthLimitAndEmptyErrors) {
    const auto& b = tiny_backend();
    std::string longp;
    for (int i = 0; i < 40; ++i) longp += "red ";
    EXPECT_THROW(b.text().encode(tokenize(longp, b.vocab())), EncoderError);
    EXPECT_THROW(b.text().encode(std::vector<int>{}), EncoderError);
    EXPECT_THROW(b.text().encode(std::vector<int>{b.vocab().size() + 3}), std::out_of_range);
}

TEST(ImageEncoder, DeterministicFiniteAndContinuous) {
    const auto& b = tiny_backend();
    const RenderedScene rs = render_scene(implant::testing::fixed_scene(), 64);
    const Tensor e1 = encode_image(rs.image, b.image()).vector;
    EXPECT_EQ(e1, encode_image(rs.image, b.image()).vector);
    EXPECT_TRUE(encode_image(Image(64, 64, 3, 0.0), b.image()).vector.all_finite());

    Rng rng(5, "test.noise");
    Image noisy = rs.image;
    for (auto& v : noisy.pixels) v = std::clamp(v + rng.uniform(-1e-3, 1e-3), 0.0, 1.0);
    const Tensor e2 = encode_image(noisy, b.image()).vector;
    double dot = 0, n1 = 0, n2 = 0;
    for (std::size_t i = 0; i < e1.size(); ++i) {
        dot += e1[i] * e2[i];
        n1 += e1[i] * e1[i];
        n2 += e2[i] * e2[i];
    }
    EXPECT_GT(dot / std::sqrt(n1 * n2), 0.99);
}

TEST(ImageEncoder, ResizesOtherSizesAndRejectsBadInput) {
    const auto& b = tiny_backend();
    EXPECT_EQ(encode_image(Image(32, 48, 3, 0.3), b.image()).vector.size(), static_cast<std::size_t>(b.image().dim()));
    EXPECT_THROW(encode_image(Image(), b.image()), ImageError);
    EXPECT_THROW(encode_image(Image(64, 64, 3, 2.0), b.image()), ImageError);
    EXPECT_THROW(encode_image(Image(64, 64, 1, 0.5), b.image()), EncoderError);
}

TEST(Encoders, CosineLossGradientOverEncoderParameters) {
    // Scalar cosine loss between the image and text embeddings; check sampled
    // coordinates of every encoder parameter against central differences.
    BackendConfig cfg = implant::testing::tiny_backend_config();
    ToyBackend b(cfg);
    const RenderedScene rs = render_scene(implant::testing::fixed_scene(), 64);
    const auto idx = tokenize(rs.caption, b.vocab());
    auto loss = [&] { return ad::sub(ad::constant(Tensor::scalar(1.0)), ad::cosine(b.image().forward(rs.image), b.text().encode(idx).pooled)); };
    std::vector<Parameter*> params;
    b.text().visit([&](Parameter& p) { params.push_back(&p); });
    b.image().visit([&](Parameter& p) { params.push_back(&p); });
    for (auto* p : params) p->trainable = true;
    for (auto* p : params) p->zero_grad();
    ad::backward(loss());
    Rng pick(8, "test.coords");
    int checked = 0;
    for (auto* p : params) {
        if (p->value.size() == 0) continue;
        const auto i = static_cast<std::size_t>(pick.below(p->value.size()));
        const double analytic = p->grad[i];
        const double num = implant::testing::central_difference([&] { return loss().item(); }, p->value[i], 1e-5);
        if (std::abs(analytic) < 1e-9 && std::abs(num) < 1e-9) continue;
        EXPECT_LT(relative_error(analytic, num, 1e-7), 1e-4) << p->name << "[" << i << "]";
        ++checked;
    }
    EXPECT_GE(checked, 10);
}
