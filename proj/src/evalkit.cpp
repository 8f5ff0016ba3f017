// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/evalkit.hpp"

#include <cmath>
#include <numeric>

#include "implant/rng.hpp"
#include "json.hpp"

namespace implant {

Tensor ImageEncoderFeatures::features(const Image& image) const { return encode_image(image, encoder_).vector; }

Tensor extract_features(const FeatureExtractor& fx, const std::vector<Image>& images) {
    if (images.empty()) throw MetricError("no images to featurize");
    const int d = fx.dim();
    Tensor out({static_cast<int>(images.size()), d});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor f = fx.features(images[i]);
        if (static_cast<int>(f.size()) != d) throw MetricError(fx.name() + " returned a feature of the wrong size");
        if (!f.all_finite()) throw MetricError(fx.name() + " returned non-finite features for image " + std::to_string(i));
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = f[static_cast<std::size_t>(j)];
    }
    return out;
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw MetricError("cosine of vectors with sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw MetricError("cosine of a zero vector");
    return dot / std::sqrt(na * nb);
}

double image_alignment(const std::vector<Image>& generated, const Image& reference, const ImageEncoder& encoder) {
    if (generated.empty()) throw MetricError("image alignment needs at least one image");
    const Tensor ref = encode_image(reference, encoder).vector;
    double s = 0.0;
    for (const auto& g : generated) s += cosine_similarity(encode_image(g, encoder).vector, ref);
    return s / static_cast<double>(generated.size());
}

double text_alignment(const std::vector<Image>& generated, const std::vector<std::string>& prompts, const Vocabulary& vocab,
                      const TextEncoder& text, const ImageEncoder& image) {
    if (generated.empty()) throw MetricError("text alignment needs at least one image");
    if (generated.size() != prompts.size())
        throw MetricError(std::to_string(generated.size()) + " images but " + std::to_string(prompts.size()) + " prompts");
    check_shared_space(text, image);
    double s = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const Tensor t = text.encode(tokenize(prompts[i], vocab)).pooled.value();
        s += cosine_similarity(encode_image(generated[i], image).vector, t);
    }
    return s / static_cast<double>(generated.size());
}

double polynomial_kernel(const double* x, const double* y, int d) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += x[i] * y[i];
    const double v = dot / d + 1.0;
    return v * v * v;
}

namespace {

double mmd2(const Tensor& A, const std::vector<int>& ia, const Tensor& B, const std::vector<int>& ib, KidEstimator est) {
    const int d = A.dim(1);
    const std::size_t n = ia.size(), m = ib.size();
    auto row_a = [&](std::size_t i) { return A.data() + static_cast<std::size_t>(ia[i]) * d; };
    auto row_b = [&](std::size_t j) { return B.data() + static_cast<std::size_t>(ib[j]) * d; };

    const bool diag = est == KidEstimator::Biased;
    auto within = [&](auto row, std::size_t cnt) {
        double s = 0.0;
        for (std::size_t i = 0; i < cnt; ++i)
            for (std::size_t j = 0; j < cnt; ++j)
                if (diag || i != j) s += polynomial_kernel(row(i), row(j), d);
        const double pairs = diag ? static_cast<double>(cnt * cnt) : static_cast<double>(cnt * (cnt - 1));
        return s / pairs;
    };
    double cross = 0.0;
    double cross_pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (est == KidEstimator::Paired && i == j) continue;
            cross += polynomial_kernel(row_a(i), row_b(j), d);
            cross_pairs += 1.0;
        }
    return within(row_a, n) + within(row_b, m) - 2.0 * cross / cross_pairs;
}

}  // namespace

double kid(const Tensor& a, const Tensor& b, const KidOptions& opts) {
    if (a.rank() != 2 || b.rank() != 2) throw MetricError("KID features must be [n, d] matrices");
    if (a.dim(1) != b.dim(1)) throw MetricError("KID feature dims differ: " + std::to_string(a.dim(1)) + " vs " + std::to_string(b.dim(1)));
    if (!a.all_finite() || !b.all_finite()) throw MetricError("KID features contain non-finite values");
    const int n = a.dim(0), m = b.dim(0);
    if (n < 2 || m < 2) throw MetricError("KID needs at least two samples per set");
    if (opts.estimator == KidEstimator::Paired && n != m) throw MetricError("paired KID needs equal set sizes");

    if (opts.subset_size == 0) {
        std::vector<int> ia(static_cast<std::size_t>(n)), ib(static_cast<std::size_t>(m));
        std::iota(ia.begin(), ia.end(), 0);
        std::iota(ib.begin(), ib.end(), 0);
        return mmd2(a, ia, b, ib, opts.estimator);
    }
    const int s = opts.subset_size;
    if (s < 2 || s > n || s > m) throw MetricError("KID subset size " + std::to_string(s) + " must be in [2, min(n, m)]");
    if (opts.subsets < 1) throw MetricError("KID needs at least one subset");
    auto draw = [](Rng& rng, int pool, int size) {
        std::vector<int> idx(static_cast<std::size_t>(pool));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < size; ++i) {
            const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(pool - i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        }
        idx.resize(static_cast<std::size_t>(size));
        return idx;
    };
    double total = 0.0;
    for (int k = 0; k < opts.subsets; ++k) {
        Rng rng(opts.seed, "kid.subset", static_cast<std::uint64_t>(k));
        const auto ia = draw(rng, n, s);
        const auto ib = draw(rng, m, s);
        total += mmd2(a, ia, b, ib, opts.estimator);
    }
    return total / opts.subsets;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["IA"] = ia;
    j["TA"] = ta;
    j["KID"] = kid;
    j["n_images"] = n_images;
    j["n_prompts"] = n_prompts;
    j["feature_extractor"] = feature_extractor;
    return j.dump(2);
}

std::string MetricReport::csv_row() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", ia, ta, kid);
    return buf;
}

}  // namespace implant
