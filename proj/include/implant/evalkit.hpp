// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Image alignment, text alignment and kernel inception distance.

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/encoders.hpp"

namespace implant {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Maps an image to a feature vector. Named so reports can state the backbone.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual Tensor features(const Image& image) const = 0;
};

class ImageEncoderFeatures : public FeatureExtractor {
public:
    explicit ImageEncoderFeatures(const ImageEncoder& encoder) : encoder_(encoder) {}
    std::string name() const override { return "toy-image-encoder"; }
    int dim() const override { return encoder_.dim(); }
    Tensor features(const Image& image) const override;

private:
    const ImageEncoder& encoder_;
};

/// [n, d] matrix of features, one row per image.
Tensor extract_features(const FeatureExtractor& fx, const std::vector<Image>& images);

/// Cosine similarity of two flattened vectors; throws MetricError on zero norm.
double cosine_similarity(const Tensor& a, const Tensor& b);

/// Mean cos(I(g), I(reference)) over the generated set.
double image_alignment(const std::vector<Image>& generated, const Image& reference, const ImageEncoder& encoder);

/// Mean cos(I(g_i), pooled T(p_i)). Prompts must tokenize against `vocab`.
double text_alignment(const std::vector<Image>& generated, const std::vector<std::string>& prompts, const Vocabulary& vocab,
                      const TextEncoder& text, const ImageEncoder& image);

enum class KidEstimator {
    /// Within-set sums over i != j, cross term over all n*m pairs.
    Unbiased,
    /// U-statistic over paired samples (needs n == m): the cross term also skips i == j.
    Paired,
    /// V-statistic: every sum includes its diagonal.
    Biased,
};

struct KidOptions {
    KidEstimator estimator = KidEstimator::Unbiased;
    /// 0 uses the full sets once; otherwise average over `subsets` random draws of this size.
    int subset_size = 0;
    int subsets = 100;
    std::uint64_t seed = 0;
};

/// (x.y / d + 1)^3
double polynomial_kernel(const double* x, const double* y, int d);

/// MMD^2 between the rows of features_a [n, d] and features_b [m, d].
double kid(const Tensor& features_a, const Tensor& features_b, const KidOptions& opts = {});

struct MetricReport {
    double ia = 0.0;
    double ta = 0.0;
    double kid = 0.0;
    int n_images = 0;
    int n_prompts = 0;
    std::string feature_extractor;

    std::string to_json() const;
    static std::string csv_header() { return "IA,TA,KID"; }
    std::string csv_row() const;
};

}  // namespace implant
