// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/tensor.hpp"

namespace implant {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// H×W×C image, channel-interleaved, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    bool empty() const { return pixels.empty(); }
    double& at(int i, int j, int c) { return pixels[(static_cast<std::size_t>(i) * width + j) * channels + c]; }
    double at(int i, int j, int c) const { return pixels[(static_cast<std::size_t>(i) * width + j) * channels + c]; }

    /// Throws ImageError on empty images or values outside [0,1].
    void validate() const;

    friend bool operator==(const Image&, const Image&) = default;
};

/// H×W binary mask.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int i, int j) { return bits[static_cast<std::size_t>(i) * width + j]; }
    std::uint8_t at(int i, int j) const { return bits[static_cast<std::size_t>(i) * width + j]; }
    std::size_t count() const;
    double coverage() const { return bits.empty() ? 0.0 : static_cast<double>(count()) / bits.size(); }

    friend bool operator==(const Mask&, const Mask&) = default;
};

inline constexpr double kMaskFillValue = 0.0;
inline constexpr int kMaskThreshold = 127;

/// Pixels where mask == 0 become kMaskFillValue; others are unchanged.
Image apply_mask_to_image(const Image& image, const Mask& mask);

/// Area-average when shrinking, bilinear when growing.
Image resize(const Image& image, int height, int width);

/// [C,H,W] tensor view of an image, and back (values clamped to [0,1]).
Tensor image_to_chw(const Image& image);
Image chw_to_image(const Tensor& chw);

double mean_abs_error(const Image& a, const Image& b);

// 8-bit files: binary PPM/PGM (.ppm/.pgm/.pnm) or PNG (.png).
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);
/// Grayscale (or RGB, via luma) read, binarized at value > kMaskThreshold.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

}  // namespace implant
