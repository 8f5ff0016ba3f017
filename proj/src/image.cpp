// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace implant {

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

struct RawImage {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> bytes;
};

void skip_pnm_space(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

RawImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image file: " + path.string());
    std::string magic;
    in >> magic;
    RawImage raw;
    if (magic == "P6") raw.channels = 3;
    else if (magic == "P5") raw.channels = 1;
    else throw ImageError("unsupported PNM magic '" + magic + "' in " + path.string());
    int maxval = 0;
    skip_pnm_space(in);
    in >> raw.width;
    skip_pnm_space(in);
    in >> raw.height;
    skip_pnm_space(in);
    in >> maxval;
    in.get();
    if (!in || raw.width <= 0 || raw.height <= 0 || maxval != 255)
        throw ImageError("malformed or non-8-bit PNM header in " + path.string());
    raw.bytes.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
    in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.bytes.size())) throw ImageError("truncated PNM data in " + path.string());
    return raw;
}

void write_pnm(const RawImage& raw, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write image file: " + path.string());
    out << (raw.channels == 3 ? "P6" : "P5") << "\n" << raw.width << " " << raw.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
    if (!out) throw ImageError("failed writing " + path.string());
}

RawImage read_png(const std::filesystem::path& path, int want_channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw ImageError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = want_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    RawImage raw;
    raw.width = static_cast<int>(img.width);
    raw.height = static_cast<int>(img.height);
    raw.channels = want_channels;
    raw.bytes.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, raw.bytes.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw ImageError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return raw;
}

void write_png(const RawImage& raw, const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(raw.width);
    img.height = static_cast<png_uint_32>(raw.height);
    img.format = raw.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, raw.bytes.data(), 0, nullptr))
        throw ImageError("cannot write PNG " + path.string() + ": " + img.message);
}

RawImage read_raw(const std::filesystem::path& path, int want_channels) {
    if (!std::filesystem::exists(path)) throw ImageError("file not found: " + path.string());
    const std::string ext = lower_ext(path);
    if (ext == ".png") return read_png(path, want_channels);
    RawImage raw = read_pnm(path);
    if (raw.channels == want_channels) return raw;
    RawImage conv;
    conv.width = raw.width;
    conv.height = raw.height;
    conv.channels = want_channels;
    const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height;
    conv.bytes.resize(n * want_channels);
    for (std::size_t i = 0; i < n; ++i) {
        if (want_channels == 3) {
            for (int c = 0; c < 3; ++c) conv.bytes[i * 3 + c] = raw.bytes[i];
        } else {
            const double y = 0.299 * raw.bytes[i * 3] + 0.587 * raw.bytes[i * 3 + 1] + 0.114 * raw.bytes[i * 3 + 2];
            conv.bytes[i] = static_cast<std::uint8_t>(std::lround(y));
        }
    }
    return conv;
}

void write_raw(const RawImage& raw, const std::filesystem::path& path) {
    if (lower_ext(path) == ".png") write_png(raw, path);
    else write_pnm(raw, path);
}

}  // namespace

void Image::validate() const {
    if (empty() || height <= 0 || width <= 0) throw ImageError("empty image");
    if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
        throw ImageError("image buffer does not match its dimensions");
    for (double v : pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw ImageError("image value out of range [0,1]: " + std::to_string(v));
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Image apply_mask_to_image(const Image& image, const Mask& mask) {
    if (image.height != mask.height || image.width != mask.width) {
        throw ImageError("mask shape " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    Image out = image;
    for (int i = 0; i < image.height; ++i)
        for (int j = 0; j < image.width; ++j)
            if (!mask.at(i, j))
                for (int c = 0; c < image.channels; ++c) out.at(i, j, c) = kMaskFillValue;
    return out;
}

Image resize(const Image& image, int height, int width) {
    if (image.empty()) throw ImageError("cannot resize an empty image");
    if (image.height == height && image.width == width) return image;
    Image out(height, width, image.channels);
    if (image.height >= height && image.width >= width) {
        // Area average: each output cell integrates the source over its footprint.
        const double sy = static_cast<double>(image.height) / height;
        const double sx = static_cast<double>(image.width) / width;
        for (int i = 0; i < height; ++i) {
            const double y0 = i * sy, y1 = (i + 1) * sy;
            for (int j = 0; j < width; ++j) {
                const double x0 = j * sx, x1 = (j + 1) * sx;
                for (int c = 0; c < image.channels; ++c) {
                    double acc = 0.0, area = 0.0;
                    for (int y = static_cast<int>(y0); y < std::min(image.height, static_cast<int>(std::ceil(y1))); ++y) {
                        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
                        for (int x = static_cast<int>(x0); x < std::min(image.width, static_cast<int>(std::ceil(x1))); ++x) {
                            const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
                            acc += wy * wx * image.at(y, x, c);
                            area += wy * wx;
                        }
                    }
                    out.at(i, j, c) = acc / area;
                }
            }
        }
        return out;
    }
    for (int i = 0; i < height; ++i) {
        const double fy = std::clamp((i + 0.5) * image.height / height - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double ay = fy - y0;
        for (int j = 0; j < width; ++j) {
            const double fx = std::clamp((j + 0.5) * image.width / width - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double ax = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(y0, x0, c) * (1 - ax) + image.at(y0, x1, c) * ax;
                const double bot = image.at(y1, x0, c) * (1 - ax) + image.at(y1, x1, c) * ax;
                out.at(i, j, c) = top * (1 - ay) + bot * ay;
            }
        }
    }
    return out;
}

Tensor image_to_chw(const Image& image) {
    Tensor t({image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c)
        for (int i = 0; i < image.height; ++i)
            for (int j = 0; j < image.width; ++j) t.at(c, i, j) = image.at(i, j, c);
    return t;
}

Image chw_to_image(const Tensor& chw) {
    if (chw.rank() != 3) throw ImageError("expected a [C,H,W] tensor, got " + shape_str(chw.shape()));
    Image img(chw.dim(1), chw.dim(2), chw.dim(0));
    for (int c = 0; c < img.channels; ++c)
        for (int i = 0; i < img.height; ++i)
            for (int j = 0; j < img.width; ++j) img.at(i, j, c) = std::clamp(chw.at(c, i, j), 0.0, 1.0);
    return img;
}

double mean_abs_error(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ImageError("mean_abs_error: image shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.pixels.size());
}

Image load_image(const std::filesystem::path& path) {
    RawImage raw = read_raw(path, 3);
    Image img(raw.height, raw.width, 3);
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.pixels[i] = raw.bytes[i] / 255.0;
    return img;
}

void save_image(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 3 && image.channels != 1) throw ImageError("only 1- or 3-channel images can be saved");
    RawImage raw{image.height, image.width, image.channels, {}};
    raw.bytes.reserve(image.pixels.size());
    for (double v : image.pixels) raw.bytes.push_back(to_byte(v));
    write_raw(raw, path);
}

Mask load_mask(const std::filesystem::path& path) {
    RawImage raw = read_raw(path, 1);
    Mask m(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) m.bits[i] = raw.bytes[i] > kMaskThreshold ? 1 : 0;
    return m;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
    RawImage raw{mask.height, mask.width, 1, {}};
    raw.bytes.reserve(mask.bits.size());
    for (auto b : mask.bits) raw.bytes.push_back(b ? 255 : 0);
    write_raw(raw, path);
}

}  // namespace implant
