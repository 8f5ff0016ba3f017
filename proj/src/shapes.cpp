// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/shapes.hpp"

#include <cmath>
#include <stdexcept>

namespace implant {

const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {"circle", "square", "triangle", "ring"};
    return names;
}

const std::string& shape_class_name(ShapeKind kind) { return shape_class_names().at(static_cast<std::size_t>(kind)); }

ShapeKind shape_kind_from_name(const std::string& name) {
    const auto& names = shape_class_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<ShapeKind>(i);
    throw std::invalid_argument("unknown shape class '" + name + "'");
}

const std::vector<NamedColor>& shape_palette() {
    static const std::vector<NamedColor> colors = {
        {"red", 0.86, 0.12, 0.12},   {"green", 0.15, 0.70, 0.20},  {"blue", 0.15, 0.25, 0.85},
        {"yellow", 0.95, 0.85, 0.10}, {"purple", 0.55, 0.20, 0.70}, {"orange", 0.95, 0.55, 0.10},
        {"cyan", 0.10, 0.80, 0.85},
    };
    return colors;
}

const std::vector<NamedColor>& background_palette() {
    static const std::vector<NamedColor> colors = {
        {"white", 0.95, 0.95, 0.95}, {"gray", 0.50, 0.50, 0.50}, {"black", 0.05, 0.05, 0.05}};
    return colors;
}

std::string scene_caption(const Scene& scene, CaptionStyle style) {
    std::string s = "a photo of";
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
        const auto& sh = scene.shapes[i];
        if (i > 0) s += " and";
        s += " a ";
        if (style != CaptionStyle::ClassOnly) s += shape_palette().at(static_cast<std::size_t>(sh.color)).name + " ";
        s += shape_class_name(sh.kind);
    }
    if (style != CaptionStyle::Full) return s;
    return s + " on a " + background_palette().at(static_cast<std::size_t>(scene.background)).name + " background";
}

namespace {

bool inside(const PlacedShape& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
    case ShapeKind::Circle:
        return dx * dx + dy * dy <= s.radius * s.radius;
    case ShapeKind::Square:
        return std::abs(dx) <= s.radius * 0.85 && std::abs(dy) <= s.radius * 0.85;
    case ShapeKind::Triangle: {
        // apex up, base at cy + 0.8r
        const double top = s.cy - s.radius, bottom = s.cy + 0.8 * s.radius;
        if (y < top || y > bottom) return false;
        const double half = s.radius * (y - top) / (bottom - top);
        return std::abs(dx) <= half;
    }
    case ShapeKind::Ring: {
        const double d2 = dx * dx + dy * dy;
        const double inner = s.radius * 0.55;
        return d2 <= s.radius * s.radius && d2 >= inner * inner;
    }
    }
    return false;
}

}  // namespace

RenderedScene render_scene(const Scene& scene, int size) {
    if (size < 8) throw std::invalid_argument("scene size must be >= 8");
    const auto& bg = background_palette().at(static_cast<std::size_t>(scene.background));
    RenderedScene out;
    out.image = Image(size, size, 3);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            out.image.at(i, j, 0) = bg.r;
            out.image.at(i, j, 1) = bg.g;
            out.image.at(i, j, 2) = bg.b;
        }
    for (const auto& sh : scene.shapes) {
        const auto& c = shape_palette().at(static_cast<std::size_t>(sh.color));
        Mask m(size, size);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                if (!inside(sh, (j + 0.5) / size, (i + 0.5) / size)) continue;
                m.at(i, j) = 1;
                out.image.at(i, j, 0) = c.r;
                out.image.at(i, j, 1) = c.g;
                out.image.at(i, j, 2) = c.b;
            }
        out.masks.push_back(std::move(m));
    }
    out.caption = scene_caption(scene);
    return out;
}

Scene random_scene(Rng& rng, int n_shapes) {
    if (n_shapes < 1 || n_shapes > 2) throw std::invalid_argument("random_scene supports 1 or 2 shapes");
    Scene s;
    s.background = static_cast<int>(rng.below(background_palette().size()));
    const auto n_kinds = shape_class_names().size();
    const auto n_colors = shape_palette().size();
    if (n_shapes == 1) {
        PlacedShape p;
        p.kind = static_cast<ShapeKind>(rng.below(n_kinds));
        p.color = static_cast<int>(rng.below(n_colors));
        p.cx = 0.5 + rng.uniform(-0.06, 0.06);
        p.cy = 0.5 + rng.uniform(-0.06, 0.06);
        p.radius = rng.uniform(0.24, 0.34);
        s.shapes.push_back(p);
        return s;
    }
    const auto k0 = rng.below(n_kinds);
    const auto k1 = (k0 + 1 + rng.below(n_kinds - 1)) % n_kinds;
    const auto c0 = rng.below(n_colors);
    const auto c1 = (c0 + 1 + rng.below(n_colors - 1)) % n_colors;
    for (int i = 0; i < 2; ++i) {
        PlacedShape p;
        p.kind = static_cast<ShapeKind>(i == 0 ? k0 : k1);
        p.color = static_cast<int>(i == 0 ? c0 : c1);
        p.cx = (i == 0 ? 0.27 : 0.73) + rng.uniform(-0.03, 0.03);
        p.cy = 0.5 + rng.uniform(-0.08, 0.08);
        p.radius = rng.uniform(0.17, 0.21);
        s.shapes.push_back(p);
    }
    return s;
}

}  // namespace implant
