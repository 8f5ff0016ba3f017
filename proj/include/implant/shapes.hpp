// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Seeded generator of colored-shape scenes: image, one mask per shape and a caption.

#pragma once

#include <string>
#include <vector>

#include "implant/image.hpp"
#include "implant/rng.hpp"

namespace implant {

enum class ShapeKind { Circle, Square, Triangle, Ring };

const std::vector<std::string>& shape_class_names();
const std::string& shape_class_name(ShapeKind kind);
ShapeKind shape_kind_from_name(const std::string& name);

struct NamedColor {
    std::string name;
    double r, g, b;
};

/// Foreground colors.
const std::vector<NamedColor>& shape_palette();
/// Background colors, disjoint from the foreground palette.
const std::vector<NamedColor>& background_palette();

struct PlacedShape {
    ShapeKind kind = ShapeKind::Circle;
    int color = 0;
    // Center and size in units of the image side.
    double cx = 0.5, cy = 0.5, radius = 0.25;
};

struct Scene {
    int background = 0;
    std::vector<PlacedShape> shapes;
};

struct RenderedScene {
    Image image;
    std::vector<Mask> masks;  // one per shape, in scene order
    std::string caption;
};

enum class CaptionStyle { Full, NoBackground, ClassOnly };

/// Full: "a photo of a red circle and a blue square on a white background".
/// NoBackground drops the background clause, ClassOnly also drops the colors.
std::string scene_caption(const Scene& scene, CaptionStyle style = CaptionStyle::Full);
RenderedScene render_scene(const Scene& scene, int size);

/// One centered shape or two shapes side by side with distinct kinds.
Scene random_scene(Rng& rng, int n_shapes);

}  // namespace implant
