// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit tests: finite differences, small fixtures.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "implant/autodiff.hpp"
#include "implant/backend.hpp"
#include "implant/object.hpp"
#include "implant/rng.hpp"
#include "implant/shapes.hpp"

namespace implant::testing {

/// Central difference of f at x[i] with step h; restores x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2.0 * h);
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Backend with small random weights and a short schedule; no pretraining.
inline BackendConfig tiny_backend_config() {
    BackendConfig c;
    c.seed = 7;
    return c;
}

inline const ToyBackend& tiny_backend() {
    static const ToyBackend b(tiny_backend_config());
    return b;
}

/// Two-object scene rendered at 64x64.
inline RenderedScene two_object_scene(std::uint64_t seed) {
    Rng rng(seed, "test.scene");
    return render_scene(random_scene(rng, 2), 64);
}

inline Scene fixed_scene() {
    Scene s;
    s.background = 1;  // gray
    s.shapes.push_back({ShapeKind::Square, 1, 0.27, 0.5, 0.19});  // green
    s.shapes.push_back({ShapeKind::Ring, 4, 0.73, 0.5, 0.19});    // purple
    return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const char* base = std::getenv("IMPLANT_TEST_TMP");
    auto dir = std::filesystem::path(base ? base : std::filesystem::temp_directory_path().string()) / ("implant-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace implant::testing
