// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "implant/tensor.hpp"

namespace implant {

/// Deterministic 64-bit seed derivation from (base seed, purpose, index).
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0);

/// Portable random stream. Conversions to floating point are defined here
/// rather than through <random> distributions so results do not depend on
/// the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0)
        : engine_(derive_seed(base, purpose, index)) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

private:
    std::mt19937_64 engine_;
};

}  // namespace implant
