#pragma once

#include <cmath>

#include "fetnet/rng.hpp"
#include "fetnet/tensor.hpp"

namespace fetnet {

/// He-style normal init: N(0, sqrt(2 / fan_in)).
inline Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
    return t;
}

/// Smaller-variance init for layers feeding a sigmoid head.
inline Tensor head_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
    return t;
}

} // namespace fetnet
