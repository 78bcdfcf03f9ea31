#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "pconv/core/tensor.hpp"

namespace pconv {

/// Zero-mean normal samples with variance 2 / fan_in.
template <std::floating_point T>
Tensor4<T> he_init(Shape shape, std::size_t fan_in, std::uint64_t seed)
{
    if (fan_in == 0) {
        throw ArgumentError("he_init: fan_in must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor4<T> t(shape);
    for (auto& v : t.values()) {
        v = static_cast<T>(dist(rng));
    }
    return t;
}

} // namespace pconv
