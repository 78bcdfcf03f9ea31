#pragma once

// Super-resolution as inpainting: low-res pixels are spread onto a K-times
// larger grid and everything in between is a hole.

#include "pconv/network.hpp"

namespace pconv {

/// Position of low-res coordinate `i` on the K-times grid.
constexpr std::size_t sr_position(std::size_t i, std::size_t k) noexcept { return k * i + k / 2; }

/// (n, c, K*H, K*W) tensor holding low_res(y, x) at (Ky + K/2, Kx + K/2)
/// with mask 1 there; all other positions are 0 with mask 0.
template <std::floating_point T>
MaskedTensor<T> build_sr_input(const Tensor4<T>& low_res, std::size_t k)
{
    if (k == 0) {
        throw ArgumentError("super-resolution factor must be at least 1");
    }
    const Shape s = low_res.shape();
    const Shape big{s.n, s.c, s.h * k, s.w * k};
    MaskedTensor<T> out{Tensor4<T>(big), Tensor4<T>(big)};
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h; ++y) {
                for (std::size_t x = 0; x < s.w; ++x) {
                    out.features(n, c, sr_position(y, k), sr_position(x, k)) = low_res(n, c, y, x);
                    out.mask(n, c, sr_position(y, k), sr_position(x, k)) = T(1);
                }
            }
        }
    }
    return out;
}

/// Inverse of the placement: reads the valid positions back out.
template <std::floating_point T>
Tensor4<T> extract_sr_valid(const Tensor4<T>& high, std::size_t k)
{
    const Shape s = high.shape();
    if (k == 0 || s.h % k != 0 || s.w % k != 0) {
        throw DimensionError("extract_sr_valid: " + s.str() + " is not a multiple of " + std::to_string(k));
    }
    Tensor4<T> out({s.n, s.c, s.h / k, s.w / k});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h / k; ++y) {
                for (std::size_t x = 0; x < s.w / k; ++x) {
                    out(n, c, y, x) = high(n, c, sr_position(y, k), sr_position(x, k));
                }
            }
        }
    }
    return out;
}

/// Single-channel mask of the placement for an (h, w) low-res image.
template <std::floating_point T>
Tensor4<T> sr_mask(std::size_t n, std::size_t h, std::size_t w, std::size_t k)
{
    Tensor4<T> ones({n, 1, h, w}, T(1));
    return build_sr_input(ones, k).mask;
}

/// Runs the network on the constructed input. Output is unclamped.
template <std::floating_point T>
Tensor4<T> superres(const Network<T>& net, const Tensor4<T>& low_res, std::size_t k)
{
    const std::size_t div = net.config().required_divisor();
    const Shape s = low_res.shape();
    if ((s.h * k) % div != 0 || (s.w * k) % div != 0) {
        throw ConfigError("super-resolved size " + std::to_string(s.h * k) + "x" + std::to_string(s.w * k) +
                          " is not divisible by " + std::to_string(div) +
                          "; pad the low-res image so that K*H and K*W are multiples of it");
    }
    const MaskedTensor<T> in = build_sr_input(low_res, k);
    return net.infer(in.features, sr_mask<T>(s.n, s.h, s.w, k));
}

} // namespace pconv
