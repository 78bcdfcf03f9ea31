#pragma once

// Partial convolution: a convolution that only sees valid (mask = 1) inputs,
// renormalized by the fraction of the window that is valid, followed by the
// mask update that marks an output valid iff its window saw any valid input.
//
// Padding is treated as hole: padded taps contribute mask 0 but still count
// toward the window size in the renormalization factor.

#include <cstdint>
#include <string>
#include <vector>

#include "pconv/core/ops.hpp"
#include "pconv/core/tensor.hpp"

namespace pconv {

template <std::floating_point T>
void require_binary(const Tensor4<T>& mask, const char* what)
{
    for (T v : mask.values()) {
        if (v != T(0) && v != T(1)) {
            throw ContractError(std::string(what) + ": mask is not binary (found " + std::to_string(v) + ")");
        }
    }
}

/// Features paired with a same-shape binary validity mask (1 = valid, 0 = hole).
template <std::floating_point T>
struct MaskedTensor {
    Tensor4<T> features;
    Tensor4<T> mask;

    void validate(const char* what = "masked tensor") const
    {
        require_same_shape(features.shape(), mask.shape(), what);
        require_binary(mask, what);
    }
};

/// How sum(M) in the renormalization factor is taken.
enum class MaskNormalization {
    across_channels, ///< one factor per location over the full c_in x kh x kw window
    per_channel,     ///< one factor per input channel slice (experimental)
};

template <std::floating_point T>
struct PartialConvLayer {
    ConvParams<T> params;
    MaskNormalization normalization = MaskNormalization::across_channels;
};

namespace detail {

    /// Per-location count of valid taps in each (c_in x kh x kw) window,
    /// computed with integer arithmetic on a summed-area table. When
    /// `channel` is set only that input channel is counted.
    template <std::floating_point T>
    std::vector<std::uint32_t> window_valid_counts(const Tensor4<T>& mask, std::size_t kh, std::size_t kw,
                                                   std::size_t stride, std::size_t pad, std::size_t out_h,
                                                   std::size_t out_w, std::ptrdiff_t channel = -1)
    {
        const Shape s = mask.shape();
        std::vector<std::uint32_t> counts(s.n * out_h * out_w, 0);
        std::vector<std::uint32_t> sat((s.h + 1) * (s.w + 1));
        const std::size_t sw = s.w + 1;
        for (std::size_t n = 0; n < s.n; ++n) {
            std::fill(sat.begin(), sat.end(), 0U);
            for (std::size_t y = 0; y < s.h; ++y) {
                std::uint32_t row = 0;
                for (std::size_t x = 0; x < s.w; ++x) {
                    std::uint32_t v = 0;
                    if (channel >= 0) {
                        v = mask(n, static_cast<std::size_t>(channel), y, x) != T(0) ? 1U : 0U;
                    } else {
                        for (std::size_t c = 0; c < s.c; ++c) {
                            v += mask(n, c, y, x) != T(0) ? 1U : 0U;
                        }
                    }
                    row += v;
                    sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row;
                }
            }
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
                const std::size_t ya = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
                const std::size_t yb = static_cast<std::size_t>(
                    std::clamp<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(kh), 0, static_cast<std::ptrdiff_t>(s.h)));
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const std::ptrdiff_t x0 =
                        static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
                    const std::size_t xa = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
                    const std::size_t xb = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                        x0 + static_cast<std::ptrdiff_t>(kw), 0, static_cast<std::ptrdiff_t>(s.w)));
                    std::uint32_t total = 0;
                    if (ya < yb && xa < xb) {
                        total = sat[yb * sw + xb] - sat[ya * sw + xb] - sat[yb * sw + xa] + sat[ya * sw + xa];
                    }
                    counts[(n * out_h + oy) * out_w + ox] = total;
                }
            }
        }
        return counts;
    }

    template <std::floating_point T>
    Tensor4<T> apply_mask(const Tensor4<T>& features, const Tensor4<T>& mask)
    {
        Tensor4<T> out(features.shape());
        for (std::size_t i = 0; i < features.size(); ++i) {
            out[i] = mask[i] != T(0) ? features[i] : T(0);
        }
        return out;
    }

    template <std::floating_point T>
    Tensor4<T> channel_slice(const Tensor4<T>& t, std::size_t c)
    {
        const Shape s = t.shape();
        Tensor4<T> out({s.n, 1, s.h, s.w});
        for (std::size_t n = 0; n < s.n; ++n) {
            std::copy_n(t.plane(n, c), s.plane(), out.plane(n, 0));
        }
        return out;
    }

    /// Kernel slice W[:, ci] as a (c_out, 1, kh, kw) tensor.
    template <std::floating_point T>
    Tensor4<T> kernel_slice(const Tensor4<T>& w, std::size_t ci)
    {
        const Shape s = w.shape();
        Tensor4<T> out({s.n, 1, s.h, s.w});
        for (std::size_t co = 0; co < s.n; ++co) {
            std::copy_n(w.plane(co, ci), s.plane(), out.plane(co, 0));
        }
        return out;
    }

    template <std::floating_point T>
    void check_layer_input(const MaskedTensor<T>& input, const PartialConvLayer<T>& layer, const char* what)
    {
        input.validate(what);
        layer.params.validate();
        if (input.features.shape().c != layer.params.c_in()) {
            throw DimensionError(std::string(what) + ": input has " + std::to_string(input.features.shape().c) +
                                 " channels, layer expects " + std::to_string(layer.params.c_in()));
        }
    }

} // namespace detail

/// Mask produced by a partial convolution with the given geometry: 1 where
/// the window holds at least one valid tap. Output has a single channel.
template <std::floating_point T>
Tensor4<T> updated_mask(const Tensor4<T>& mask, std::size_t kernel, std::size_t stride, std::size_t pad)
{
    const Shape s = mask.shape();
    const std::size_t oh = conv_out_extent(s.h, kernel, stride, pad);
    const std::size_t ow = conv_out_extent(s.w, kernel, stride, pad);
    const auto counts = detail::window_valid_counts(mask, kernel, kernel, stride, pad, oh, ow);
    Tensor4<T> out({s.n, 1, oh, ow});
    for (std::size_t i = 0; i < counts.size(); ++i) {
        out[i] = counts[i] > 0 ? T(1) : T(0);
    }
    return out;
}

template <std::floating_point T>
MaskedTensor<T> partial_conv_forward(const MaskedTensor<T>& input, const PartialConvLayer<T>& layer)
{
    detail::check_layer_input(input, layer, "partial_conv_forward");
    const ConvParams<T>& p = layer.params;
    const Shape out_shape =
        detail::conv_output_shape(input.features.shape(), p.c_out(), p.kh(), p.kw(), p.stride, p.padding);
    const std::size_t plane = out_shape.plane();
    const auto total = detail::window_valid_counts(input.mask, p.kh(), p.kw(), p.stride, p.padding, out_shape.h,
                                                   out_shape.w);
    const Tensor4<T> masked = detail::apply_mask(input.features, input.mask);

    MaskedTensor<T> out{Tensor4<T>(out_shape), Tensor4<T>(out_shape)};
    if (layer.normalization == MaskNormalization::across_channels) {
        detail::conv_accumulate(masked, p.weights, p.stride, p.padding, out.features);
        const T window = static_cast<T>(p.c_in() * p.kh() * p.kw());
        for (std::size_t n = 0; n < out_shape.n; ++n) {
            const std::uint32_t* cnt = total.data() + n * plane;
            for (std::size_t co = 0; co < out_shape.c; ++co) {
                T* o = out.features.plane(n, co);
                T* m = out.mask.plane(n, co);
                const T b = p.bias[co];
                for (std::size_t i = 0; i < plane; ++i) {
                    if (cnt[i] > 0) {
                        o[i] = o[i] * (window / static_cast<T>(cnt[i])) + b;
                        m[i] = T(1);
                    } else {
                        o[i] = T(0);
                        m[i] = T(0);
                    }
                }
            }
        }
        return out;
    }

    // Per-channel renormalization: each input channel's contribution is
    // scaled by kh*kw / sum(M_ci) over its own window slice.
    const T window = static_cast<T>(p.kh() * p.kw());
    Tensor4<T> part(out_shape);
    for (std::size_t ci = 0; ci < p.c_in(); ++ci) {
        const auto cnt_c = detail::window_valid_counts(input.mask, p.kh(), p.kw(), p.stride, p.padding, out_shape.h,
                                                       out_shape.w, static_cast<std::ptrdiff_t>(ci));
        detail::conv_accumulate(detail::channel_slice(masked, ci), detail::kernel_slice(p.weights, ci), p.stride,
                                p.padding, part);
        for (std::size_t n = 0; n < out_shape.n; ++n) {
            for (std::size_t co = 0; co < out_shape.c; ++co) {
                T* o = out.features.plane(n, co);
                const T* src = part.plane(n, co);
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::uint32_t k = cnt_c[n * plane + i];
                    if (k > 0) {
                        o[i] += src[i] * (window / static_cast<T>(k));
                    }
                }
            }
        }
    }
    for (std::size_t n = 0; n < out_shape.n; ++n) {
        for (std::size_t co = 0; co < out_shape.c; ++co) {
            T* o = out.features.plane(n, co);
            T* m = out.mask.plane(n, co);
            for (std::size_t i = 0; i < plane; ++i) {
                if (total[n * plane + i] > 0) {
                    o[i] = o[i] + p.bias[co];
                    m[i] = T(1);
                } else {
                    o[i] = T(0);
                    m[i] = T(0);
                }
            }
        }
    }
    return out;
}

/// Gradients of a partial convolution. The mask and the renormalization
/// factor are constants of the forward pass; no gradient flows to the mask
/// and feature gradients vanish exactly at hole positions.
template <std::floating_point T>
ConvGrads<T> partial_conv_backward(const MaskedTensor<T>& input, const PartialConvLayer<T>& layer,
                                   const Tensor4<T>& grad_out)
{
    detail::check_layer_input(input, layer, "partial_conv_backward");
    const ConvParams<T>& p = layer.params;
    const Shape in_shape = input.features.shape();
    const Shape out_shape = detail::conv_output_shape(in_shape, p.c_out(), p.kh(), p.kw(), p.stride, p.padding);
    require_same_shape(grad_out.shape(), out_shape, "partial_conv_backward grad_out");
    const std::size_t plane = out_shape.plane();
    const auto total =
        detail::window_valid_counts(input.mask, p.kh(), p.kw(), p.stride, p.padding, out_shape.h, out_shape.w);
    const Tensor4<T> masked = detail::apply_mask(input.features, input.mask);

    ConvGrads<T> g;
    g.bias.assign(p.c_out(), T(0));
    for (std::size_t n = 0; n < out_shape.n; ++n) {
        for (std::size_t co = 0; co < out_shape.c; ++co) {
            const T* go = grad_out.plane(n, co);
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                if (total[n * plane + i] > 0) {
                    acc += go[i];
                }
            }
            g.bias[co] += acc;
        }
    }

    if (layer.normalization == MaskNormalization::across_channels) {
        const T window = static_cast<T>(p.c_in() * p.kh() * p.kw());
        Tensor4<T> scaled_grad(out_shape);
        for (std::size_t n = 0; n < out_shape.n; ++n) {
            for (std::size_t co = 0; co < out_shape.c; ++co) {
                const T* go = grad_out.plane(n, co);
                T* sg = scaled_grad.plane(n, co);
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::uint32_t k = total[n * plane + i];
                    sg[i] = k > 0 ? go[i] * (window / static_cast<T>(k)) : T(0);
                }
            }
        }
        g.weights = detail::conv_backward_weights(masked, p.weights.shape(), p.stride, p.padding, scaled_grad);
        g.input = detail::conv_backward_input(in_shape, p.weights, p.stride, p.padding, scaled_grad);
    } else {
        const T window = static_cast<T>(p.kh() * p.kw());
        g.weights = Tensor4<T>(p.weights.shape());
        g.input = Tensor4<T>(in_shape);
        Tensor4<T> scaled_grad(out_shape);
        for (std::size_t ci = 0; ci < p.c_in(); ++ci) {
            const auto cnt_c = detail::window_valid_counts(input.mask, p.kh(), p.kw(), p.stride, p.padding,
                                                           out_shape.h, out_shape.w, static_cast<std::ptrdiff_t>(ci));
            for (std::size_t n = 0; n < out_shape.n; ++n) {
                for (std::size_t co = 0; co < out_shape.c; ++co) {
                    const T* go = grad_out.plane(n, co);
                    T* sg = scaled_grad.plane(n, co);
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::uint32_t k = cnt_c[n * plane + i];
                        sg[i] = (k > 0 && total[n * plane + i] > 0) ? go[i] * (window / static_cast<T>(k)) : T(0);
                    }
                }
            }
            const Shape slice_shape{in_shape.n, 1, in_shape.h, in_shape.w};
            const Tensor4<T> gw = detail::conv_backward_weights(detail::channel_slice(masked, ci),
                                                                {p.c_out(), 1, p.kh(), p.kw()}, p.stride, p.padding,
                                                                scaled_grad);
            const Tensor4<T> gi = detail::conv_backward_input(slice_shape, detail::kernel_slice(p.weights, ci),
                                                              p.stride, p.padding, scaled_grad);
            for (std::size_t co = 0; co < p.c_out(); ++co) {
                std::copy_n(gw.plane(co, 0), gw.shape().plane(), g.weights.plane(co, ci));
            }
            for (std::size_t n = 0; n < in_shape.n; ++n) {
                std::copy_n(gi.plane(n, 0), in_shape.plane(), g.input.plane(n, ci));
            }
        }
    }
    for (std::size_t i = 0; i < g.input.size(); ++i) {
        if (input.mask[i] == T(0)) {
            g.input[i] = T(0);
        }
    }
    return g;
}

/// Fraction of mask elements equal to 1.
template <std::floating_point T>
double mask_coverage(const Tensor4<T>& mask)
{
    require_binary(mask, "mask_coverage");
    if (mask.empty()) {
        return 0.0;
    }
    std::size_t ones = 0;
    for (T v : mask.values()) {
        ones += v == T(1) ? 1 : 0;
    }
    return static_cast<double>(ones) / static_cast<double>(mask.size());
}

} // namespace pconv
