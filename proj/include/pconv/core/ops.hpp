#pragma once

// Forward and backward passes for the dense primitives the inpainting network
// and the feature extractor are built from. Every function is pure: inputs are
// never mutated, except BatchNormState running statistics in training mode.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pconv/core/tensor.hpp"

namespace pconv {

template <std::floating_point T>
struct ConvParams {
    Tensor4<T> weights; // (c_out, c_in, kh, kw)
    std::vector<T> bias; // c_out
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t c_out() const noexcept { return weights.shape().n; }
    std::size_t c_in() const noexcept { return weights.shape().c; }
    std::size_t kh() const noexcept { return weights.shape().h; }
    std::size_t kw() const noexcept { return weights.shape().w; }

    void validate() const
    {
        if (kh() % 2 == 0 || kw() % 2 == 0) {
            throw ArgumentError("convolution kernels must have odd extents, got " + weights.shape().str());
        }
        if (bias.size() != c_out()) {
            throw DimensionError("bias length " + std::to_string(bias.size()) + " does not match " +
                                 std::to_string(c_out()) + " output channels");
        }
        if (stride == 0) {
            throw ArgumentError("convolution stride must be positive");
        }
    }
};

template <std::floating_point T>
struct ConvGrads {
    Tensor4<T> input;
    Tensor4<T> weights;
    std::vector<T> bias;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad)
{
    if (in + 2 * pad < kernel) {
        throw DimensionError("padded extent " + std::to_string(in + 2 * pad) + " is smaller than kernel " +
                             std::to_string(kernel));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

    /// Half-open range of output columns whose tap at kernel offset `k` lands inside [0, in).
    struct TapRange {
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    inline TapRange tap_range(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad)
    {
        TapRange r;
        r.begin = k >= pad ? 0 : (pad - k + stride - 1) / stride;
        if (in - 1 + pad < k) {
            r.end = r.begin;
            return r;
        }
        r.end = std::min(out, (in - 1 + pad - k) / stride + 1);
        r.end = std::max(r.end, r.begin);
        return r;
    }

    inline Shape conv_output_shape(const Shape& in, std::size_t c_out, std::size_t kh, std::size_t kw,
                                   std::size_t stride, std::size_t pad)
    {
        return {in.n, c_out, conv_out_extent(in.h, kh, stride, pad), conv_out_extent(in.w, kw, stride, pad)};
    }

    // Float convolutions go through im2col and an Eigen GEMM, tiled over
    // output rows to bound the column buffer. Summation order then depends
    // on Eigen's blocking, which is fixed for a given build and shape, so
    // results stay reproducible. Double keeps the exact-order loops above.
    namespace gemm {

        using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using Strided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
        using ConstStrided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

        struct Geometry {
            Shape in;
            Shape out;
            std::size_t kh, kw, stride, pad;
            std::size_t k() const { return in.c * kh * kw; }
            /// Output rows per tile: keeps the column buffer near 2^20 floats.
            std::size_t tile_rows() const { return std::max<std::size_t>(1, (std::size_t{1} << 20) / (k() * out.w)); }
        };

        /// col[(ci, ky, kx), (oy - oy0, ox)] for output rows [oy0, oy1).
        inline void im2col(const float* in, const Geometry& g, std::size_t oy0, std::size_t oy1, float* col)
        {
            const std::size_t cols = (oy1 - oy0) * g.out.w;
            std::size_t r = 0;
            for (std::size_t ci = 0; ci < g.in.c; ++ci) {
                const float* plane = in + ci * g.in.plane();
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const TapRange rows = tap_range(g.in.h, g.out.h, ky, g.stride, g.pad);
                    for (std::size_t kx = 0; kx < g.kw; ++kx, ++r) {
                        const TapRange xs = tap_range(g.in.w, g.out.w, kx, g.stride, g.pad);
                        float* dst = col + r * cols;
                        std::fill_n(dst, cols, 0.0f);
                        for (std::size_t oy = std::max(oy0, rows.begin); oy < std::min(oy1, rows.end); ++oy) {
                            const float* src = plane + (oy * g.stride + ky - g.pad) * g.in.w;
                            float* d = dst + (oy - oy0) * g.out.w;
                            for (std::size_t ox = xs.begin; ox < xs.end; ++ox) {
                                d[ox] = src[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }

        /// Adds the column buffer back onto the input-shaped gradient.
        inline void col2im(const float* col, const Geometry& g, std::size_t oy0, std::size_t oy1, float* in)
        {
            const std::size_t cols = (oy1 - oy0) * g.out.w;
            std::size_t r = 0;
            for (std::size_t ci = 0; ci < g.in.c; ++ci) {
                float* plane = in + ci * g.in.plane();
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const TapRange rows = tap_range(g.in.h, g.out.h, ky, g.stride, g.pad);
                    for (std::size_t kx = 0; kx < g.kw; ++kx, ++r) {
                        const TapRange xs = tap_range(g.in.w, g.out.w, kx, g.stride, g.pad);
                        const float* src = col + r * cols;
                        for (std::size_t oy = std::max(oy0, rows.begin); oy < std::min(oy1, rows.end); ++oy) {
                            float* dst = plane + (oy * g.stride + ky - g.pad) * g.in.w;
                            const float* s = src + (oy - oy0) * g.out.w;
                            for (std::size_t ox = xs.begin; ox < xs.end; ++ox) {
                                dst[ox * g.stride + kx - g.pad] += s[ox];
                            }
                        }
                    }
                }
            }
        }

        inline Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

        inline void forward(const Tensor4<float>& input, const Tensor4<float>& weights, const Geometry& g,
                            Tensor4<float>& out)
        {
            const Eigen::Map<const Mat> w(weights.values().data(), idx(g.out.c), idx(g.k()));
            const std::size_t tile = g.tile_rows();
            std::vector<float> col(g.k() * tile * g.out.w);
            for (std::size_t n = 0; n < g.in.n; ++n) {
                for (std::size_t oy0 = 0; oy0 < g.out.h; oy0 += tile) {
                    const std::size_t oy1 = std::min(g.out.h, oy0 + tile);
                    const std::size_t cols = (oy1 - oy0) * g.out.w;
                    im2col(input.plane(n, 0), g, oy0, oy1, col.data());
                    const Eigen::Map<const Mat> c(col.data(), idx(g.k()), idx(cols));
                    Strided o(out.plane(n, 0) + oy0 * g.out.w, idx(g.out.c), idx(cols),
                              Eigen::OuterStride<>(idx(g.out.plane())));
                    o.noalias() = w * c;
                }
            }
        }

        inline Tensor4<float> backward_input(const Tensor4<float>& weights, const Geometry& g,
                                             const Tensor4<float>& grad_out)
        {
            Tensor4<float> gin(g.in);
            const Eigen::Map<const Mat> w(weights.values().data(), idx(g.out.c), idx(g.k()));
            const std::size_t tile = g.tile_rows();
            std::vector<float> col(g.k() * tile * g.out.w);
            for (std::size_t n = 0; n < g.in.n; ++n) {
                for (std::size_t oy0 = 0; oy0 < g.out.h; oy0 += tile) {
                    const std::size_t oy1 = std::min(g.out.h, oy0 + tile);
                    const std::size_t cols = (oy1 - oy0) * g.out.w;
                    const ConstStrided go(grad_out.plane(n, 0) + oy0 * g.out.w, idx(g.out.c), idx(cols),
                                          Eigen::OuterStride<>(idx(g.out.plane())));
                    Eigen::Map<Mat> c(col.data(), idx(g.k()), idx(cols));
                    c.noalias() = w.transpose() * go;
                    col2im(col.data(), g, oy0, oy1, gin.plane(n, 0));
                }
            }
            return gin;
        }

        inline Tensor4<float> backward_weights(const Tensor4<float>& input, const Geometry& g, const Shape& w_shape,
                                               const Tensor4<float>& grad_out)
        {
            Tensor4<float> gw(w_shape);
            Eigen::Map<Mat> w(gw.values().data(), idx(g.out.c), idx(g.k()));
            const std::size_t tile = g.tile_rows();
            std::vector<float> col(g.k() * tile * g.out.w);
            for (std::size_t n = 0; n < g.in.n; ++n) {
                for (std::size_t oy0 = 0; oy0 < g.out.h; oy0 += tile) {
                    const std::size_t oy1 = std::min(g.out.h, oy0 + tile);
                    const std::size_t cols = (oy1 - oy0) * g.out.w;
                    im2col(input.plane(n, 0), g, oy0, oy1, col.data());
                    const Eigen::Map<const Mat> c(col.data(), idx(g.k()), idx(cols));
                    const ConstStrided go(grad_out.plane(n, 0) + oy0 * g.out.w, idx(g.out.c), idx(cols),
                                          Eigen::OuterStride<>(idx(g.out.plane())));
                    w.noalias() += go * c.transpose();
                }
            }
            return gw;
        }

    } // namespace gemm

    /// out = W * input (no bias). Each output element accumulates in the fixed
    /// order (ci, ky, kx) regardless of loop blocking, so results are
    /// reproducible and match a naive nested loop bit for bit.
    template <std::floating_point T>
    void conv_accumulate(const Tensor4<T>& input, const Tensor4<T>& weights, std::size_t stride, std::size_t pad,
                         Tensor4<T>& out)
    {
        const Shape is = input.shape();
        const Shape os = out.shape();
        const std::size_t kh = weights.shape().h;
        const std::size_t kw = weights.shape().w;
        if constexpr (std::is_same_v<T, float>) {
            gemm::forward(input, weights, {is, os, kh, kw, stride, pad}, out);
            return;
        }
        for (std::size_t n = 0; n < is.n; ++n) {
            for (std::size_t co = 0; co < os.c; ++co) {
                T* o = out.plane(n, co);
                std::fill_n(o, os.plane(), T(0));
                for (std::size_t ci = 0; ci < is.c; ++ci) {
                    const T* in = input.plane(n, ci);
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const TapRange rows = tap_range(is.h, os.h, ky, stride, pad);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const T w = weights(co, ci, ky, kx);
                            const TapRange cols = tap_range(is.w, os.w, kx, stride, pad);
                            const std::size_t len = cols.end - cols.begin;
                            const std::size_t col0 = cols.begin * stride + kx - pad;
                            for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                                const T* src = in + (oy * stride + ky - pad) * is.w + col0;
                                T* dst = o + oy * os.w + cols.begin;
                                if (stride == 1) {
                                    for (std::size_t i = 0; i < len; ++i) {
                                        dst[i] += w * src[i];
                                    }
                                } else {
                                    for (std::size_t i = 0; i < len; ++i) {
                                        dst[i] += w * src[i * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// grad_input = W^T * grad_out (transposed convolution).
    template <std::floating_point T>
    Tensor4<T> conv_backward_input(const Shape& in_shape, const Tensor4<T>& weights, std::size_t stride,
                                   std::size_t pad, const Tensor4<T>& grad_out)
    {
        const Shape os = grad_out.shape();
        const std::size_t kh = weights.shape().h;
        const std::size_t kw = weights.shape().w;
        if constexpr (std::is_same_v<T, float>) {
            return gemm::backward_input(weights, {in_shape, os, kh, kw, stride, pad}, grad_out);
        }
        Tensor4<T> gin(in_shape);
        for (std::size_t n = 0; n < in_shape.n; ++n) {
            for (std::size_t ci = 0; ci < in_shape.c; ++ci) {
                T* gi = gin.plane(n, ci);
                for (std::size_t co = 0; co < os.c; ++co) {
                    const T* g = grad_out.plane(n, co);
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const TapRange rows = tap_range(in_shape.h, os.h, ky, stride, pad);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const T w = weights(co, ci, ky, kx);
                            const TapRange cols = tap_range(in_shape.w, os.w, kx, stride, pad);
                            const std::size_t len = cols.end - cols.begin;
                            const std::size_t col0 = cols.begin * stride + kx - pad;
                            for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                                T* dst = gi + (oy * stride + ky - pad) * in_shape.w + col0;
                                const T* src = g + oy * os.w + cols.begin;
                                if (stride == 1) {
                                    for (std::size_t i = 0; i < len; ++i) {
                                        dst[i] += w * src[i];
                                    }
                                } else {
                                    for (std::size_t i = 0; i < len; ++i) {
                                        dst[i * stride] += w * src[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        return gin;
    }

    /// grad_weights[co, ci, ky, kx] = sum over (n, oy, ox) of grad_out * input tap.
    template <std::floating_point T>
    Tensor4<T> conv_backward_weights(const Tensor4<T>& input, const Shape& w_shape, std::size_t stride,
                                     std::size_t pad, const Tensor4<T>& grad_out)
    {
        constexpr std::size_t lanes = 8;
        const Shape is = input.shape();
        const Shape os = grad_out.shape();
        if constexpr (std::is_same_v<T, float>) {
            return gemm::backward_weights(input, {is, os, w_shape.h, w_shape.w, stride, pad}, w_shape, grad_out);
        }
        Tensor4<T> gw(w_shape);
        for (std::size_t co = 0; co < w_shape.n; ++co) {
            for (std::size_t ci = 0; ci < w_shape.c; ++ci) {
                for (std::size_t ky = 0; ky < w_shape.h; ++ky) {
                    const TapRange rows = tap_range(is.h, os.h, ky, stride, pad);
                    for (std::size_t kx = 0; kx < w_shape.w; ++kx) {
                        const TapRange cols = tap_range(is.w, os.w, kx, stride, pad);
                        const std::size_t len = cols.end - cols.begin;
                        const std::size_t col0 = cols.begin * stride + kx - pad;
                        std::array<T, lanes> acc{};
                        T tail = 0;
                        for (std::size_t n = 0; n < is.n; ++n) {
                            const T* g = grad_out.plane(n, co);
                            const T* in = input.plane(n, ci);
                            for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                                const T* grow = g + oy * os.w + cols.begin;
                                const T* irow = in + (oy * stride + ky - pad) * is.w + col0;
                                std::size_t i = 0;
                                for (; i + lanes <= len; i += lanes) {
                                    for (std::size_t l = 0; l < lanes; ++l) {
                                        acc[l] += grow[i + l] * irow[(i + l) * stride];
                                    }
                                }
                                for (; i < len; ++i) {
                                    tail += grow[i] * irow[i * stride];
                                }
                            }
                        }
                        T total = 0;
                        for (T a : acc) {
                            total += a;
                        }
                        gw(co, ci, ky, kx) = total + tail;
                    }
                }
            }
        }
        return gw;
    }

    template <std::floating_point T>
    std::vector<T> channel_sums(const Tensor4<T>& t)
    {
        const Shape s = t.shape();
        std::vector<T> out(s.c, T(0));
        for (std::size_t n = 0; n < s.n; ++n) {
            for (std::size_t c = 0; c < s.c; ++c) {
                const T* p = t.plane(n, c);
                T acc = 0;
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    acc += p[i];
                }
                out[c] += acc;
            }
        }
        return out;
    }

} // namespace detail

/// Dense 2-D convolution with zero padding.
template <std::floating_point T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvParams<T>& params)
{
    params.validate();
    if (input.shape().c != params.c_in()) {
        throw DimensionError("conv2d: input has " + std::to_string(input.shape().c) + " channels, kernel expects " +
                             std::to_string(params.c_in()));
    }
    Tensor4<T> out(detail::conv_output_shape(input.shape(), params.c_out(), params.kh(), params.kw(), params.stride,
                                             params.padding));
    detail::conv_accumulate(input, params.weights, params.stride, params.padding, out);
    const Shape os = out.shape();
    for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t co = 0; co < os.c; ++co) {
            T* o = out.plane(n, co);
            const T b = params.bias[co];
            for (std::size_t i = 0; i < os.plane(); ++i) {
                o[i] = o[i] + b;
            }
        }
    }
    return out;
}

template <std::floating_point T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const ConvParams<T>& params, const Tensor4<T>& grad_out)
{
    params.validate();
    if (input.shape().c != params.c_in()) {
        throw DimensionError("conv2d_backward: input channel count does not match the kernel");
    }
    const Shape expect = detail::conv_output_shape(input.shape(), params.c_out(), params.kh(), params.kw(),
                                                   params.stride, params.padding);
    require_same_shape(grad_out.shape(), expect, "conv2d_backward grad_out");
    ConvGrads<T> g;
    g.input = detail::conv_backward_input(input.shape(), params.weights, params.stride, params.padding, grad_out);
    g.weights = detail::conv_backward_weights(input, params.weights.shape(), params.stride, params.padding, grad_out);
    g.bias = detail::channel_sums(grad_out);
    return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling

template <std::floating_point T>
Tensor4<T> nearest_upsample(const Tensor4<T>& input, std::size_t factor)
{
    if (factor == 0) {
        throw ArgumentError("upsample factor must be at least 1");
    }
    const Shape s = input.shape();
    Tensor4<T> out({s.n, s.c, s.h * factor, s.w * factor});
    const std::size_t ow = s.w * factor;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* in = input.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t y = 0; y < s.h * factor; ++y) {
                const T* row = in + (y / factor) * s.w;
                for (std::size_t x = 0; x < ow; ++x) {
                    o[y * ow + x] = row[x / factor];
                }
            }
        }
    }
    return out;
}

/// Sums each factor x factor block of grad_out.
template <std::floating_point T>
Tensor4<T> nearest_upsample_backward(const Tensor4<T>& grad_out, std::size_t factor)
{
    if (factor == 0) {
        throw ArgumentError("upsample factor must be at least 1");
    }
    const Shape s = grad_out.shape();
    if (s.h % factor != 0 || s.w % factor != 0) {
        throw DimensionError("upsample backward: " + s.str() + " is not divisible by factor " + std::to_string(factor));
    }
    Tensor4<T> gin({s.n, s.c, s.h / factor, s.w / factor});
    const std::size_t iw = s.w / factor;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* g = grad_out.plane(n, c);
            T* o = gin.plane(n, c);
            for (std::size_t y = 0; y < s.h; ++y) {
                for (std::size_t x = 0; x < s.w; ++x) {
                    o[(y / factor) * iw + x / factor] += g[y * s.w + x];
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <std::floating_point T>
struct BatchNormState {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.1);
    bool frozen = false;

    static BatchNormState identity(std::size_t channels)
    {
        BatchNormState s;
        s.gamma.assign(channels, T(1));
        s.beta.assign(channels, T(0));
        s.running_mean.assign(channels, T(0));
        s.running_var.assign(channels, T(1));
        return s;
    }

    std::size_t channels() const noexcept { return gamma.size(); }
};

/// Intermediate values a batch-norm backward pass needs.
template <std::floating_point T>
struct BatchNormCache {
    Tensor4<T> normalized;
    std::vector<T> inv_std;
    bool batch_statistics = false;
};

/// Normalizes per channel. Training mode on a non-frozen state uses batch
/// statistics and updates the running estimates; otherwise running statistics
/// are used and the state is left untouched.
template <std::floating_point T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& input, BatchNormState<T>& state, bool training,
                             BatchNormCache<T>* cache = nullptr)
{
    const Shape s = input.shape();
    if (state.channels() != s.c || state.beta.size() != s.c || state.running_mean.size() != s.c ||
        state.running_var.size() != s.c) {
        throw DimensionError("batchnorm: state has " + std::to_string(state.channels()) + " channels, input " +
                             s.str());
    }
    const bool batch_stats = training && !state.frozen;
    const std::size_t count = s.n * s.plane();
    if (batch_stats && count < 2) {
        throw DegenerateBatchError("batchnorm: training needs at least two values per channel, got " +
                                   std::to_string(count));
    }
    Tensor4<T> out(s);
    Tensor4<T> xhat(s);
    std::vector<T> inv_std(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
        T mean;
        T var;
        if (batch_stats) {
            T acc = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* p = input.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    acc += p[i];
                }
            }
            mean = acc / T(count);
            T sq = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* p = input.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    const T d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / T(count);
            const T unbiased = sq / T(count - 1);
            state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
            state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        const T is = T(1) / std::sqrt(var + state.epsilon);
        inv_std[c] = is;
        const T g = state.gamma[c];
        const T b = state.beta[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = input.plane(n, c);
            T* xh = xhat.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                xh[i] = (p[i] - mean) * is;
                o[i] = g * xh[i] + b;
            }
        }
    }
    if (cache != nullptr) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->batch_statistics = batch_stats;
    }
    return out;
}

template <std::floating_point T>
struct BatchNormGrads {
    Tensor4<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <std::floating_point T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache)
{
    const Shape s = grad_out.shape();
    require_same_shape(s, cache.normalized.shape(), "batchnorm_backward");
    BatchNormGrads<T> g;
    g.input = Tensor4<T>(s);
    g.gamma.assign(s.c, T(0));
    g.beta.assign(s.c, T(0));
    const T count = T(s.n * s.plane());
    for (std::size_t c = 0; c < s.c; ++c) {
        T dgamma = 0;
        T dbeta = 0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* dy = grad_out.plane(n, c);
            const T* xh = cache.normalized.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                dgamma += dy[i] * xh[i];
                dbeta += dy[i];
            }
        }
        g.gamma[c] = dgamma;
        g.beta[c] = dbeta;
        const T scale = state.gamma[c] * cache.inv_std[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* dy = grad_out.plane(n, c);
            const T* xh = cache.normalized.plane(n, c);
            T* dx = g.input.plane(n, c);
            if (cache.batch_statistics) {
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    dx[i] = scale * (dy[i] - dbeta / count - xh[i] * dgamma / count);
                }
            } else {
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    dx[i] = scale * dy[i];
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { none, relu, leaky_relu };

struct Activation {
    ActivationKind kind = ActivationKind::none;
    double slope = 0.2; // leaky_relu only

    static constexpr Activation relu() { return {ActivationKind::relu, 0.0}; }
    static constexpr Activation leaky_relu(double s = 0.2) { return {ActivationKind::leaky_relu, s}; }
    static constexpr Activation identity() { return {ActivationKind::none, 0.0}; }

    bool operator==(const Activation&) const = default;
};

template <std::floating_point T>
Tensor4<T> activation(const Tensor4<T>& input, Activation act)
{
    Tensor4<T> out(input.shape());
    const T slope = static_cast<T>(act.slope);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T x = input[i];
        switch (act.kind) {
        case ActivationKind::relu:
            out[i] = x > T(0) ? x : T(0);
            break;
        case ActivationKind::leaky_relu:
            out[i] = x < T(0) ? slope * x : x;
            break;
        case ActivationKind::none:
            out[i] = x;
            break;
        }
    }
    return out;
}

/// Gradient through the activation; `input` is the pre-activation tensor.
template <std::floating_point T>
Tensor4<T> activation_backward(const Tensor4<T>& input, Activation act, const Tensor4<T>& grad_out)
{
    require_same_shape(input.shape(), grad_out.shape(), "activation_backward");
    Tensor4<T> g(input.shape());
    const T slope = static_cast<T>(act.slope);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T x = input[i];
        switch (act.kind) {
        case ActivationKind::relu:
            g[i] = x > T(0) ? grad_out[i] : T(0);
            break;
        case ActivationKind::leaky_relu:
            g[i] = x < T(0) ? slope * grad_out[i] : grad_out[i];
            break;
        case ActivationKind::none:
            g[i] = grad_out[i];
            break;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <std::floating_point T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b)
{
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw DimensionError("concat: " + sa.str() + " and " + sb.str() + " differ outside the channel axis");
    }
    Tensor4<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
    for (std::size_t n = 0; n < sa.n; ++n) {
        std::copy_n(a.plane(n, 0), sa.c * sa.plane(), out.plane(n, 0));
        std::copy_n(b.plane(n, 0), sb.c * sb.plane(), out.plane(n, sa.c));
    }
    return out;
}

/// Inverse of concat_channels: first `channels` channels, then the rest.
template <std::floating_point T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& t, std::size_t channels)
{
    const Shape s = t.shape();
    if (channels > s.c) {
        throw DimensionError("split: " + std::to_string(channels) + " channels requested from " + s.str());
    }
    Tensor4<T> a({s.n, channels, s.h, s.w});
    Tensor4<T> b({s.n, s.c - channels, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        std::copy_n(t.plane(n, 0), channels * s.plane(), a.plane(n, 0));
        std::copy_n(t.plane(n, channels), (s.c - channels) * s.plane(), b.plane(n, 0));
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2

template <std::floating_point T>
struct MaxPoolResult {
    Tensor4<T> output;
    std::vector<std::size_t> argmax; // flat input index per output element
};

/// Ties resolve to the first maximum in row-major window order.
template <std::floating_point T>
MaxPoolResult<T> max_pool2x2(const Tensor4<T>& input)
{
    const Shape s = input.shape();
    if (s.h < 2 || s.w < 2) {
        throw DimensionError("max_pool2x2: input " + s.str() + " is smaller than the window");
    }
    MaxPoolResult<T> r;
    r.output = Tensor4<T>({s.n, s.c, s.h / 2, s.w / 2});
    r.argmax.resize(r.output.size());
    const std::size_t oh = s.h / 2;
    const std::size_t ow = s.w / 2;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = input.index(n, c, 0, 0);
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    std::size_t best = base + 2 * y * s.w + 2 * x;
                    T best_v = input[best];
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = base + (2 * y + dy) * s.w + 2 * x + dx;
                            if (input[idx] > best_v) {
                                best_v = input[idx];
                                best = idx;
                            }
                        }
                    }
                    const std::size_t o = r.output.index(n, c, y, x);
                    r.output[o] = best_v;
                    r.argmax[o] = best;
                }
            }
        }
    }
    return r;
}

template <std::floating_point T>
Tensor4<T> max_pool2x2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                const Tensor4<T>& grad_out)
{
    if (argmax.size() != grad_out.size()) {
        throw DimensionError("max_pool2x2_backward: argmax/gradient size mismatch");
    }
    Tensor4<T> g(input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        g[argmax[i]] += grad_out[i];
    }
    return g;
}

} // namespace pconv
