#pragma once

// Fixed convolutional feature stack (VGG16 layout up to block 3) used by the
// perceptual and style losses. Weights never change; gradients only flow
// through to the input image.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pconv/core/init.hpp"
#include "pconv/core/ops.hpp"
#include "pconv/core/pcnv.hpp"
#include "pconv/core/random.hpp"

namespace pconv {

template <std::floating_point T>
struct FeatureBlock {
    std::vector<ConvParams<T>> convs; // 3x3, stride 1, pad 1, each followed by ReLU; block ends in 2x2 max pool
};

template <std::floating_point T>
struct FeatureTrace {
    Tensor4<T> normalized_input;
    // Per block, per conv: the conv input and its pre-ReLU output.
    std::vector<std::vector<Tensor4<T>>> conv_inputs;
    std::vector<std::vector<Tensor4<T>>> pre_relu;
    std::vector<Shape> pool_input_shapes;
    std::vector<std::vector<std::size_t>> pool_argmax;
};

template <std::floating_point T>
class FeatureStack {
public:
    std::vector<FeatureBlock<T>> blocks;
    /// 1-based block numbers whose pooled output is a tap, increasing.
    std::vector<std::size_t> taps{1, 2, 3};
    std::array<T, 3> mean{T(0), T(0), T(0)};
    std::array<T, 3> stddev{T(1), T(1), T(1)};

    /// VGG16 block layout (64x2, 128x2, 256x3) with He-initialized weights.
    static FeatureStack vgg16_random(std::uint64_t seed) { return random_stack(seed, {64, 128, 256}, {2, 2, 3}); }

    /// Seeded random stack; one entry of `widths`/`convs_per_block` per block.
    static FeatureStack random_stack(std::uint64_t seed, const std::vector<std::size_t>& widths = {8, 16, 32},
                                     const std::vector<std::size_t>& convs_per_block = {1, 1, 1})
    {
        if (widths.empty() || widths.size() != convs_per_block.size()) {
            throw ArgumentError("random_stack: widths and convs_per_block must be non-empty and equally long");
        }
        FeatureStack s;
        std::size_t cin = 3;
        for (std::size_t b = 0; b < widths.size(); ++b) {
            FeatureBlock<T> block;
            for (std::size_t k = 0; k < convs_per_block[b]; ++k) {
                ConvParams<T> p;
                p.weights = he_init<T>({widths[b], cin, 3, 3}, cin * 9, derive_seed(seed, {b, k}));
                std::mt19937_64 rng(derive_seed(seed, {b, k, 1}));
                std::uniform_real_distribution<double> bias(-0.05, 0.05);
                p.bias.resize(widths[b]);
                for (auto& v : p.bias) {
                    v = static_cast<T>(bias(rng));
                }
                p.stride = 1;
                p.padding = 1;
                block.convs.push_back(std::move(p));
                cin = widths[b];
            }
            s.blocks.push_back(std::move(block));
        }
        s.taps.clear();
        for (std::size_t b = 1; b <= std::min<std::size_t>(3, widths.size()); ++b) {
            s.taps.push_back(b);
        }
        s.validate();
        return s;
    }

    void validate() const
    {
        if (taps.empty()) {
            throw ArgumentError("feature stack has no taps");
        }
        for (std::size_t i = 0; i < taps.size(); ++i) {
            if (taps[i] < 1 || taps[i] > blocks.size() || (i > 0 && taps[i] <= taps[i - 1])) {
                throw ArgumentError("feature stack taps must be increasing block numbers in [1, " +
                                    std::to_string(blocks.size()) + "]");
            }
        }
        std::size_t cin = 3;
        for (const auto& b : blocks) {
            if (b.convs.empty()) {
                throw ArgumentError("feature stack block without convolutions");
            }
            for (const auto& c : b.convs) {
                c.validate();
                if (c.c_in() != cin) {
                    throw DimensionError("feature stack channel chain broken: expected " + std::to_string(cin) +
                                         " input channels, got " + std::to_string(c.c_in()));
                }
                cin = c.c_out();
            }
        }
        for (T s : stddev) {
            if (!(s > T(0))) {
                throw ArgumentError("feature stack normalization std must be positive");
            }
        }
    }

    std::size_t tap_count() const noexcept { return taps.size(); }

    /// (C_p, H_p, W_p) for each tap given an h x w input.
    std::vector<Shape> tap_shapes(std::size_t h, std::size_t w) const
    {
        std::vector<Shape> out;
        for (std::size_t b = 0; b < taps.back(); ++b) {
            h /= 2;
            w /= 2;
            if (std::find(taps.begin(), taps.end(), b + 1) != taps.end()) {
                out.push_back({1, blocks[b].convs.back().c_out(), h, w});
            }
        }
        return out;
    }

    /// Activations at each tap, in tap order.
    std::vector<Tensor4<T>> extract(const Tensor4<T>& image, FeatureTrace<T>* trace = nullptr) const
    {
        const Shape s = image.shape();
        if (s.c != 3) {
            throw DimensionError("feature extraction expects 3-channel images, got " + s.str());
        }
        const std::size_t need = std::size_t{1} << taps.back();
        if (s.h < need || s.w < need) {
            throw DimensionError("image " + s.str() + " too small for " + std::to_string(taps.back()) +
                                 " pooling stages");
        }
        Tensor4<T> x(s);
        for (std::size_t n = 0; n < s.n; ++n) {
            for (std::size_t c = 0; c < 3; ++c) {
                const T* src = image.plane(n, c);
                T* dst = x.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    dst[i] = (src[i] - mean[c]) / stddev[c];
                }
            }
        }
        if (trace) {
            *trace = FeatureTrace<T>{};
            trace->normalized_input = x;
        }
        std::vector<Tensor4<T>> out;
        for (std::size_t b = 0; b < taps.back(); ++b) {
            if (trace) {
                trace->conv_inputs.emplace_back();
                trace->pre_relu.emplace_back();
            }
            for (const auto& conv : blocks[b].convs) {
                Tensor4<T> pre = conv2d_forward(x, conv);
                Tensor4<T> post = activation(pre, Activation::relu());
                if (trace) {
                    trace->conv_inputs.back().push_back(std::move(x));
                    trace->pre_relu.back().push_back(std::move(pre));
                }
                x = std::move(post);
            }
            auto pooled = max_pool2x2(x);
            if (trace) {
                trace->pool_input_shapes.push_back(x.shape());
                trace->pool_argmax.push_back(std::move(pooled.argmax));
            }
            x = std::move(pooled.output);
            if (std::find(taps.begin(), taps.end(), b + 1) != taps.end()) {
                out.push_back(x);
            }
        }
        return out;
    }

    /// Gradient w.r.t. the (unnormalized) input image given one gradient per tap.
    Tensor4<T> extract_backward(const FeatureTrace<T>& trace, const std::vector<Tensor4<T>>& tap_grads) const
    {
        if (tap_grads.size() != taps.size()) {
            throw DimensionError("extract_backward: expected " + std::to_string(taps.size()) + " tap gradients, got " +
                                 std::to_string(tap_grads.size()));
        }
        if (trace.pool_argmax.size() != taps.back()) {
            throw ContractError("extract_backward: trace does not match this stack");
        }
        Tensor4<T> g;
        std::size_t tap_i = taps.size();
        for (std::size_t b = taps.back(); b-- > 0;) {
            if (tap_i > 0 && taps[tap_i - 1] == b + 1) {
                --tap_i;
                const Tensor4<T>& tg = tap_grads[tap_i];
                const Shape expect{trace.pool_input_shapes[b].n, trace.pool_input_shapes[b].c,
                                   trace.pool_input_shapes[b].h / 2, trace.pool_input_shapes[b].w / 2};
                require_same_shape(tg.shape(), expect, "extract_backward tap gradient");
                if (g.empty()) {
                    g = tg;
                } else {
                    g += tg;
                }
            }
            g = max_pool2x2_backward(trace.pool_input_shapes[b], trace.pool_argmax[b], g);
            const auto& convs = blocks[b].convs;
            for (std::size_t k = convs.size(); k-- > 0;) {
                g = activation_backward(trace.pre_relu[b][k], Activation::relu(), g);
                g = detail::conv_backward_input(trace.conv_inputs[b][k].shape(), convs[k].weights, 1, 1, g);
            }
        }
        const Shape s = g.shape();
        for (std::size_t n = 0; n < s.n; ++n) {
            for (std::size_t c = 0; c < 3; ++c) {
                T* p = g.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    p[i] /= stddev[c];
                }
            }
        }
        return g;
    }

    PcnvArchive to_archive() const
    {
        PcnvArchive ar;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            for (std::size_t k = 0; k < blocks[b].convs.size(); ++k) {
                const std::string p = "vgg.conv" + std::to_string(b + 1) + "_" + std::to_string(k + 1);
                ar.add_tensor(p + ".weight", blocks[b].convs[k].weights);
                ar.add_vector(p + ".bias", blocks[b].convs[k].bias);
            }
        }
        ar.add_vector("norm.mean", std::vector<T>(mean.begin(), mean.end()));
        ar.add_vector("norm.std", std::vector<T>(stddev.begin(), stddev.end()));
        const auto count = static_cast<std::uint32_t>(taps.size());
        ar.add("taps", {count}, std::vector<float>(taps.begin(), taps.end()));
        return ar;
    }

    static FeatureStack from_archive(const PcnvArchive& ar)
    {
        FeatureStack s;
        for (std::size_t b = 1;; ++b) {
            FeatureBlock<T> block;
            for (std::size_t k = 1;; ++k) {
                const std::string p = "vgg.conv" + std::to_string(b) + "_" + std::to_string(k);
                if (!ar.find(p + ".weight")) {
                    break;
                }
                ConvParams<T> c;
                c.weights = ar.tensor<T>(p + ".weight");
                c.bias = ar.vector<T>(p + ".bias");
                c.stride = 1;
                c.padding = 1;
                block.convs.push_back(std::move(c));
            }
            if (block.convs.empty()) {
                break;
            }
            s.blocks.push_back(std::move(block));
        }
        if (!ar.find("taps")) {
            throw LoadError("feature weights: missing 'taps' entry");
        }
        s.taps.clear();
        for (float v : ar.vector<float>("taps")) {
            if (v < 1.0f || v != static_cast<float>(static_cast<std::size_t>(v))) {
                throw LoadError("feature weights: taps must be positive integers");
            }
            s.taps.push_back(static_cast<std::size_t>(v));
        }
        const auto m = ar.vector<T>("norm.mean");
        const auto sd = ar.vector<T>("norm.std");
        if (m.size() != 3 || sd.size() != 3) {
            throw LoadError("feature weights: norm.mean and norm.std must hold 3 values");
        }
        std::copy(m.begin(), m.end(), s.mean.begin());
        std::copy(sd.begin(), sd.end(), s.stddev.begin());
        try {
            s.validate();
        } catch (const Error& e) {
            throw LoadError(std::string("feature weights: ") + e.what());
        }
        return s;
    }

    static FeatureStack load(const std::filesystem::path& path) { return from_archive(PcnvArchive::load(path)); }
    void save(const std::filesystem::path& path) const { to_archive().save(path); }

    template <std::floating_point U>
    FeatureStack<U> cast() const
    {
        FeatureStack<U> out;
        for (const auto& b : blocks) {
            FeatureBlock<U> nb;
            for (const auto& c : b.convs) {
                ConvParams<U> nc;
                nc.weights = c.weights.template cast<U>();
                nc.bias.assign(c.bias.begin(), c.bias.end());
                nc.stride = c.stride;
                nc.padding = c.padding;
                nb.convs.push_back(std::move(nc));
            }
            out.blocks.push_back(std::move(nb));
        }
        out.taps = taps;
        for (std::size_t i = 0; i < 3; ++i) {
            out.mean[i] = static_cast<U>(mean[i]);
            out.stddev[i] = static_cast<U>(stddev[i]);
        }
        return out;
    }
};

} // namespace pconv
