#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pconv/partial_conv.hpp"

using namespace pconv;

namespace {

PartialConvLayer<double> random_layer(std::size_t co, std::size_t ci, std::size_t k, std::size_t stride,
                                      std::size_t pad, std::uint64_t seed)
{
    PartialConvLayer<double> l;
    l.params.weights = oracle::random_tensor({co, ci, k, k}, seed);
    const auto b = oracle::random_tensor({1, co, 1, 1}, seed + 1);
    l.params.bias.assign(b.values().begin(), b.values().end());
    l.params.stride = stride;
    l.params.padding = pad;
    return l;
}

/// Per-channel renormalization written out literally.
Tensor4d naive_per_channel(const Tensor4d& x, const Tensor4d& m, const PartialConvLayer<double>& l)
{
    const auto& p = l.params;
    const int C = static_cast<int>(x.shape().c), H = static_cast<int>(x.shape().h), W = static_cast<int>(x.shape().w);
    const int K = static_cast<int>(p.kh()), S = static_cast<int>(p.stride), P = static_cast<int>(p.padding);
    const int OH = (H + 2 * P - K) / S + 1, OW = (W + 2 * P - K) / S + 1;
    Tensor4d out({x.shape().n, p.c_out(), static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t co = 0; co < p.c_out(); ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double total = 0, acc = 0;
                    for (int ci = 0; ci < C; ++ci) {
                        double dot = 0, ms = 0;
                        for (int ky = 0; ky < K; ++ky) {
                            for (int kx = 0; kx < K; ++kx) {
                                const int y = oy * S + ky - P, xx = ox * S + kx - P;
                                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                ms += m(n, ci, y, xx);
                                dot += p.weights(co, ci, ky, kx) * m(n, ci, y, xx) * x(n, ci, y, xx);
                            }
                        }
                        total += ms;
                        if (ms > 0) acc += dot * (K * K) / ms;
                    }
                    out(n, co, oy, ox) = total > 0 ? acc + p.bias[co] : 0.0;
                }
    return out;
}

} // namespace

TEST(PartialConv, HandEvaluatedWindow)
{
    const Tensor4d x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor4d m({1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    PartialConvLayer<double> l;
    l.params = {Tensor4d({1, 1, 3, 3}, 1.0), {0.0}, 1, 0};
    const auto y = partial_conv_forward(MaskedTensor<double>{x, m}, l);
    ASSERT_EQ(y.features.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.features[0], 45.0); // (1 + 5 + 9) * 9 / 3
    EXPECT_EQ(y.mask[0], 1.0);
}

TEST(PartialConv, FullMaskIsStandardConvolution)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t k = 1 + 2 * (seed % 4);
        const std::size_t stride = 1 + seed % 2;
        const auto l = random_layer(3, 2, k, stride, 0, seed * 7);
        const auto x = oracle::random_tensor({2, 2, 10, 9}, seed);
        const auto y = partial_conv_forward(MaskedTensor<double>{x, Tensor4d(x.shape(), 1.0)}, l);
        EXPECT_EQ(y.features, conv2d_forward(x, l.params));
        for (double v : y.mask.values()) EXPECT_EQ(v, 1.0);
    }
}

TEST(PartialConv, PaddingActsAsHole)
{
    // Full mask with padding: interior windows reduce to the dense convolution,
    // border windows are rescaled by window / in-image taps.
    const auto l = random_layer(2, 2, 3, 1, 1, 9);
    const auto x = oracle::random_tensor({1, 2, 5, 5}, 10);
    const auto y = partial_conv_forward(MaskedTensor<double>{x, Tensor4d(x.shape(), 1.0)}, l);
    auto nobias = l.params;
    nobias.bias.assign(2, 0.0);
    const auto dense = conv2d_forward(x, nobias);
    for (std::size_t co = 0; co < 2; ++co) {
        EXPECT_NEAR(y.features(0, co, 2, 2), dense(0, co, 2, 2) + l.params.bias[co], 1e-12);
        EXPECT_NEAR(y.features(0, co, 0, 2), dense(0, co, 0, 2) * 18.0 / 12.0 + l.params.bias[co], 1e-12);
        EXPECT_NEAR(y.features(0, co, 0, 0), dense(0, co, 0, 0) * 18.0 / 8.0 + l.params.bias[co], 1e-12);
    }
}

TEST(PartialConv, EmptyMaskGivesZeros)
{
    const auto l = random_layer(4, 3, 3, 2, 1, 5);
    const auto x = oracle::random_tensor({1, 3, 8, 8}, 6);
    const auto y = partial_conv_forward(MaskedTensor<double>{x, Tensor4d(x.shape(), 0.0)}, l);
    for (double v : y.features.values()) EXPECT_EQ(v, 0.0);
    for (double v : y.mask.values()) EXPECT_EQ(v, 0.0);
}

TEST(PartialConv, MatchesLiteralOracle)
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t k = 3 + 2 * (seed % 3);
        const std::size_t stride = 1 + seed % 2;
        const std::size_t pad = (seed % 5 == 0) ? 0 : k / 2;
        const auto l = random_layer(3, 2, k, stride, pad, seed + 100);
        const auto x = oracle::random_tensor({2, 2, 9, 10}, seed + 200);
        const auto m = oracle::random_mask(x.shape(), seed + 300, 0.15 + 0.02 * static_cast<double>(seed));
        const auto y = partial_conv_forward(MaskedTensor<double>{x, m}, l);
        const auto [want, want_mask] = oracle::naive_partial_conv(x, m, l.params.weights, l.params.bias,
                                                                  static_cast<int>(stride), static_cast<int>(pad));
        EXPECT_LT(max_abs_diff(y.features, want), 1e-12) << seed;
        EXPECT_EQ(y.mask, want_mask) << seed;
    }
}

TEST(PartialConv, RejectsBadInput)
{
    const auto l = random_layer(1, 1, 3, 1, 1, 1);
    Tensor4d m({1, 1, 4, 4}, 1.0);
    m[3] = 0.5;
    EXPECT_THROW(partial_conv_forward(MaskedTensor<double>{Tensor4d({1, 1, 4, 4}), m}, l), ContractError);
    EXPECT_THROW(partial_conv_forward(MaskedTensor<double>{Tensor4d({1, 1, 4, 4}), Tensor4d({1, 1, 4, 5})}, l),
                 DimensionError);
    EXPECT_THROW(partial_conv_forward(MaskedTensor<double>{Tensor4d({1, 2, 4, 4}), Tensor4d({1, 2, 4, 4})}, l),
                 DimensionError);
    EXPECT_THROW(partial_conv_backward(MaskedTensor<double>{Tensor4d({1, 1, 4, 4}), Tensor4d({1, 1, 4, 4}, 1.0)}, l,
                                       Tensor4d({1, 1, 3, 3})),
                 DimensionError);
}

TEST(PartialConv, HoleValuesNeverReachTheOutput)
{
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 1 + 2 * (rng() % 4);
        auto l = random_layer(1 + rng() % 4, 1 + rng() % 3, k, 1 + rng() % 2, k / 2, rng());
        l.normalization = (trial % 4 == 3) ? MaskNormalization::per_channel : MaskNormalization::across_channels;
        const Shape s{1 + rng() % 2, l.params.c_in(), 4 + rng() % 8, 4 + rng() % 8};
        const auto m = oracle::random_mask(s, rng(), 0.3);
        auto a = oracle::random_tensor(s, rng());
        auto b = a;
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (m[i] == 0.0) {
                a[i] = 1e6 * (static_cast<double>(rng() % 1000) - 500.0);
                b[i] = -a[i] * 3.0 + 7.0;
            }
        }
        const auto ya = partial_conv_forward(MaskedTensor<double>{a, m}, l);
        const auto yb = partial_conv_forward(MaskedTensor<double>{b, m}, l);
        ASSERT_EQ(ya.features, yb.features) << trial;
        ASSERT_EQ(ya.mask, yb.mask);
    }
}

TEST(PartialConvBackward, NoGradientIntoHoles)
{
    const auto l = random_layer(3, 2, 3, 2, 1, 31);
    const auto x = oracle::random_tensor({1, 2, 6, 6}, 32);
    const auto m = oracle::random_mask(x.shape(), 33);
    const auto g = partial_conv_backward(MaskedTensor<double>{x, m}, l, oracle::random_tensor({1, 3, 3, 3}, 34));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (m[i] == 0.0) {
            EXPECT_EQ(g.input[i], 0.0);
        }
    }
}

TEST(PartialConvBackward, FullMaskMatchesConvBackward)
{
    const auto l = random_layer(3, 2, 5, 2, 0, 41);
    const auto x = oracle::random_tensor({2, 2, 9, 9}, 42);
    const auto go = oracle::random_tensor({2, 3, 3, 3}, 43);
    const auto a = partial_conv_backward(MaskedTensor<double>{x, Tensor4d(x.shape(), 1.0)}, l, go);
    const auto b = conv2d_backward(x, l.params, go);
    EXPECT_LT(max_abs_diff(a.input, b.input), 1e-12);
    EXPECT_LT(max_abs_diff(a.weights, b.weights), 1e-12);
    for (std::size_t i = 0; i < b.bias.size(); ++i) EXPECT_NEAR(a.bias[i], b.bias[i], 1e-12);
}

TEST(PartialConvBackward, FiniteDifferences)
{
    struct Case {
        Shape s;
        std::size_t co, k, stride, pad;
        MaskNormalization norm;
    };
    const Case cases[] = {
        {{1, 1, 6, 6}, 1, 3, 1, 1, MaskNormalization::across_channels},
        {{1, 2, 6, 6}, 3, 3, 2, 1, MaskNormalization::across_channels},
        {{2, 3, 7, 5}, 2, 5, 2, 2, MaskNormalization::across_channels},
        {{1, 2, 6, 6}, 2, 3, 1, 1, MaskNormalization::per_channel},
    };
    std::uint64_t seed = 50;
    for (const auto& c : cases) {
        auto l = random_layer(c.co, c.s.c, c.k, c.stride, c.pad, seed++);
        l.normalization = c.norm;
        auto x = oracle::random_tensor(c.s, seed++);
        const auto m = oracle::random_mask(c.s, seed++);
        const auto out_shape = partial_conv_forward(MaskedTensor<double>{x, m}, l).features.shape();
        const auto r = oracle::random_tensor(out_shape, seed++);
        auto f = [&] { return oracle::weighted_sum(partial_conv_forward(MaskedTensor<double>{x, m}, l).features, r); };
        const auto g = partial_conv_backward(MaskedTensor<double>{x, m}, l, r);
        EXPECT_LT(oracle::max_fd_error(f, x.values(), g.input.values()), 1e-4);
        EXPECT_LT(oracle::max_fd_error(f, l.params.weights.values(), g.weights.values()), 1e-4);
        EXPECT_LT(oracle::max_fd_error(f, l.params.bias, g.bias), 1e-4);
    }
}

TEST(PartialConv, PerChannelVariantMatchesLiteralOracle)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto l = random_layer(2, 3, 3, 1 + seed % 2, 1, seed + 500);
        l.normalization = MaskNormalization::per_channel;
        const auto x = oracle::random_tensor({1, 3, 7, 7}, seed + 600);
        const auto m = oracle::random_mask(x.shape(), seed + 700, 0.3);
        const auto y = partial_conv_forward(MaskedTensor<double>{x, m}, l);
        EXPECT_LT(max_abs_diff(y.features, naive_per_channel(x, m, l)), 1e-12);
    }
}

TEST(MaskUpdate, MatchesForwardMaskAndGrowsMonotonically)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = oracle::random_mask({1, 1, 16, 16}, seed, 0.05);
        const auto l = random_layer(2, 1, 3, 1, 1, seed);
        const auto y = partial_conv_forward(MaskedTensor<double>{Tensor4d(m.shape()), m}, l);
        const auto u = updated_mask(m, 3, 1, 1);
        for (std::size_t i = 0; i < u.size(); ++i) {
            EXPECT_EQ(u[i], y.mask[i]);
            EXPECT_GE(u[i], m[i]); // stride 1: every valid pixel stays valid
        }
    }
}

TEST(MaskCoverage, Extremes)
{
    EXPECT_EQ(mask_coverage(Tensor4d({1, 3, 4, 4}, 1.0)), 1.0);
    EXPECT_EQ(mask_coverage(Tensor4d({1, 3, 4, 4}, 0.0)), 0.0);
    EXPECT_DOUBLE_EQ(mask_coverage(Tensor4d({1, 1, 1, 4}, {1, 0, 1, 1})), 0.75);
    EXPECT_THROW(mask_coverage(Tensor4d({1, 1, 1, 1}, 0.3)), ContractError);
}
