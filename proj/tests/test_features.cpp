#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "pconv/features.hpp"

using namespace pconv;

namespace {

std::vector<std::vector<std::pair<Tensor4d, std::vector<double>>>> weights_of(const FeatureStack<double>& s)
{
    std::vector<std::vector<std::pair<Tensor4d, std::vector<double>>>> out;
    for (const auto& b : s.blocks) {
        out.emplace_back();
        for (const auto& c : b.convs) out.back().emplace_back(c.weights, c.bias);
    }
    return out;
}

std::vector<Tensor4d> naive(const FeatureStack<double>& s, const Tensor4d& img)
{
    const double m[3] = {s.mean[0], s.mean[1], s.mean[2]};
    const double d[3] = {s.stddev[0], s.stddev[1], s.stddev[2]};
    return oracle::naive_features(img, weights_of(s), s.taps, m, d);
}

} // namespace

TEST(FeatureStack, Vgg16TapShapes)
{
    const auto s = FeatureStack<double>::vgg16_random(1);
    const auto img = oracle::random_tensor({1, 3, 64, 64}, 2, 0, 1);
    const auto f = s.extract(img);
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0].shape(), (Shape{1, 64, 32, 32}));
    EXPECT_EQ(f[1].shape(), (Shape{1, 128, 16, 16}));
    EXPECT_EQ(f[2].shape(), (Shape{1, 256, 8, 8}));
    const auto ts = s.tap_shapes(64, 64);
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(ts[p], f[p].shape());
    EXPECT_EQ(s.blocks[0].convs[0].weights.shape(), (Shape{64, 3, 3, 3}));
    EXPECT_EQ(s.blocks[2].convs.size(), 3u);
}

TEST(FeatureStack, ExtractIsDeterministicAndMatchesLoopOracle)
{
    auto s = FeatureStack<double>::random_stack(3, {4, 6, 5}, {2, 1, 1});
    s.mean = {0.4, 0.5, 0.6};
    s.stddev = {0.2, 0.25, 0.3};
    const auto img = oracle::random_tensor({2, 3, 16, 8}, 4, 0, 1);
    const auto a = s.extract(img);
    const auto b = s.extract(img);
    const auto ref = naive(s, img);
    ASSERT_EQ(a.size(), ref.size());
    for (std::size_t p = 0; p < a.size(); ++p) {
        EXPECT_EQ(a[p], b[p]);
        EXPECT_LT(max_abs_diff(a[p], ref[p]), 1e-12);
    }
}

TEST(FeatureStack, SubsetOfTaps)
{
    auto s = FeatureStack<double>::random_stack(5, {4, 4, 4, 4}, {1, 1, 1, 1});
    s.taps = {2, 4};
    s.validate();
    const auto img = oracle::random_tensor({1, 3, 16, 16}, 6, 0, 1);
    const auto f = s.extract(img);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f[1].shape(), (Shape{1, 4, 1, 1}));
    const auto ref = naive(s, img);
    EXPECT_LT(max_abs_diff(f[0], ref[0]), 1e-12);
    s.taps = {2, 2};
    EXPECT_THROW(s.validate(), ArgumentError);
    s.taps = {5};
    EXPECT_THROW(s.validate(), ArgumentError);
}

TEST(FeatureStack, ZeroTapGradientsGiveZeroImageGradient)
{
    const auto s = FeatureStack<double>::random_stack(7);
    const auto img = oracle::random_tensor({1, 3, 8, 8}, 8, 0, 1);
    FeatureTrace<double> tr;
    const auto f = s.extract(img, &tr);
    std::vector<Tensor4d> zeros;
    for (const auto& t : f) zeros.emplace_back(t.shape());
    const auto g = s.extract_backward(tr, zeros);
    EXPECT_EQ(g.shape(), img.shape());
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(FeatureStack, SingleTapBackwardIsTheOpChain)
{
    auto s = FeatureStack<double>::random_stack(9, {5}, {1});
    s.mean = {0.1, 0.2, 0.3};
    s.stddev = {0.5, 2.0, 1.0};
    const auto img = oracle::random_tensor({1, 3, 6, 6}, 10, 0, 1);
    FeatureTrace<double> tr;
    const auto f = s.extract(img, &tr);
    const Tensor4d r = oracle::random_tensor(f[0].shape(), 11);
    const auto g = s.extract_backward(tr, {r});

    Tensor4d x = img;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 36; ++i) x.plane(0, c)[i] = (x.plane(0, c)[i] - s.mean[c]) / s.stddev[c];
    const auto pre = conv2d_forward(x, s.blocks[0].convs[0]);
    const auto post = activation(pre, Activation::relu());
    const auto pool = max_pool2x2(post);
    const auto g_post = max_pool2x2_backward(post.shape(), pool.argmax, r);
    const auto g_pre = activation_backward(pre, Activation::relu(), g_post);
    auto g_x = conv2d_backward(x, s.blocks[0].convs[0], g_pre).input;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 36; ++i) g_x.plane(0, c)[i] /= s.stddev[c];
    EXPECT_LT(max_abs_diff(g, g_x), 1e-12);
}

TEST(FeatureStack, BackwardMatchesFiniteDifferences)
{
    auto s = FeatureStack<double>::random_stack(12, {4, 6, 8}, {1, 2, 1});
    s.mean = {0.45, 0.5, 0.4};
    s.stddev = {0.25, 0.2, 0.3};
    Tensor4d img = oracle::random_tensor({2, 3, 8, 8}, 13, 0, 1);
    const auto f0 = s.extract(img);

    // sum(extract(x)) and a randomly weighted variant.
    for (int variant = 0; variant < 2; ++variant) {
        std::vector<Tensor4d> r;
        for (std::size_t p = 0; p < f0.size(); ++p) {
            r.push_back(variant == 0 ? Tensor4d(f0[p].shape(), 1.0) : oracle::random_tensor(f0[p].shape(), 20 + p));
        }
        auto loss = [&] {
            const auto f = s.extract(img);
            double acc = 0.0;
            for (std::size_t p = 0; p < f.size(); ++p) acc += oracle::weighted_sum(f[p], r[p]);
            return acc;
        };
        FeatureTrace<double> tr;
        s.extract(img, &tr);
        const auto g = s.extract_backward(tr, r);
        EXPECT_LT(oracle::max_fd_error(loss, img.values(), g.values(), 1e-6), 1e-4) << "variant " << variant;
    }
}

TEST(FeatureStack, BackwardRejectsMismatchedTapGradients)
{
    const auto s = FeatureStack<double>::random_stack(1);
    FeatureTrace<double> tr;
    const auto f = s.extract(oracle::random_tensor({1, 3, 8, 8}, 1), &tr);
    EXPECT_THROW(s.extract_backward(tr, {f[0], f[1]}), DimensionError);
    EXPECT_THROW(s.extract_backward(tr, {f[0], f[0], f[2]}), DimensionError);
    EXPECT_THROW(s.extract(oracle::random_tensor({1, 1, 8, 8}, 1)), DimensionError);
    EXPECT_THROW(s.extract(oracle::random_tensor({1, 3, 4, 4}, 1)), DimensionError);
}

TEST(FeatureStack, ArchiveRoundTripUsesReservedNames)
{
    auto s = FeatureStack<double>::random_stack(14, {4, 6, 8}, {2, 2, 3});
    s.mean = {0.485, 0.456, 0.406};
    s.stddev = {0.229, 0.224, 0.225};
    const auto ar = s.to_archive();
    EXPECT_NE(ar.find("vgg.conv1_1.weight"), nullptr);
    EXPECT_NE(ar.find("vgg.conv3_3.bias"), nullptr);
    EXPECT_NE(ar.find("norm.mean"), nullptr);
    EXPECT_NE(ar.find("norm.std"), nullptr);
    EXPECT_EQ(ar.at("taps").values, (std::vector<float>{1, 2, 3}));

    const auto back = FeatureStack<double>::from_archive(ar);
    ASSERT_EQ(back.blocks.size(), 3u);
    EXPECT_EQ(back.blocks[2].convs.size(), 3u);
    EXPECT_EQ(back.taps, s.taps);
    const auto img = oracle::random_tensor({1, 3, 8, 8}, 15, 0, 1);
    // Weights were stored as f32; compare against the f32-rounded original.
    const auto rounded = FeatureStack<float>::from_archive(ar).cast<double>();
    const auto fa = back.extract(img);
    const auto fb = rounded.extract(img);
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(fa[p], fb[p]);
}

TEST(FeatureStack, LoadErrors)
{
    const auto s = FeatureStack<double>::random_stack(16);
    const auto full = s.to_archive();
    PcnvArchive no_taps;
    for (const auto& e : full.entries())
        if (e.name != "taps") no_taps.add(e.name, e.dims, e.values);
    EXPECT_THROW(FeatureStack<double>::from_archive(no_taps), LoadError);

    PcnvArchive bad_taps;
    for (const auto& e : full.entries())
        bad_taps.add(e.name, e.dims, e.name == "taps" ? std::vector<float>{1, 2, 7} : e.values);
    EXPECT_THROW(FeatureStack<double>::from_archive(bad_taps), LoadError);

    PcnvArchive no_norm;
    for (const auto& e : full.entries())
        if (e.name != "norm.std") no_norm.add(e.name, e.dims, e.values);
    EXPECT_THROW(FeatureStack<double>::from_archive(no_norm), LoadError);
}
