#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "pconv/masks.hpp"

using namespace pconv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("pconv_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

MaskImage square_hole(std::size_t size, std::size_t y0, std::size_t x0, std::size_t side)
{
    MaskImage m(size, size);
    for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x) m.at(y, x) = 0;
    return m;
}

// Brute-force border test: distance to the nearest edge for every hole pixel.
bool oracle_touches(const MaskImage& m, double margin)
{
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            if (m.at(y, x)) continue;
            const double d[4] = {double(y), double(x), double(m.height - 1 - y), double(m.width - 1 - x)};
            for (double v : d)
                if (v < margin) return true;
        }
    return false;
}

} // namespace

TEST(ImageIo, PngRoundTripRgbAndGray)
{
    const auto dir = scratch("png");
    Image8 rgb(5, 3, 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<std::uint8_t>(i * 17);
    write_png(dir / "rgb.png", rgb);
    EXPECT_EQ(read_png(dir / "rgb.png"), rgb);

    Image8 gray(4, 6, 1);
    for (std::size_t i = 0; i < gray.data.size(); ++i) gray.data[i] = static_cast<std::uint8_t>(255 - i * 9);
    write_png(dir / "gray.png", gray);
    EXPECT_EQ(read_png(dir / "gray.png"), gray);

    std::ofstream(dir / "junk.png") << "not a png";
    EXPECT_THROW(read_png(dir / "junk.png"), LoadError);
    EXPECT_THROW(read_png(dir / "missing.png"), LoadError);
}

TEST(ImageIo, TensorConversion)
{
    Image8 img(2, 1, 3);
    img.data = {0, 51, 255, 128, 64, 1};
    const auto t = image_to_tensor<double>(img);
    EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 2}));
    EXPECT_DOUBLE_EQ(t(0, 1, 0, 0), 0.2);
    EXPECT_DOUBLE_EQ(t(0, 2, 0, 0), 1.0);
    EXPECT_EQ(tensor_to_image(t), img);

    Image8 g(1, 1, 1);
    g.data = {102};
    const auto tg = image_to_tensor<float>(g);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(tg(0, c, 0, 0), 0.4f);

    Tensor4d out({1, 1, 1, 2});
    out[0] = -0.5;
    out[1] = 1.7;
    const auto clamped = tensor_to_image(out);
    EXPECT_EQ(clamped.data, (std::vector<std::uint8_t>{0, 255}));
}

TEST(ImageIo, CenterCropResize)
{
    Image8 img(6, 4, 1);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 6; ++x) img.at(y, x, 0) = static_cast<std::uint8_t>(x < 1 || x > 4 ? 0 : 200);
    // Central 4x4 is columns 1..4, all 200.
    const auto same = center_crop_resize(img, 4);
    for (auto v : same.data) EXPECT_EQ(v, 200);
    const auto half = center_crop_resize(img, 2);
    for (auto v : half.data) EXPECT_EQ(v, 200);
    const auto big = center_crop_resize(img, 8);
    for (auto v : big.data) EXPECT_EQ(v, 200);
}

TEST(MaskImage, PngRoundTripAndThreshold)
{
    const auto dir = scratch("maskpng");
    auto m = square_hole(16, 3, 4, 5);
    m.save(dir / "m.png");
    EXPECT_EQ(MaskImage::load(dir / "m.png"), m);
    const auto img = read_png(dir / "m.png");
    EXPECT_EQ(img.channels, 1u);
    EXPECT_EQ(img.at(3, 4, 0), 0);
    EXPECT_EQ(img.at(0, 0, 0), 255);

    Image8 g(3, 1, 1);
    g.data = {127, 128, 200};
    EXPECT_EQ(MaskImage::from_image(g).valid, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(SynthRawMask, DeterministicBinaryAndSeedSensitive)
{
    const auto a = synth_raw_mask(128, 42);
    const auto b = synth_raw_mask(128, 42);
    const auto c = synth_raw_mask(128, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (auto v : a.valid) EXPECT_TRUE(v == 0 || v == 1);
    EXPECT_EQ(a.height, 128u);
}

TEST(SynthRawMask, HitsTargetRatio)
{
    for (double target : {0.05, 0.25, 0.55}) {
        const auto m = synth_raw_mask(96, 7, target);
        EXPECT_GE(m.hole_ratio(), target);
        // One painted primitive at most overshoots by a blob of bounded size.
        EXPECT_LT(m.hole_ratio(), target + 0.2) << target;
    }
}

TEST(SynthRawMask, DefaultRatioDistributionCoversTheBins)
{
    // 10^4 draws at a small size: the default target spans roughly (0.015, 0.58],
    // so every ratio bin should receive a meaningful share.
    std::map<int, int> counts;
    double lo = 1.0, hi = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto m = synth_raw_mask(32, derive_seed(99, {std::uint64_t(i)}));
        const double r = m.hole_ratio();
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        if (auto b = ratio_bin(m.hole_count(), m.valid.size())) ++counts[*b];
    }
    EXPECT_GE(lo, 0.015);
    EXPECT_LT(hi, 1.0);
    for (int b = 1; b <= 6; ++b) EXPECT_GT(counts[b], n / 40) << "bin " << b;
}

TEST(Augment, IdentityParameters)
{
    const auto m = synth_raw_mask(64, 5, 0.2);
    EXPECT_EQ(apply_augment(m, AugmentParams{}, 64), m);
    EXPECT_EQ(rotate_mask(m, 0.0), m);
    EXPECT_EQ(rotate_mask(m, 360.0), m);
    EXPECT_EQ(dilate_holes(m, 0), m);
}

TEST(Augment, DilationIsMonotone)
{
    const auto m = synth_raw_mask(64, 6, 0.1);
    std::size_t prev = m.hole_count();
    MaskImage cur = m;
    for (std::size_t k = 1; k <= 5; ++k) {
        const auto d = dilate_holes(m, k);
        EXPECT_GE(d.hole_count(), prev);
        for (std::size_t i = 0; i < d.valid.size(); ++i) {
            if (cur.valid[i] == 0) {
                EXPECT_EQ(d.valid[i], 0);
            }
        }
        prev = d.hole_count();
        cur = d;
    }
    // A single hole pixel grows into a (2k+1)^2 square.
    MaskImage one(21, 21);
    one.at(10, 10) = 0;
    EXPECT_EQ(dilate_holes(one, 3).hole_count(), 49u);
    EXPECT_EQ(dilate_holes(one, 3), square_hole(21, 7, 7, 7));
}

TEST(Augment, QuarterTurnOfSquareHoleKeepsCount)
{
    const auto m = square_hole(64, 10, 20, 12);
    for (double deg : {90.0, 180.0, 270.0}) {
        const auto r = rotate_mask(m, deg);
        EXPECT_EQ(r.hole_count(), m.hole_count()) << deg;
    }
    // 180 degrees about the centre maps (y, x) to (63-y, 63-x).
    EXPECT_EQ(rotate_mask(m, 180.0), square_hole(64, 42, 32, 12));
}

TEST(Augment, CropAndDeterminism)
{
    const auto m = synth_raw_mask(80, 8, 0.3);
    const auto a = augment(m, 11, 64);
    EXPECT_EQ(a, augment(m, 11, 64));
    EXPECT_EQ(a.height, 64u);
    EXPECT_EQ(a.width, 64u);
    EXPECT_THROW(augment(m, 11, 81), ArgumentError);
    const auto p = sample_augment(m, 64, 3, 1);
    EXPECT_LE(p.dilation, 3u);
    EXPECT_LE(p.crop_y, 16u);
    EXPECT_GE(p.rotation_degrees, 0.0);
    EXPECT_LT(p.rotation_degrees, 360.0);
}

TEST(Categorize, Examples)
{
    // 5% central hole in 512^2: 114x115 = 13110 px = 5.0%.
    MaskImage central(512, 512);
    for (std::size_t y = 199; y < 199 + 114; ++y)
        for (std::size_t x = 198; x < 198 + 115; ++x) central.at(y, x) = 0;
    const auto c = categorize(central, 50.0);
    ASSERT_TRUE(c.bin.has_value());
    EXPECT_EQ(*c.bin, 1);
    EXPECT_FALSE(c.touches_border);

    MaskImage edge(512, 512);
    edge.at(10, 256) = 0;
    EXPECT_TRUE(categorize(edge, 50.0).touches_border);
    EXPECT_FALSE(categorize(edge, 50.0).bin.has_value());

    EXPECT_FALSE(categorize(MaskImage(512, 512), 50.0).bin.has_value());
    EXPECT_EQ(categorize(MaskImage(512, 512), 50.0).ratio, 0.0);
}

TEST(Categorize, BinEdgesAreExact)
{
    EXPECT_FALSE(ratio_bin(1, 100).has_value());
    EXPECT_EQ(ratio_bin(2, 100), 1);
    EXPECT_EQ(ratio_bin(10, 100), 1);
    EXPECT_EQ(ratio_bin(11, 100), 2);
    EXPECT_EQ(ratio_bin(60, 100), 6);
    EXPECT_FALSE(ratio_bin(61, 100).has_value());
    EXPECT_FALSE(ratio_bin(100, 100).has_value());

    // Pixel at distance exactly 50 is outside the margin; 49 is inside.
    MaskImage m(512, 512);
    m.at(50, 256) = 0;
    EXPECT_FALSE(categorize(m, 50.0).touches_border);
    m.at(256, 461) = 0; // 511 - 461 = 50
    EXPECT_FALSE(categorize(m, 50.0).touches_border);
    m.at(256, 462) = 0;
    EXPECT_TRUE(categorize(m, 50.0).touches_border);
}

TEST(Categorize, AgreesWithBruteForceOnRandomMasks)
{
    for (std::uint64_t s = 0; s < 40; ++s) {
        const auto m = synth_raw_mask(64, s);
        const double margin = default_margin(64);
        EXPECT_EQ(categorize(m, margin).touches_border, oracle_touches(m, margin)) << s;
    }
}

TEST(Benchmark, DeskBenchmarkIsSelfConsistent)
{
    BenchmarkSpec spec;
    spec.size = 128;
    spec.per_cell = 10;
    spec.seed = 2024;
    const auto b = build_benchmark(spec);
    ASSERT_EQ(b.entries.size(), 120u);
    std::map<int, int> per_cell;
    const double margin = spec.border_margin();
    EXPECT_DOUBLE_EQ(margin, 12.5);
    for (const auto& e : b.entries) {
        const auto c = categorize(e.mask, margin);
        ASSERT_TRUE(c.bin.has_value()) << e.path;
        EXPECT_EQ(*c.bin, e.bin) << e.path;
        EXPECT_EQ(c.touches_border, e.border) << e.path;
        EXPECT_EQ(oracle_touches(e.mask, margin), e.border) << e.path;
        ++per_cell[cell_index(e.bin, e.border)];
    }
    EXPECT_EQ(per_cell.size(), 12u);
    for (const auto& [cell, n] : per_cell) EXPECT_EQ(n, 10) << cell;
}

TEST(Benchmark, RegenerationIsIdenticalAndRoundTripsThroughDisk)
{
    BenchmarkSpec spec;
    spec.size = 64;
    spec.per_cell = 2;
    spec.seed = 5;
    const auto a = build_benchmark(spec);
    const auto b = build_benchmark(spec);
    EXPECT_EQ(a.manifest(), b.manifest());
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].mask, b.entries[i].mask);

    const auto dir = scratch("bench");
    a.write(dir);
    const auto back = MaskBenchmark::read(dir);
    ASSERT_EQ(back.entries.size(), a.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].mask, a.entries[i].mask);
        EXPECT_EQ(back.entries[i].seed, a.entries[i].seed);
        EXPECT_EQ(back.entries[i].bin, a.entries[i].bin);
    }
    EXPECT_EQ(back.manifest(), a.manifest());

    spec.seed = 6;
    EXPECT_NE(build_benchmark(spec).manifest(), a.manifest());
}

TEST(Benchmark, ExhaustionNamesTheCell)
{
    BenchmarkSpec spec;
    spec.size = 64;
    spec.per_cell = 1;
    spec.margin = 15.0; // interior 34 px: bin 6 no-border cannot fit 0.6 of the image
    spec.max_attempts_per_mask = 3;
    try {
        build_benchmark(spec);
        FAIL() << "expected exhaustion";
    } catch (const GenerationExhaustedError& e) {
        EXPECT_NE(std::string(e.what()).find("bin"), std::string::npos);
    }
}

TEST(Benchmark, ReadRejectsMalformedManifest)
{
    const auto dir = scratch("badmanifest");
    EXPECT_THROW(MaskBenchmark::read(dir), LoadError);
    std::ofstream(dir / "manifest.txt") << "a.png 0.1 9 0 1\n";
    EXPECT_THROW(MaskBenchmark::read(dir), LoadError);
}
