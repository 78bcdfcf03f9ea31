#pragma once

// Irregular hole masks: synthetic streak/blob generation, augmentation
// (dilation, rotation, crop), ratio/border categorization and the
// categorized benchmark.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pconv/core/random.hpp"
#include "pconv/core/tensor.hpp"
#include "pconv/image_io.hpp"

namespace pconv {

/// Binary grid, 1 = valid, 0 = hole.
struct MaskImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> valid;

    MaskImage() = default;
    MaskImage(std::size_t h, std::size_t w, std::uint8_t fill = 1) : height(h), width(w), valid(h * w, fill) {}

    std::uint8_t at(std::size_t y, std::size_t x) const { return valid[y * width + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return valid[y * width + x]; }

    std::size_t hole_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0)); }
    double hole_ratio() const
    {
        return valid.empty() ? 0.0 : static_cast<double>(hole_count()) / static_cast<double>(valid.size());
    }
    bool operator==(const MaskImage&) const = default;

    template <std::floating_point T>
    Tensor4<T> to_tensor() const
    {
        Tensor4<T> t({1, 1, height, width});
        for (std::size_t i = 0; i < valid.size(); ++i) {
            t[i] = valid[i] ? T(1) : T(0);
        }
        return t;
    }

    /// 0 = hole, 255 = valid.
    Image8 to_image() const
    {
        Image8 img(width, height, 1);
        for (std::size_t i = 0; i < valid.size(); ++i) {
            img.data[i] = valid[i] ? 255 : 0;
        }
        return img;
    }

    /// Gray (or RGB, first channel) image; values >= 128 are valid.
    static MaskImage from_image(const Image8& img)
    {
        MaskImage m(img.height, img.width);
        for (std::size_t i = 0; i < m.valid.size(); ++i) {
            m.valid[i] = img.data[i * img.channels] >= 128 ? 1 : 0;
        }
        return m;
    }

    static MaskImage load(const std::filesystem::path& path) { return from_image(read_png(path)); }
    void save(const std::filesystem::path& path) const { write_png(path, to_image()); }
};

namespace detail {

    /// Paints holes and keeps a running hole count.
    class HolePainter {
    public:
        explicit HolePainter(MaskImage& m) : m_(m), holes_(m.hole_count()) {}

        std::size_t holes() const noexcept { return holes_; }
        double ratio() const { return static_cast<double>(holes_) / static_cast<double>(m_.valid.size()); }

        void set(std::ptrdiff_t y, std::ptrdiff_t x)
        {
            if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(m_.height) ||
                x >= static_cast<std::ptrdiff_t>(m_.width)) {
                return;
            }
            auto& v = m_.valid[static_cast<std::size_t>(y) * m_.width + static_cast<std::size_t>(x)];
            if (v) {
                v = 0;
                ++holes_;
            }
        }

        /// Round-brush segment of the given radius.
        void segment(double y0, double x0, double y1, double x1, double radius)
        {
            const auto ylo = static_cast<std::ptrdiff_t>(std::floor(std::min(y0, y1) - radius));
            const auto yhi = static_cast<std::ptrdiff_t>(std::ceil(std::max(y0, y1) + radius));
            const auto xlo = static_cast<std::ptrdiff_t>(std::floor(std::min(x0, x1) - radius));
            const auto xhi = static_cast<std::ptrdiff_t>(std::ceil(std::max(x0, x1) + radius));
            const double dy = y1 - y0;
            const double dx = x1 - x0;
            const double len2 = dy * dy + dx * dx;
            for (std::ptrdiff_t y = ylo; y <= yhi; ++y) {
                for (std::ptrdiff_t x = xlo; x <= xhi; ++x) {
                    double t = len2 > 0 ? ((y - y0) * dy + (x - x0) * dx) / len2 : 0.0;
                    t = std::clamp(t, 0.0, 1.0);
                    const double py = y0 + t * dy - static_cast<double>(y);
                    const double px = x0 + t * dx - static_cast<double>(x);
                    if (py * py + px * px <= radius * radius) {
                        set(y, x);
                    }
                }
            }
        }

        void ellipse(double cy, double cx, double ry, double rx, double angle)
        {
            const double r = std::max(ry, rx);
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            for (auto y = static_cast<std::ptrdiff_t>(std::floor(cy - r)); y <= static_cast<std::ptrdiff_t>(cy + r); ++y) {
                for (auto x = static_cast<std::ptrdiff_t>(std::floor(cx - r)); x <= static_cast<std::ptrdiff_t>(cx + r);
                     ++x) {
                    const double u = c * (x - cx) + s * (y - cy);
                    const double v = -s * (x - cx) + c * (y - cy);
                    if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) {
                        set(y, x);
                    }
                }
            }
        }

        /// Even-odd fill of a closed polygon given as (y, x) vertices.
        void polygon(const std::vector<std::pair<double, double>>& pts)
        {
            double ylo = pts[0].first, yhi = pts[0].first, xlo = pts[0].second, xhi = pts[0].second;
            for (const auto& [y, x] : pts) {
                ylo = std::min(ylo, y);
                yhi = std::max(yhi, y);
                xlo = std::min(xlo, x);
                xhi = std::max(xhi, x);
            }
            for (auto y = static_cast<std::ptrdiff_t>(std::floor(ylo)); y <= static_cast<std::ptrdiff_t>(yhi); ++y) {
                for (auto x = static_cast<std::ptrdiff_t>(std::floor(xlo)); x <= static_cast<std::ptrdiff_t>(xhi); ++x) {
                    bool inside = false;
                    for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
                        const auto [yi, xi] = pts[i];
                        const auto [yj, xj] = pts[j];
                        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
                            inside = !inside;
                        }
                    }
                    if (inside) {
                        set(y, x);
                    }
                }
            }
        }

    private:
        MaskImage& m_;
        std::size_t holes_;
    };

} // namespace detail

/// Random-walk streaks (thickness 3-30 px at 512 scale) mixed with ellipses
/// and polygons, painted until the hole ratio reaches `target_ratio`
/// (default: uniform in [0.015, 0.58]).
inline MaskImage synth_raw_mask(std::size_t size, std::uint64_t seed, std::optional<double> target_ratio = std::nullopt)
{
    const std::size_t height = size;
    const std::size_t width = size;
    if (size < 32) {
        throw ArgumentError("synth_raw_mask: size must be at least 32");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double target = target_ratio.value_or(uniform(0.015, 0.58));
    if (!(target > 0.0 && target < 1.0)) {
        throw ArgumentError("synth_raw_mask: target ratio must be in (0, 1)");
    }
    const double scale = static_cast<double>(std::min(height, width)) / 512.0;
    const double H = static_cast<double>(height);
    const double W = static_cast<double>(width);

    MaskImage m(height, width);
    detail::HolePainter paint(m);
    while (paint.ratio() < target) {
        const double kind = unit(rng);
        if (kind < 0.7) {
            double y = uniform(0, H);
            double x = uniform(0, W);
            double heading = uniform(0, 2 * std::numbers::pi);
            const double radius = std::max(0.75, uniform(3.0, 30.0) * scale / 2.0);
            const int steps = static_cast<int>(uniform(4, 13));
            for (int s = 0; s < steps && paint.ratio() < target; ++s) {
                heading += uniform(-1.2, 1.2);
                const double len = uniform(10.0, 60.0) * scale;
                double ny = y + len * std::sin(heading);
                double nx = x + len * std::cos(heading);
                // Reflect at the frame so streaks stay mostly inside.
                if (ny < 0 || ny >= H) {
                    heading = -heading;
                    ny = std::clamp(ny, 0.0, H - 1);
                }
                if (nx < 0 || nx >= W) {
                    heading = std::numbers::pi - heading;
                    nx = std::clamp(nx, 0.0, W - 1);
                }
                paint.segment(y, x, ny, nx, radius);
                y = ny;
                x = nx;
            }
        } else if (kind < 0.85) {
            paint.ellipse(uniform(0, H), uniform(0, W), uniform(5.0, 40.0) * scale + 1, uniform(5.0, 40.0) * scale + 1,
                          uniform(0, std::numbers::pi));
        } else {
            const double cy = uniform(0, H);
            const double cx = uniform(0, W);
            const int n = static_cast<int>(uniform(3, 9));
            std::vector<double> angles(static_cast<std::size_t>(n));
            for (auto& a : angles) {
                a = uniform(0, 2 * std::numbers::pi);
            }
            std::sort(angles.begin(), angles.end());
            std::vector<std::pair<double, double>> pts;
            for (double a : angles) {
                const double r = uniform(8.0, 45.0) * scale + 1;
                pts.emplace_back(cy + r * std::sin(a), cx + r * std::cos(a));
            }
            paint.polygon(pts);
        }
    }
    return m;
}

/// One 3x3 dilation of the hole region per iteration.
inline MaskImage dilate_holes(const MaskImage& m, std::size_t iterations)
{
    MaskImage cur = m;
    const auto H = static_cast<std::ptrdiff_t>(m.height);
    const auto W = static_cast<std::ptrdiff_t>(m.width);
    for (std::size_t it = 0; it < iterations; ++it) {
        MaskImage next = cur;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t x = 0; x < W; ++x) {
                if (cur.valid[static_cast<std::size_t>(y * W + x)] != 0) {
                    continue;
                }
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const auto yy = y + dy;
                        const auto xx = x + dx;
                        if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
                            next.valid[static_cast<std::size_t>(yy * W + xx)] = 0;
                        }
                    }
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

/// Nearest-neighbour rotation about the grid centre; pixels mapped from
/// outside the frame are valid.
inline MaskImage rotate_mask(const MaskImage& m, double degrees)
{
    MaskImage out(m.height, m.width);
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cy = (static_cast<double>(m.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(m.width) - 1.0) / 2.0;
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            // Inverse mapping: rotate the destination offset by -angle.
            const double sy = std::round(cy + (-s * dx + c * dy));
            const double sx = std::round(cx + (c * dx + s * dy));
            if (sy >= 0 && sx >= 0 && sy < static_cast<double>(m.height) && sx < static_cast<double>(m.width)) {
                out.at(y, x) = m.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        }
    }
    return out;
}

inline MaskImage crop_mask(const MaskImage& m, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w)
{
    if (y0 + h > m.height || x0 + w > m.width) {
        throw ArgumentError("crop_mask: window exceeds the mask");
    }
    MaskImage out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(m.valid.begin() + static_cast<std::ptrdiff_t>((y0 + y) * m.width + x0), w,
                    out.valid.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return out;
}

struct AugmentParams {
    std::size_t dilation = 0;
    double rotation_degrees = 0.0;
    std::size_t crop_y = 0;
    std::size_t crop_x = 0;
};

/// Dilation in [0, max_dilation], rotation uniform in [0, 360), crop offset
/// uniform over the valid range for an `out` x `out` window.
inline AugmentParams sample_augment(const MaskImage& m, std::size_t out, std::size_t max_dilation, std::uint64_t seed)
{
    if (out > m.height || out > m.width) {
        throw ArgumentError("augment: target size exceeds the mask");
    }
    std::mt19937_64 rng(seed);
    AugmentParams p;
    p.dilation = std::uniform_int_distribution<std::size_t>(0, max_dilation)(rng);
    p.rotation_degrees = std::uniform_real_distribution<double>(0.0, 360.0)(rng);
    p.crop_y = std::uniform_int_distribution<std::size_t>(0, m.height - out)(rng);
    p.crop_x = std::uniform_int_distribution<std::size_t>(0, m.width - out)(rng);
    return p;
}

inline MaskImage apply_augment(const MaskImage& m, const AugmentParams& p, std::size_t out)
{
    return crop_mask(rotate_mask(dilate_holes(m, p.dilation), p.rotation_degrees), p.crop_y, p.crop_x, out, out);
}

/// Random dilation (0-9 iterations at 512 scale), rotation and crop to out x out.
inline MaskImage augment(const MaskImage& m, std::uint64_t seed, std::size_t out)
{
    const auto max_dil = static_cast<std::size_t>(std::lround(9.0 * static_cast<double>(out) / 512.0));
    return apply_augment(m, sample_augment(m, out, max_dil, seed), out);
}

// ---------------------------------------------------------------------------
// Categorization

inline constexpr int ratio_bin_count = 6;

/// Default border margin: 50 px at 512, proportional otherwise.
inline double default_margin(std::size_t size) { return 50.0 * static_cast<double>(size) / 512.0; }

struct MaskCategory {
    std::optional<int> bin; // 1..6 for ratio in (0.01, 0.1], (0.1, 0.2], ..., (0.5, 0.6]
    bool touches_border = false;
    double ratio = 0.0;
};

/// Bin from exact integer comparisons of holes / total.
inline std::optional<int> ratio_bin(std::size_t holes, std::size_t total)
{
    if (holes * 100 <= total) {
        return std::nullopt;
    }
    for (int k = 1; k <= ratio_bin_count; ++k) {
        if (holes * 10 <= static_cast<std::size_t>(k) * total) {
            return k;
        }
    }
    return std::nullopt;
}

inline MaskCategory categorize(const MaskImage& m, double margin)
{
    MaskCategory cat;
    const std::size_t holes = m.hole_count();
    cat.ratio = m.hole_ratio();
    cat.bin = ratio_bin(holes, m.valid.size());
    for (std::size_t y = 0; y < m.height && !cat.touches_border; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            if (m.at(y, x) != 0) {
                continue;
            }
            const std::size_t d = std::min({y, x, m.height - 1 - y, m.width - 1 - x});
            if (static_cast<double>(d) < margin) {
                cat.touches_border = true;
                break;
            }
        }
    }
    return cat;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkSpec {
    std::size_t size = 512;
    std::size_t per_cell = 1000;
    std::optional<double> margin; // default_margin(size) when unset
    std::uint64_t seed = 0;
    std::size_t max_attempts_per_mask = 400;

    double border_margin() const { return margin.value_or(default_margin(size)); }
};

struct BenchmarkEntry {
    std::string path; // file name relative to the benchmark directory
    MaskImage mask;
    double ratio = 0.0;
    int bin = 0;
    bool border = false;
    std::uint64_t seed = 0;
};

/// Cell index in [0, 12): bins 1..6 without border, then with border.
inline int cell_index(int bin, bool border) { return (border ? ratio_bin_count : 0) + bin - 1; }

inline std::string cell_name(int bin, bool border)
{
    return "bin" + std::to_string(bin) + (border ? "_B" : "_N");
}

/// One candidate mask for a cell, fully determined by (size, margin, bin,
/// border, seed). No-border candidates are generated in the interior
/// square and embedded, so they never have holes within the margin.
inline MaskImage benchmark_candidate(std::size_t size, double margin, int bin, bool border, std::uint64_t seed)
{
    std::mt19937_64 rng(derive_seed(seed, {0}));
    const double lo = 0.1 * (bin - 1) + (bin == 1 ? 0.01 : 0.0);
    const double hi = 0.1 * bin;
    const double target = std::uniform_real_distribution<double>(lo, hi)(rng);

    const auto inset = border ? std::size_t{0} : static_cast<std::size_t>(std::ceil(margin));
    if (2 * inset + 32 > size) {
        throw ArgumentError("benchmark: margin leaves no interior to place holes in");
    }
    const std::size_t inner = size - 2 * inset;
    // Raw masks are generated with slack around the output window so that
    // rotation and cropping have material to work with.
    const std::size_t raw = inner + inner / 4;
    const double area = static_cast<double>(size * size) / static_cast<double>(inner * inner);
    const auto max_dil = static_cast<std::size_t>(std::lround(9.0 * static_cast<double>(size) / 512.0));

    MaskImage base = synth_raw_mask(raw, derive_seed(seed, {1}), std::min(0.95, target * area * 0.8));
    const AugmentParams p = sample_augment(base, inner, max_dil, derive_seed(seed, {2}));
    MaskImage aug = apply_augment(base, p, inner);
    if (inset == 0) {
        return aug;
    }
    MaskImage full(size, size);
    for (std::size_t y = 0; y < inner; ++y) {
        std::copy_n(aug.valid.begin() + static_cast<std::ptrdiff_t>(y * inner), inner,
                    full.valid.begin() + static_cast<std::ptrdiff_t>((y + inset) * size + inset));
    }
    return full;
}

struct MaskBenchmark {
    BenchmarkSpec spec;
    std::vector<BenchmarkEntry> entries;

    std::string manifest() const
    {
        std::ostringstream os;
        for (const auto& e : entries) {
            os << e.path << ' ' << std::fixed << std::setprecision(6) << e.ratio << ' ' << e.bin << ' '
               << (e.border ? 1 : 0) << ' ' << e.seed << '\n';
        }
        return os.str();
    }

    void write(const std::filesystem::path& dir) const
    {
        std::filesystem::create_directories(dir);
        for (const auto& e : entries) {
            e.mask.save(dir / e.path);
        }
        std::ofstream os(dir / "manifest.txt");
        os << manifest();
        if (!os) {
            throw Error("cannot write manifest in '" + dir.string() + "'");
        }
    }

    static MaskBenchmark read(const std::filesystem::path& dir)
    {
        std::ifstream is(dir / "manifest.txt");
        if (!is) {
            throw LoadError("no manifest.txt in '" + dir.string() + "'");
        }
        MaskBenchmark b;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) {
                continue;
            }
            std::istringstream ls(line);
            BenchmarkEntry e;
            int border = 0;
            if (!(ls >> e.path >> e.ratio >> e.bin >> border >> e.seed) || e.bin < 1 || e.bin > ratio_bin_count) {
                throw LoadError("manifest line " + std::to_string(lineno) + " is malformed");
            }
            e.border = border != 0;
            e.mask = MaskImage::load(dir / e.path);
            b.entries.push_back(std::move(e));
        }
        if (!b.entries.empty()) {
            b.spec.size = b.entries.front().mask.height;
        }
        return b;
    }
};

/// Rejection-samples candidates per cell until each of the 12 cells holds
/// `per_cell` masks. Each cell uses its own seed stream, so cells can be
/// generated in any order with the same result.
inline MaskBenchmark build_benchmark(const BenchmarkSpec& spec)
{
    if (spec.size < 32 || spec.per_cell == 0) {
        throw ArgumentError("benchmark: size must be >= 32 and per_cell positive");
    }
    MaskBenchmark b;
    b.spec = spec;
    const double margin = spec.border_margin();
    for (int border = 0; border <= 1; ++border) {
        for (int bin = 1; bin <= ratio_bin_count; ++bin) {
            const int cell = cell_index(bin, border != 0);
            const std::size_t budget = spec.per_cell * spec.max_attempts_per_mask;
            std::size_t accepted = 0;
            for (std::size_t attempt = 0; accepted < spec.per_cell; ++attempt) {
                if (attempt >= budget) {
                    throw GenerationExhaustedError("benchmark cell " + cell_name(bin, border != 0) + " filled " +
                                                   std::to_string(accepted) + "/" + std::to_string(spec.per_cell) +
                                                   " after " + std::to_string(budget) + " attempts");
                }
                const std::uint64_t seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(cell), attempt});
                MaskImage m = benchmark_candidate(spec.size, margin, bin, border != 0, seed);
                const MaskCategory cat = categorize(m, margin);
                if (cat.bin != bin || cat.touches_border != (border != 0)) {
                    continue;
                }
                std::ostringstream name;
                name << cell_name(bin, border != 0) << '_' << std::setw(5) << std::setfill('0') << accepted << ".png";
                b.entries.push_back({name.str(), std::move(m), cat.ratio, bin, border != 0, seed});
                ++accepted;
            }
        }
    }
    return b;
}

} // namespace pconv
