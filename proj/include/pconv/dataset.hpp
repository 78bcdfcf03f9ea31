#pragma once

// Image folders, a procedural image generator for desk-scale experiments,
// and the training mask pool.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pconv/image_io.hpp"
#include "pconv/masks.hpp"
#include "pconv/superres.hpp"

namespace pconv {

template <std::floating_point T>
struct NamedImage {
    std::string name;
    Tensor4<T> image; // (1, 3, H, W) in [0,1]
};

/// PNG files directly inside `dir`, sorted by name.
inline std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) {
        throw LoadError("image folder '" + dir.string() + "' does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".png") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Loads every PNG, center-cropped and resized to size x size (size 0 keeps
/// the original). Unreadable files are skipped with a warning on `warn`.
template <std::floating_point T>
std::vector<NamedImage<T>> load_image_folder(const std::filesystem::path& dir, std::size_t size,
                                             std::ostream* warn = &std::cerr)
{
    std::vector<NamedImage<T>> out;
    for (const auto& f : list_png_files(dir)) {
        try {
            Image8 img = read_png(f);
            if (size != 0) {
                img = center_crop_resize(img, size);
            }
            out.push_back({f.filename().string(), image_to_tensor<T>(img)});
        } catch (const LoadError& e) {
            if (warn) {
                *warn << "warning: skipping " << e.what() << '\n';
            }
        }
    }
    return out;
}

/// Smooth two-colour gradient with low-frequency ripples, overlaid with a
/// few flat-coloured discs, rectangles and stripes.
inline Image8 synthetic_image(std::size_t size, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&] { return std::array<double, 3>{0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng)}; };
    const double s = static_cast<double>(size);

    const auto c0 = color();
    const auto c1 = color();
    const double angle = 2 * std::numbers::pi * u(rng);
    const double fy = (0.5 + 2.0 * u(rng)) * 2 * std::numbers::pi / s;
    const double fx = (0.5 + 2.0 * u(rng)) * 2 * std::numbers::pi / s;
    const double phase = 2 * std::numbers::pi * u(rng);
    const double ripple = 0.08 * u(rng);

    std::vector<double> px(size * size * 3);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double t = 0.5 + ((static_cast<double>(x) - s / 2) * std::cos(angle) +
                                    (static_cast<double>(y) - s / 2) * std::sin(angle)) /
                                       s;
            const double r = ripple * std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(x) + phase);
            for (std::size_t c = 0; c < 3; ++c) {
                px[(y * size + x) * 3 + c] = (1 - t) * c0[c] + t * c1[c] + r;
            }
        }
    }

    const int shapes = 2 + static_cast<int>(u(rng) * 4);
    for (int k = 0; k < shapes; ++k) {
        const auto col = color();
        const double kind = u(rng);
        const double cy = s * u(rng);
        const double cx = s * u(rng);
        const double a = s * (0.08 + 0.22 * u(rng));
        const double b = s * (0.08 + 0.22 * u(rng));
        const double period = s * (0.1 + 0.2 * u(rng));
        const double dir = std::numbers::pi * u(rng);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                bool inside = false;
                if (kind < 0.4) {
                    inside = dy * dy + dx * dx <= a * a;
                } else if (kind < 0.8) {
                    inside = std::abs(dy) <= a / 2 && std::abs(dx) <= b / 2;
                } else {
                    const double proj = dx * std::cos(dir) + dy * std::sin(dir);
                    inside = std::abs(dy) <= a && std::abs(dx) <= b &&
                             std::fmod(std::abs(proj), period) < period / 2;
                }
                if (inside) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        px[(y * size + x) * 3 + c] = col[c];
                    }
                }
            }
        }
    }

    Image8 img(size, size, 3);
    for (std::size_t i = 0; i < px.size(); ++i) {
        img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0));
    }
    return img;
}

/// Writes `count` synthetic images named img_00000.png, ... into `dir`.
inline void write_synthetic_folder(const std::filesystem::path& dir, std::size_t count, std::size_t size,
                                   std::uint64_t seed)
{
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < count; ++i) {
        std::ostringstream name;
        name << "img_" << std::setw(5) << std::setfill('0') << i << ".png";
        write_png(dir / name.str(), synthetic_image(size, derive_seed(seed, {i})));
    }
}

/// Training masks: either a synthetic pool (raw streak masks augmented down
/// to `size`), a folder of mask PNGs, or the super-resolution placement.
struct MaskSource {
    enum class Kind { synthetic, folder, superres };
    Kind kind = Kind::synthetic;
    std::filesystem::path folder;
    std::size_t sr_factor = 2;
    std::size_t pool_size = 512;

    /// "synthetic", "dir:<path>" or "superres:<K>".
    static MaskSource parse(const std::string& s)
    {
        MaskSource m;
        if (s == "synthetic") {
            return m;
        }
        if (s.rfind("dir:", 0) == 0) {
            m.kind = Kind::folder;
            m.folder = s.substr(4);
            return m;
        }
        if (s.rfind("superres:", 0) == 0) {
            m.kind = Kind::superres;
            try {
                m.sr_factor = static_cast<std::size_t>(std::stoul(s.substr(9)));
            } catch (const std::exception&) {
                throw ConfigError("mask source '" + s + "': factor is not a number");
            }
            if (m.sr_factor < 1) {
                throw ConfigError("mask source '" + s + "': factor must be at least 1");
            }
            return m;
        }
        throw ConfigError("unknown mask source '" + s + "' (expected synthetic, dir:<path> or superres:<K>)");
    }

    std::string str() const
    {
        switch (kind) {
        case Kind::folder:
            return "dir:" + folder.string();
        case Kind::superres:
            return "superres:" + std::to_string(sr_factor);
        default:
            return "synthetic";
        }
    }
};

inline std::vector<MaskImage> build_mask_pool(const MaskSource& src, std::size_t size, std::uint64_t seed)
{
    std::vector<MaskImage> pool;
    switch (src.kind) {
    case MaskSource::Kind::synthetic: {
        const std::size_t raw = std::max<std::size_t>(32, size + size / 4);
        for (std::size_t i = 0; i < src.pool_size; ++i) {
            const MaskImage base = synth_raw_mask(raw, derive_seed(seed, {i, 0}));
            pool.push_back(augment(base, derive_seed(seed, {i, 1}), size));
        }
        break;
    }
    case MaskSource::Kind::folder:
        for (const auto& f : list_png_files(src.folder)) {
            MaskImage m = MaskImage::load(f);
            if (m.height != size || m.width != size) {
                throw ConfigError("mask '" + f.string() + "' is " + std::to_string(m.height) + "x" +
                                  std::to_string(m.width) + ", expected " + std::to_string(size));
            }
            pool.push_back(std::move(m));
        }
        break;
    case MaskSource::Kind::superres: {
        const std::size_t k = src.sr_factor;
        if (size % k != 0) {
            throw ConfigError("image size " + std::to_string(size) + " is not a multiple of the SR factor");
        }
        const auto t = sr_mask<float>(1, size / k, size / k, k);
        MaskImage m(size, size);
        for (std::size_t i = 0; i < m.valid.size(); ++i) {
            m.valid[i] = t[i] != 0.0f ? 1 : 0;
        }
        pool.push_back(std::move(m));
        break;
    }
    }
    if (pool.empty()) {
        throw ConfigError("mask source " + src.str() + " produced no masks");
    }
    return pool;
}

/// Draws indices without replacement, reshuffling with a fresh derived seed
/// each time the range is exhausted.
class EpochSampler {
public:
    EpochSampler(std::size_t count, std::uint64_t seed) : count_(count), seed_(seed)
    {
        if (count == 0) {
            throw ArgumentError("EpochSampler: empty range");
        }
    }

    std::size_t next()
    {
        if (pos_ == order_.size()) {
            order_.resize(count_);
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(seed_, {epoch_++}));
            // Fisher-Yates with explicit draws: std::shuffle's use of the
            // engine is implementation-defined.
            for (std::size_t i = count_; i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng() % i);
                std::swap(order_[i - 1], order_[j]);
            }
            pos_ = 0;
        }
        return order_[pos_++];
    }

    std::uint64_t epoch() const noexcept { return epoch_; }

private:
    std::size_t count_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
};

} // namespace pconv
