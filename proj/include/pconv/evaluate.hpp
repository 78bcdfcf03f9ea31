#pragma once

// Benchmark evaluation: masks assigned to images without replacement,
// per-image metrics, per-cell means laid out as (ratio bin x border).

#include <algorithm>
#include <array>
#include <functional>
#include <iomanip>
#include <sstream>

#include "pconv/dataset.hpp"
#include "pconv/metrics.hpp"
#include "pconv/network.hpp"

namespace pconv {

enum class L1Region { full, hole };

struct EvalOptions {
    std::uint64_t seed = 0;
    bool composited = true;
    L1Region l1_region = L1Region::full;
};

struct EvalRecord {
    std::string mask;
    std::string image;
    int bin = 0;
    bool border = false;
    double l1 = 0.0;
    double psnr = 0.0; // may be +inf
    double ssim = 0.0;
};

struct CellStats {
    double l1 = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t count = 0;
};

inline constexpr std::size_t cell_count = 2 * ratio_bin_count;

struct MetricReport {
    std::array<CellStats, cell_count> cells{};
    std::vector<EvalRecord> records;
    std::vector<std::string> errors; // one per skipped item

    std::size_t evaluated() const { return records.size(); }
    std::size_t skipped() const { return errors.size(); }

    /// Cell means over the records, summed in record order. PSNR enters the
    /// mean capped at psnr_text_cap so perfect images do not produce +inf.
    void aggregate()
    {
        cells = {};
        for (const auto& r : records) {
            auto& c = cells[static_cast<std::size_t>(cell_index(r.bin, r.border))];
            c.l1 += r.l1;
            c.psnr += std::min(r.psnr, psnr_text_cap);
            c.ssim += r.ssim;
            ++c.count;
        }
        for (auto& c : cells) {
            if (c.count > 0) {
                const auto n = static_cast<double>(c.count);
                c.l1 /= n;
                c.psnr /= n;
                c.ssim /= n;
            }
        }
    }

    /// cell,metric,mean,count
    std::string to_csv() const
    {
        std::ostringstream os;
        os << "cell,metric,mean,count\n" << std::setprecision(10);
        for (int border = 0; border <= 1; ++border) {
            for (int bin = 1; bin <= ratio_bin_count; ++bin) {
                const auto& c = cells[static_cast<std::size_t>(cell_index(bin, border != 0))];
                const std::string name = cell_name(bin, border != 0);
                os << name << ",l1_percent," << c.l1 << ',' << c.count << '\n';
                os << name << ",psnr," << c.psnr << ',' << c.count << '\n';
                os << name << ",ssim," << c.ssim << ',' << c.count << '\n';
            }
        }
        return os.str();
    }

    /// Per-image log; cell means can be recomputed from it.
    std::string records_csv() const
    {
        std::ostringstream os;
        os << "mask,image,bin,border,l1_percent,psnr,ssim\n" << std::setprecision(17);
        for (const auto& r : records) {
            os << r.mask << ',' << r.image << ',' << r.bin << ',' << (r.border ? 1 : 0) << ',' << r.l1 << ','
               << std::min(r.psnr, psnr_text_cap) << ',' << r.ssim << '\n';
        }
        return os.str();
    }

    /// Metrics as rows, ratio bins as columns, N/B sub-columns.
    std::string to_text() const
    {
        std::ostringstream os;
        os << std::left << std::setw(10) << "";
        for (int bin = 1; bin <= ratio_bin_count; ++bin) {
            std::ostringstream head;
            head << '(' << (bin == 1 ? "0.01" : "0." + std::to_string(bin - 1)) << ",0." << bin << ']';
            os << std::setw(18) << head.str();
        }
        os << '\n' << std::setw(10) << "";
        for (int bin = 1; bin <= ratio_bin_count; ++bin) {
            os << std::setw(9) << "N" << std::setw(9) << "B";
        }
        os << '\n';
        auto row = [&](const char* name, auto field, int precision) {
            os << std::setw(10) << name;
            for (int bin = 1; bin <= ratio_bin_count; ++bin) {
                for (int border = 0; border <= 1; ++border) {
                    const auto& c = cells[static_cast<std::size_t>(cell_index(bin, border != 0))];
                    std::ostringstream v;
                    if (c.count == 0) {
                        v << '-';
                    } else {
                        v << std::fixed << std::setprecision(precision) << field(c);
                    }
                    os << std::setw(9) << v.str();
                }
            }
            os << '\n';
        };
        row("l1(%)", [](const CellStats& c) { return c.l1; }, 2);
        row("PSNR", [](const CellStats& c) { return c.psnr; }, 2);
        row("SSIM", [](const CellStats& c) { return c.ssim; }, 3);
        row("count", [](const CellStats& c) { return static_cast<double>(c.count); }, 0);
        return os.str();
    }
};

/// Maps (holed image, 1-channel mask) to a raw network output.
template <std::floating_point T>
using Predictor = std::function<Tensor4<T>(const Tensor4<T>&, const Tensor4<T>&)>;

template <std::floating_point T>
Predictor<T> network_predictor(const Network<T>& net)
{
    return [&net](const Tensor4<T>& image, const Tensor4<T>& mask) { return net.infer(image, mask); };
}

/// Zeroes hole pixels of a (1, C, H, W) image under a 1-channel mask.
template <std::floating_point T>
Tensor4<T> apply_holes(const Tensor4<T>& image, const Tensor4<T>& mask_in)
{
    const Tensor4<T> mask = replicate_mask(mask_in, image.shape().c);
    require_same_shape(image.shape(), mask.shape(), "apply_holes");
    Tensor4<T> out(image.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = mask[i] != T(0) ? image[i] : T(0);
    }
    return out;
}

/// Each benchmark mask is paired with an image drawn without replacement
/// (reshuffled when the images run out). Predictions are clamped to [0, 1]. Items whose image and mask sizes
/// differ are skipped and reported in `errors`.
template <std::floating_point T>
MetricReport evaluate_benchmark(const Predictor<T>& predict, const std::vector<NamedImage<T>>& images,
                                const MaskBenchmark& bench, const EvalOptions& opt = {})
{
    if (images.empty()) {
        throw ArgumentError("evaluate_benchmark: no images");
    }
    MetricReport report;
    EpochSampler sampler(images.size(), opt.seed);
    for (const auto& e : bench.entries) {
        const NamedImage<T>& img = images[sampler.next()];
        const Shape s = img.image.shape();
        if (s.h != e.mask.height || s.w != e.mask.width) {
            report.errors.push_back(e.path + " vs " + img.name + ": mask is " + std::to_string(e.mask.height) + "x" +
                                    std::to_string(e.mask.width) + ", image " + std::to_string(s.h) + "x" +
                                    std::to_string(s.w));
            continue;
        }
        const Tensor4<T> mask = e.mask.template to_tensor<T>();
        Tensor4<T> out = predict(apply_holes(img.image, mask), mask);
        // Scored as exported: clamped to the displayable range.
        for (auto& v : out.values()) {
            v = std::clamp(v, T(0), T(1));
        }
        if (opt.composited) {
            out = composite(out, img.image, mask);
        }
        EvalRecord r;
        r.mask = e.path;
        r.image = img.name;
        r.bin = e.bin;
        r.border = e.border;
        if (opt.l1_region == L1Region::hole) {
            Tensor4<T> hole(mask.shape());
            for (std::size_t i = 0; i < hole.size(); ++i) {
                hole[i] = T(1) - mask[i];
            }
            r.l1 = l1_percent(out, img.image, 0, &hole);
        } else {
            r.l1 = l1_percent(out, img.image);
        }
        r.psnr = psnr(out, img.image);
        r.ssim = ssim(out, img.image);
        report.records.push_back(std::move(r));
    }
    report.aggregate();
    return report;
}

} // namespace pconv
