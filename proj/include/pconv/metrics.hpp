#pragma once

// Per-image quality metrics on [0,1] images: l1 error (%), PSNR, SSIM.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "pconv/core/tensor.hpp"

namespace pconv {

/// PSNR above this is printed as this value in text reports.
inline constexpr double psnr_text_cap = 99.0;

namespace detail {

    inline void require_item(const Shape& a, const Shape& b, std::size_t n, const char* what)
    {
        require_same_shape(a, b, what);
        if (n >= a.n) {
            throw ArgumentError(std::string(what) + ": batch index out of range");
        }
    }

} // namespace detail

/// 100 * mean |out - gt| over batch item `n`. With `region` (1-channel or
/// C-channel, nonzero = counted) only those pixels contribute.
template <std::floating_point T>
double l1_percent(const Tensor4<T>& out, const Tensor4<T>& gt, std::size_t n = 0, const Tensor4<T>* region = nullptr)
{
    detail::require_item(out.shape(), gt.shape(), n, "l1_percent");
    const Shape s = out.shape();
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < s.c; ++c) {
        const T* a = out.plane(n, c);
        const T* b = gt.plane(n, c);
        const T* r = region ? region->plane(n, region->shape().c == 1 ? 0 : c) : nullptr;
        for (std::size_t i = 0; i < s.plane(); ++i) {
            if (r && r[i] == T(0)) {
                continue;
            }
            acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
            ++count;
        }
    }
    return count == 0 ? 0.0 : 100.0 * acc / static_cast<double>(count);
}

template <std::floating_point T>
double mean_squared_error(const Tensor4<T>& out, const Tensor4<T>& gt, std::size_t n = 0)
{
    detail::require_item(out.shape(), gt.shape(), n, "mse");
    const Shape s = out.shape();
    const std::size_t per = s.c * s.plane();
    const T* a = out.plane(n, 0);
    const T* b = gt.plane(n, 0);
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(per);
}

/// 10 log10(1 / MSE) with peak 1; +infinity when the images are identical.
template <std::floating_point T>
double psnr(const Tensor4<T>& out, const Tensor4<T>& gt, std::size_t n = 0)
{
    const double mse = mean_squared_error(out, gt, n);
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

namespace detail {

    inline std::vector<double> gaussian_window(std::size_t size, double sigma)
    {
        std::vector<double> g(size);
        const double mid = (static_cast<double>(size) - 1.0) / 2.0;
        double sum = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            const double d = static_cast<double>(i) - mid;
            g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += g[i];
        }
        for (auto& v : g) {
            v /= sum;
        }
        return g;
    }

    /// Separable "valid" filtering: output is (h - k + 1) x (w - k + 1).
    inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                            const std::vector<double>& g)
    {
        const std::size_t k = g.size();
        const std::size_t ow = w - k + 1;
        const std::size_t oh = h - k + 1;
        std::vector<double> rows(h * ow, 0.0);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    acc += g[j] * img[y * w + x + j];
                }
                rows[y * ow + x] = acc;
            }
        }
        std::vector<double> out(oh * ow, 0.0);
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    acc += g[j] * rows[(y + j) * ow + x];
                }
                out[y * ow + x] = acc;
            }
        }
        return out;
    }

    template <std::floating_point T>
    std::vector<double> grayscale(const Tensor4<T>& t, std::size_t n)
    {
        const Shape s = t.shape();
        std::vector<double> g(s.plane(), 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = t.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                g[i] += static_cast<double>(p[i]);
            }
        }
        for (auto& v : g) {
            v /= static_cast<double>(s.c);
        }
        return g;
    }

} // namespace detail

/// Mean SSIM over all full windows of the channel-mean grayscale images.
template <std::floating_point T>
double ssim(const Tensor4<T>& out, const Tensor4<T>& gt, std::size_t n = 0, const SsimParams& p = {})
{
    detail::require_item(out.shape(), gt.shape(), n, "ssim");
    const Shape s = out.shape();
    if (s.h < p.window || s.w < p.window) {
        throw ArgumentError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is smaller than the " + std::to_string(p.window) + "-pixel window");
    }
    const auto x = detail::grayscale(out, n);
    const auto y = detail::grayscale(gt, n);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto g = detail::gaussian_window(p.window, p.sigma);
    const auto mx = detail::filter_valid(x, s.h, s.w, g);
    const auto my = detail::filter_valid(y, s.h, s.w, g);
    const auto mxx = detail::filter_valid(xx, s.h, s.w, g);
    const auto myy = detail::filter_valid(yy, s.h, s.w, g);
    const auto mxy = detail::filter_valid(xy, s.h, s.w, g);
    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mx.size());
}

} // namespace pconv
