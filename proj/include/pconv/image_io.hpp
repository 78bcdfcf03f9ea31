#pragma once

// 8-bit PNG reading/writing and conversion to [0,1] tensors.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pconv/core/tensor.hpp"

namespace pconv {

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 3;
    std::vector<std::uint8_t> data;

    Image8() = default;
    Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), data(w * h * c, fill)
    {
    }

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
    bool operator==(const Image8&) const = default;
};

/// Reads any PNG as gray (1 channel) or RGB (3 channels); alpha is
/// composited onto black, palettes expanded and 16-bit samples reduced.
inline Image8 read_png(const std::filesystem::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw LoadError("cannot read PNG '" + path.string() + "': " + image.message);
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 img(image.width, image.height, color ? 3 : 1);
    if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw LoadError("corrupt PNG '" + path.string() + "': " + image.message);
    }
    return img;
}

inline void write_png(const std::filesystem::path& path, const Image8& img)
{
    if (img.channels != 1 && img.channels != 3) {
        throw ArgumentError("write_png: only gray or RGB images are supported");
    }
    if (img.data.size() != img.width * img.height * img.channels || img.width == 0 || img.height == 0) {
        throw DimensionError("write_png: image buffer does not match its dimensions");
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
        throw Error("cannot write '" + path.string() + "': " + image.message);
    }
}

/// (1, 3, H, W) tensor in [0,1]; gray images are replicated to 3 channels.
template <std::floating_point T>
Tensor4<T> image_to_tensor(const Image8& img)
{
    Tensor4<T> t({1, 3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src_c = img.channels == 1 ? 0 : c;
        T* p = t.plane(0, c);
        for (std::size_t i = 0; i < img.width * img.height; ++i) {
            p[i] = static_cast<T>(img.data[i * img.channels + src_c]) / T(255);
        }
    }
    return t;
}

/// Clamps to [0,1] and rounds to 8 bits. Uses batch item `n`, 1 or 3 channels.
template <std::floating_point T>
Image8 tensor_to_image(const Tensor4<T>& t, std::size_t n = 0)
{
    const Shape s = t.shape();
    if (s.c != 1 && s.c != 3) {
        throw DimensionError("tensor_to_image: expected 1 or 3 channels, got " + s.str());
    }
    Image8 img(s.w, s.h, s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
        const T* p = t.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
            const double v = std::clamp(static_cast<double>(p[i]), 0.0, 1.0);
            img.data[i * s.c + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return img;
}

/// Crops the central square and resamples it to size x size: box averaging
/// when shrinking, bilinear when enlarging.
inline Image8 center_crop_resize(const Image8& img, std::size_t size)
{
    if (img.width == 0 || img.height == 0 || size == 0) {
        throw ArgumentError("center_crop_resize: empty image or target");
    }
    const std::size_t side = std::min(img.width, img.height);
    const std::size_t x0 = (img.width - side) / 2;
    const std::size_t y0 = (img.height - side) / 2;
    Image8 out(size, size, img.channels);
    const double scale = static_cast<double>(side) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                double v = 0.0;
                if (scale >= 1.0) {
                    const auto ya = static_cast<std::size_t>(std::floor(static_cast<double>(y) * scale));
                    const auto xa = static_cast<std::size_t>(std::floor(static_cast<double>(x) * scale));
                    const std::size_t yb =
                        std::max(ya + 1, std::min(side, static_cast<std::size_t>(std::ceil((y + 1) * scale))));
                    const std::size_t xb =
                        std::max(xa + 1, std::min(side, static_cast<std::size_t>(std::ceil((x + 1) * scale))));
                    double acc = 0.0;
                    for (std::size_t yy = ya; yy < yb; ++yy) {
                        for (std::size_t xx = xa; xx < xb; ++xx) {
                            acc += img.at(y0 + yy, x0 + xx, c);
                        }
                    }
                    v = acc / static_cast<double>((yb - ya) * (xb - xa));
                } else {
                    const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
                    const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
                    const auto iy = static_cast<std::size_t>(sy);
                    const auto ix = static_cast<std::size_t>(sx);
                    const std::size_t jy = std::min(iy + 1, side - 1);
                    const std::size_t jx = std::min(ix + 1, side - 1);
                    const double fy = sy - static_cast<double>(iy);
                    const double fx = sx - static_cast<double>(ix);
                    v = (1 - fy) * ((1 - fx) * img.at(y0 + iy, x0 + ix, c) + fx * img.at(y0 + iy, x0 + jx, c)) +
                        fy * ((1 - fx) * img.at(y0 + jy, x0 + ix, c) + fx * img.at(y0 + jy, x0 + jx, c));
                }
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

} // namespace pconv
