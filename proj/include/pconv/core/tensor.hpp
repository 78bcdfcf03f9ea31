#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pconv/core/error.hpp"

namespace pconv {

/// (batch, channel, height, width) extents of a rank-4 tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t count() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const
    {
        std::ostringstream os;
        os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
        return os.str();
    }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b) {
        throw DimensionError(std::string(what) + ": shape " + a.str() + " does not match " + b.str());
    }
}

/// Dense rank-4 array in row-major NCHW order.
template <std::floating_point T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {}

    Tensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data))
    {
        if (data_.size() != shape_.count()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_.str());
        }
    }

    /// Construction from untrusted data: rejects NaN and infinities.
    static Tensor4 from_external(Shape shape, std::vector<T> data)
    {
        Tensor4 t(shape, std::move(data));
        for (T v : t.data_) {
            if (!std::isfinite(v)) {
                throw ArgumentError("tensor input contains a non-finite value");
            }
        }
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept
    {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept
    {
        return data_[index(n, c, y, x)];
    }
    T operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept
    {
        return data_[index(n, c, y, x)];
    }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + index(n, c, 0, 0); }
    const T* plane(std::size_t n, std::size_t c) const noexcept { return data_.data() + index(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <std::floating_point U>
    Tensor4<U> cast() const
    {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor4<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

using Tensor4d = Tensor4<double>;
using Tensor4f = Tensor4<float>;

template <std::floating_point T>
Tensor4<T>& operator+=(Tensor4<T>& a, const Tensor4<T>& b)
{
    require_same_shape(a.shape(), b.shape(), "tensor add");
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] += b[i];
    }
    return a;
}

template <std::floating_point T>
Tensor4<T> operator-(const Tensor4<T>& a, const Tensor4<T>& b)
{
    require_same_shape(a.shape(), b.shape(), "tensor subtract");
    Tensor4<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return out;
}

template <std::floating_point T>
Tensor4<T> scaled(const Tensor4<T>& a, T factor)
{
    Tensor4<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * factor;
    }
    return out;
}

/// out += factor * b, elementwise.
template <std::floating_point T>
void axpy(Tensor4<T>& out, T factor, const Tensor4<T>& b)
{
    require_same_shape(out.shape(), b.shape(), "axpy");
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += factor * b[i];
    }
}

template <std::floating_point T>
T sum(const Tensor4<T>& a)
{
    T acc = 0;
    for (T v : a.values()) {
        acc += v;
    }
    return acc;
}

template <std::floating_point T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b)
{
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

/// Copies batch item `n` into a 1-item tensor.
template <std::floating_point T>
Tensor4<T> batch_item(const Tensor4<T>& t, std::size_t n)
{
    const Shape s = t.shape();
    Tensor4<T> out({1, s.c, s.h, s.w});
    std::copy_n(t.plane(n, 0), s.c * s.plane(), out.plane(0, 0));
    return out;
}

/// Stacks equally shaped 1-item tensors along the batch axis.
template <std::floating_point T>
Tensor4<T> stack_batch(const std::vector<Tensor4<T>>& items)
{
    if (items.empty()) {
        return {};
    }
    Shape s = items.front().shape();
    const std::size_t per = s.n * s.c * s.plane();
    Tensor4<T> out({s.n * items.size(), s.c, s.h, s.w});
    for (std::size_t i = 0; i < items.size(); ++i) {
        require_same_shape(items[i].shape(), s, "stack_batch");
        std::copy_n(items[i].values().data(), per, out.values().data() + i * per);
    }
    return out;
}

} // namespace pconv
