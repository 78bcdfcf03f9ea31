#pragma once

// Inpainting loss terms and their gradients with respect to the raw network
// output. Every term is computed per image and averaged over the batch.

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "pconv/config.hpp"
#include "pconv/features.hpp"
#include "pconv/network.hpp"

namespace pconv {

struct LossWeights {
    double valid = 1.0;
    double hole = 6.0;
    double perceptual = 0.05;
    double style = 120.0;
    double tv = 0.1;

    static LossWeights read(const KeyValueConfig& kv)
    {
        LossWeights w;
        w.valid = kv.get_double("loss.valid", w.valid);
        w.hole = kv.get_double("loss.hole", w.hole);
        w.perceptual = kv.get_double("loss.perceptual", w.perceptual);
        w.style = kv.get_double("loss.style", w.style);
        w.tv = kv.get_double("loss.tv", w.tv);
        for (double v : {w.valid, w.hole, w.perceptual, w.style, w.tv}) {
            if (!std::isfinite(v) || v < 0.0) {
                throw ConfigError("loss weights must be finite and non-negative");
            }
        }
        return w;
    }
};

struct LossOptions {
    /// Drop the 1/(C*C) prefactor and keep only K_p inside the style norm.
    bool style_kp_only = false;
    /// 3x3 (8-connected) dilation for the TV region; false uses a 4-connected cross.
    bool tv_eight_connected = true;
    /// Skip the feature-space terms entirely (reported as 0).
    bool feature_terms = true;

    static LossOptions read(const KeyValueConfig& kv)
    {
        LossOptions o;
        o.style_kp_only = kv.get_bool("loss.style_kp_only", false);
        const std::string conn = kv.get_or("loss.tv_connectivity", "8");
        if (conn != "8" && conn != "4") {
            throw ConfigError("loss.tv_connectivity must be 4 or 8");
        }
        o.tv_eight_connected = conn == "8";
        return o;
    }
};

struct LossReport {
    double valid = 0.0;
    double hole = 0.0;
    double perceptual = 0.0;
    double style_out = 0.0;
    double style_comp = 0.0;
    double tv = 0.0;
    double total = 0.0;

    void compute_total(const LossWeights& w)
    {
        total = w.valid * valid + w.hole * hole + w.perceptual * perceptual + w.style * (style_out + style_comp) +
                w.tv * tv;
    }
};

namespace detail {
    template <std::floating_point T>
    T sign(T v) noexcept
    {
        return static_cast<T>((v > T(0)) - (v < T(0)));
    }

    inline double plane_norm(const Shape& s) { return static_cast<double>(s.c * s.h * s.w); }
} // namespace detail

/// (L_hole, L_valid): L1 of the difference restricted to holes / valid
/// pixels, normalized by C*H*W.
template <std::floating_point T>
std::pair<double, double> pixel_losses(const Tensor4<T>& out, const Tensor4<T>& gt, const Tensor4<T>& mask_in,
                                       Tensor4<T>* grad_hole = nullptr, Tensor4<T>* grad_valid = nullptr)
{
    require_same_shape(out.shape(), gt.shape(), "pixel_losses");
    const Tensor4<T> mask = replicate_mask(mask_in, out.shape().c);
    require_same_shape(out.shape(), mask.shape(), "pixel_losses mask");
    const Shape s = out.shape();
    const double norm = detail::plane_norm(s) * static_cast<double>(s.n);
    if (grad_hole) {
        *grad_hole = Tensor4<T>(s);
    }
    if (grad_valid) {
        *grad_valid = Tensor4<T>(s);
    }
    double hole = 0.0;
    double valid = 0.0;
    const T g = static_cast<T>(1.0 / norm);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T d = out[i] - gt[i];
        if (mask[i] != T(0)) {
            valid += std::abs(static_cast<double>(d));
            if (grad_valid) {
                (*grad_valid)[i] = g * detail::sign(d);
            }
        } else {
            hole += std::abs(static_cast<double>(d));
            if (grad_hole) {
                (*grad_hole)[i] = g * detail::sign(d);
            }
        }
    }
    return {hole / norm, valid / norm};
}

/// K_p * Psi^T Psi per batch item, as an (n, 1, C, C) tensor, where Psi is
/// the (H*W) x C reshaping of the activation and K_p = 1 / (C*H*W).
template <std::floating_point T>
Tensor4<T> gram(const Tensor4<T>& psi)
{
    const Shape s = psi.shape();
    const std::size_t hw = s.plane();
    const T k = static_cast<T>(1.0 / detail::plane_norm(s));
    Tensor4<T> g({s.n, 1, s.c, s.c});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < s.c; ++i) {
            const T* a = psi.plane(n, i);
            for (std::size_t j = i; j < s.c; ++j) {
                const T* b = psi.plane(n, j);
                T acc = 0;
                for (std::size_t p = 0; p < hw; ++p) {
                    acc += a[p] * b[p];
                }
                g(n, 0, i, j) = k * acc;
                g(n, 0, j, i) = k * acc;
            }
        }
    }
    return g;
}

namespace detail {

    /// Sum over taps of ||psi_x - psi_gt||_1 / N_p, averaged over the batch.
    /// Writes d/d psi_x into `grads` when given.
    template <std::floating_point T>
    double perceptual_term(const std::vector<Tensor4<T>>& x, const std::vector<Tensor4<T>>& gt,
                           std::vector<Tensor4<T>>* grads)
    {
        double total = 0.0;
        if (grads) {
            grads->clear();
        }
        for (std::size_t p = 0; p < x.size(); ++p) {
            require_same_shape(x[p].shape(), gt[p].shape(), "perceptual tap");
            const double norm = plane_norm(x[p].shape()) * static_cast<double>(x[p].shape().n);
            double acc = 0.0;
            Tensor4<T> g;
            if (grads) {
                g = Tensor4<T>(x[p].shape());
            }
            const T scale = static_cast<T>(1.0 / norm);
            for (std::size_t i = 0; i < x[p].size(); ++i) {
                const T d = x[p][i] - gt[p][i];
                acc += std::abs(static_cast<double>(d));
                if (grads) {
                    g[i] = scale * sign(d);
                }
            }
            total += acc / norm;
            if (grads) {
                grads->push_back(std::move(g));
            }
        }
        return total;
    }

    /// Sum over taps of (1/C^2) * ||G(psi_x) - G(psi_gt)||_1, averaged over
    /// the batch, with G the K_p-scaled Gram matrix.
    template <std::floating_point T>
    double style_term(const std::vector<Tensor4<T>>& x, const std::vector<Tensor4<T>>& gt, bool kp_only,
                      std::vector<Tensor4<T>>* grads)
    {
        double total = 0.0;
        if (grads) {
            grads->clear();
        }
        for (std::size_t p = 0; p < x.size(); ++p) {
            require_same_shape(x[p].shape(), gt[p].shape(), "style tap");
            const Shape s = x[p].shape();
            const Tensor4<T> gx = gram(x[p]);
            const Tensor4<T> gg = gram(gt[p]);
            const double pre = (kp_only ? 1.0 : 1.0 / static_cast<double>(s.c * s.c)) / static_cast<double>(s.n);
            double acc = 0.0;
            for (std::size_t i = 0; i < gx.size(); ++i) {
                acc += std::abs(static_cast<double>(gx[i] - gg[i]));
            }
            total += pre * acc;
            if (!grads) {
                continue;
            }
            // dL/dpsi_k(q) = pre * K * sum_j (S_kj + S_jk) psi_j(q), S = sign(Gx - Gg).
            Tensor4<T> g(s);
            const T coef = static_cast<T>(pre / plane_norm(s));
            const std::size_t hw = s.plane();
            for (std::size_t n = 0; n < s.n; ++n) {
                for (std::size_t k = 0; k < s.c; ++k) {
                    T* dst = g.plane(n, k);
                    for (std::size_t j = 0; j < s.c; ++j) {
                        const T sk = sign(gx(n, 0, k, j) - gg(n, 0, k, j)) + sign(gx(n, 0, j, k) - gg(n, 0, j, k));
                        if (sk == T(0)) {
                            continue;
                        }
                        const T w = coef * sk;
                        const T* src = x[p].plane(n, j);
                        for (std::size_t q = 0; q < hw; ++q) {
                            dst[q] += w * src[q];
                        }
                    }
                }
            }
            grads->push_back(std::move(g));
        }
        return total;
    }

} // namespace detail

template <std::floating_point T>
double perceptual_loss(const FeatureStack<T>& stack, const Tensor4<T>& out, const Tensor4<T>& comp,
                       const Tensor4<T>& gt)
{
    const auto fg = stack.extract(gt);
    return detail::perceptual_term(stack.extract(out), fg, static_cast<std::vector<Tensor4<T>>*>(nullptr)) +
           detail::perceptual_term(stack.extract(comp), fg, static_cast<std::vector<Tensor4<T>>*>(nullptr));
}

template <std::floating_point T>
std::pair<double, double> style_losses(const FeatureStack<T>& stack, const Tensor4<T>& out, const Tensor4<T>& comp,
                                       const Tensor4<T>& gt, bool kp_only = false)
{
    const auto fg = stack.extract(gt);
    return {detail::style_term(stack.extract(out), fg, kp_only, static_cast<std::vector<Tensor4<T>>*>(nullptr)),
            detail::style_term(stack.extract(comp), fg, kp_only, static_cast<std::vector<Tensor4<T>>*>(nullptr))};
}

/// R: per-channel 1-pixel dilation of the hole (mask == 0) region.
template <std::floating_point T>
Tensor4<T> tv_region(const Tensor4<T>& mask, bool eight_connected = true)
{
    const Shape s = mask.shape();
    Tensor4<T> r(s);
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    const auto W = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* m = mask.plane(n, c);
            T* o = r.plane(n, c);
            for (std::ptrdiff_t y = 0; y < H; ++y) {
                for (std::ptrdiff_t x = 0; x < W; ++x) {
                    if (m[y * W + x] != T(0)) {
                        continue;
                    }
                    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                            if (!eight_connected && dy != 0 && dx != 0) {
                                continue;
                            }
                            const std::ptrdiff_t yy = y + dy;
                            const std::ptrdiff_t xx = x + dx;
                            if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
                                o[yy * W + xx] = T(1);
                            }
                        }
                    }
                }
            }
        }
    }
    return r;
}

/// Anisotropic total variation over neighbour pairs lying entirely in R,
/// normalized by C*H*W and averaged over the batch.
template <std::floating_point T>
double tv_loss(const Tensor4<T>& comp, const Tensor4<T>& mask_in, bool eight_connected = true,
               Tensor4<T>* grad = nullptr)
{
    const Tensor4<T> mask = replicate_mask(mask_in, comp.shape().c);
    require_same_shape(comp.shape(), mask.shape(), "tv_loss");
    const Tensor4<T> r = tv_region(mask, eight_connected);
    const Shape s = comp.shape();
    const double norm = detail::plane_norm(s) * static_cast<double>(s.n);
    const T g = static_cast<T>(1.0 / norm);
    if (grad) {
        *grad = Tensor4<T>(s);
    }
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* im = comp.plane(n, c);
            const T* rr = r.plane(n, c);
            T* gp = grad ? grad->plane(n, c) : nullptr;
            for (std::size_t y = 0; y < s.h; ++y) {
                for (std::size_t x = 0; x < s.w; ++x) {
                    const std::size_t i = y * s.w + x;
                    if (rr[i] == T(0)) {
                        continue;
                    }
                    if (x + 1 < s.w && rr[i + 1] != T(0)) {
                        const T d = im[i + 1] - im[i];
                        acc += std::abs(static_cast<double>(d));
                        if (gp) {
                            gp[i + 1] += g * detail::sign(d);
                            gp[i] -= g * detail::sign(d);
                        }
                    }
                    if (y + 1 < s.h && rr[i + s.w] != T(0)) {
                        const T d = im[i + s.w] - im[i];
                        acc += std::abs(static_cast<double>(d));
                        if (gp) {
                            gp[i + s.w] += g * detail::sign(d);
                            gp[i] -= g * detail::sign(d);
                        }
                    }
                }
            }
        }
    }
    return acc / norm;
}

template <std::floating_point T>
struct LossResult {
    LossReport report;
    Tensor4<T> grad_output; // d total / d I_out
};

/// Weighted total of every term, with the gradient with respect to the raw
/// output. I_comp depends on I_out through hole pixels only.
template <std::floating_point T>
LossResult<T> total_loss(const FeatureStack<T>& stack, const Tensor4<T>& out, const Tensor4<T>& gt,
                         const Tensor4<T>& mask_in, const LossWeights& w, const LossOptions& opt = {})
{
    require_same_shape(out.shape(), gt.shape(), "total_loss");
    const Tensor4<T> mask = replicate_mask(mask_in, out.shape().c);
    require_same_shape(out.shape(), mask.shape(), "total_loss mask");
    require_binary(mask, "loss mask");
    const Tensor4<T> comp = composite(out, gt, mask);

    LossResult<T> res;
    Tensor4<T> g_hole;
    Tensor4<T> g_valid;
    std::tie(res.report.hole, res.report.valid) = pixel_losses(out, gt, mask, &g_hole, &g_valid);

    // Gradients split by path: straight through I_out, or through I_comp.
    Tensor4<T> g_out(out.shape());
    axpy(g_out, static_cast<T>(w.hole), g_hole);
    axpy(g_out, static_cast<T>(w.valid), g_valid);
    Tensor4<T> g_comp;
    res.report.tv = tv_loss(comp, mask, opt.tv_eight_connected, &g_comp);
    g_comp = scaled(g_comp, static_cast<T>(w.tv));

    if (opt.feature_terms) {
        FeatureTrace<T> tr_out;
        FeatureTrace<T> tr_comp;
        const auto f_gt = stack.extract(gt);
        const auto f_out = stack.extract(out, &tr_out);
        const auto f_comp = stack.extract(comp, &tr_comp);

        std::vector<Tensor4<T>> pg_out, pg_comp, sg_out, sg_comp;
        res.report.perceptual =
            detail::perceptual_term(f_out, f_gt, &pg_out) + detail::perceptual_term(f_comp, f_gt, &pg_comp);
        res.report.style_out = detail::style_term(f_out, f_gt, opt.style_kp_only, &sg_out);
        res.report.style_comp = detail::style_term(f_comp, f_gt, opt.style_kp_only, &sg_comp);

        const T wp = static_cast<T>(w.perceptual);
        const T ws = static_cast<T>(w.style);
        for (std::size_t p = 0; p < pg_out.size(); ++p) {
            pg_out[p] = scaled(pg_out[p], wp);
            axpy(pg_out[p], ws, sg_out[p]);
            pg_comp[p] = scaled(pg_comp[p], wp);
            axpy(pg_comp[p], ws, sg_comp[p]);
        }
        g_out += stack.extract_backward(tr_out, pg_out);
        g_comp += stack.extract_backward(tr_comp, pg_comp);
    }

    for (std::size_t i = 0; i < g_out.size(); ++i) {
        if (mask[i] == T(0)) {
            g_out[i] += g_comp[i];
        }
    }
    res.grad_output = std::move(g_out);
    res.report.compute_total(w);
    return res;
}

} // namespace pconv
