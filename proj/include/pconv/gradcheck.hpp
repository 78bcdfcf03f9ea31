#pragma once

// Central-difference checks of every backward pass, in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pconv/features.hpp"
#include "pconv/losses.hpp"
#include "pconv/network.hpp"

namespace pconv {

struct GradcheckResult {
    std::string primitive;
    /// Worst relative error over entries whose discrepancy exceeds the
    /// rounding noise of the difference quotient.
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    std::size_t checked = 0;
    bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t size = 6; // spatial extent of the per-primitive problems (even, >= 4)
    /// Negative control: the analytic gradient of this primitive is scaled
    /// by 1.01 before comparison, so its check must fail.
    std::string corrupt;
};

inline const std::vector<std::string>& gradcheck_primitives()
{
    static const std::vector<std::string> names = {
        "conv2d",    "partial_conv", "partial_conv_per_channel", "upsample", "batchnorm", "relu",
        "leaky_relu", "max_pool",    "concat",                   "extractor", "loss_valid", "loss_hole",
        "perceptual", "style_out",   "style_comp",               "tv",        "network_total"};
    return names;
}

namespace detail {

    inline Tensor4d gc_random(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
    {
        std::uniform_real_distribution<double> d(lo, hi);
        Tensor4d t(s);
        for (auto& v : t.values()) {
            v = d(rng);
        }
        return t;
    }

    inline Tensor4d gc_mask(Shape s, std::mt19937_64& rng, double p_valid)
    {
        std::bernoulli_distribution d(p_valid);
        Tensor4d t(s);
        for (auto& v : t.values()) {
            v = d(rng) ? 1.0 : 0.0;
        }
        return t;
    }

    inline double gc_dot(const Tensor4d& a, const Tensor4d& b)
    {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            acc += a[i] * b[i];
        }
        return acc;
    }

    /// Relative error with a 1e-6 floor on the denominator, so entries whose
    /// true gradient is zero are judged against finite-difference noise.
    inline double gc_rel(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

    class Checker {
    public:
        Checker(std::string name, const GradcheckOptions& opt, double tol = 1e-4)
            : corrupt_(opt.corrupt == name)
        {
            res_.primitive = std::move(name);
            res_.tolerance = tol;
        }

        /// Compares `analytic` to central differences of f over `values`;
        /// at most `max_points` evenly spaced entries when nonzero.
        void check(const std::function<double()>& f, std::span<double> values, std::span<const double> analytic,
                   double h, std::size_t max_points = 0)
        {
            if (values.size() != analytic.size()) {
                throw DimensionError("gradcheck: " + res_.primitive + " gradient size mismatch");
            }
            const std::size_t step = max_points == 0 ? 1 : std::max<std::size_t>(1, values.size() / max_points);
            for (std::size_t i = 0; i < values.size(); i += step) {
                const double saved = values[i];
                values[i] = saved + h;
                const double fp = f();
                values[i] = saved - h;
                const double fm = f();
                values[i] = saved;
                const double num = (fp - fm) / (2.0 * h);
                const double a = corrupt_ ? analytic[i] * 1.01 : analytic[i];
                // Differences within the rounding noise of the quotient carry no signal.
                const double noise = 4.0 * std::numeric_limits<double>::epsilon() *
                                     std::max(std::abs(fp), std::abs(fm)) / h;
                if (std::abs(a - num) > noise) {
                    res_.max_rel_error = std::max(res_.max_rel_error, gc_rel(a, num));
                }
                ++res_.checked;
            }
        }

        GradcheckResult result() const { return res_; }

    private:
        GradcheckResult res_;
        bool corrupt_;
    };

    inline ConvParams<double> gc_conv(std::size_t co, std::size_t ci, std::size_t k, std::size_t stride,
                                      std::size_t pad, std::mt19937_64& rng)
    {
        ConvParams<double> p;
        p.weights = gc_random({co, ci, k, k}, rng);
        const Tensor4d b = gc_random({1, co, 1, 1}, rng);
        p.bias.assign(b.values().begin(), b.values().end());
        p.stride = stride;
        p.padding = pad;
        return p;
    }

    /// Pushes values away from 0 so ReLU kinks stay outside the step.
    inline Tensor4d gc_away_from_zero(Tensor4d t)
    {
        for (auto& v : t.values()) {
            v = v >= 0 ? v + 0.05 : v - 0.05;
        }
        return t;
    }

    inline GradcheckResult gc_conv2d(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("conv2d", opt);
        for (std::size_t stride : {1u, 2u}) {
            Tensor4d x = gc_random({2, 2, opt.size, opt.size}, rng);
            ConvParams<double> p = gc_conv(3, 2, 3, stride, 1, rng);
            const Tensor4d r = gc_random(conv2d_forward(x, p).shape(), rng);
            auto f = [&] { return gc_dot(conv2d_forward(x, p), r); };
            const auto g = conv2d_backward(x, p, r);
            ck.check(f, x.values(), g.input.values(), 1e-5);
            ck.check(f, p.weights.values(), g.weights.values(), 1e-5);
            ck.check(f, p.bias, g.bias, 1e-5);
        }
        return ck.result();
    }

    inline GradcheckResult gc_partial_conv(const GradcheckOptions& opt, std::mt19937_64& rng, MaskNormalization norm,
                                           const char* name)
    {
        Checker ck(name, opt);
        struct Case {
            Shape in;
            std::size_t co, k, stride;
        };
        const Case cases[] = {{{1, 1, 6, 6}, 1, 3, 1}, {{2, 3, opt.size + 1, opt.size + 1}, 2, 3, 2}};
        for (const auto& c : cases) {
            MaskedTensor<double> x{gc_random(c.in, rng), gc_mask(c.in, rng, 0.5)};
            PartialConvLayer<double> l{gc_conv(c.co, c.in.c, c.k, c.stride, c.k / 2, rng), norm};
            const Tensor4d r = gc_random(partial_conv_forward(x, l).features.shape(), rng);
            auto f = [&] { return gc_dot(partial_conv_forward(x, l).features, r); };
            const auto g = partial_conv_backward(x, l, r);
            ck.check(f, x.features.values(), g.input.values(), 1e-5);
            ck.check(f, l.params.weights.values(), g.weights.values(), 1e-5);
            ck.check(f, l.params.bias, g.bias, 1e-5);
        }
        return ck.result();
    }

    inline GradcheckResult gc_upsample(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("upsample", opt);
        for (std::size_t factor : {2u, 3u}) {
            Tensor4d x = gc_random({2, 2, opt.size / 2, opt.size / 2}, rng);
            const Tensor4d r = gc_random(nearest_upsample(x, factor).shape(), rng);
            auto f = [&] { return gc_dot(nearest_upsample(x, factor), r); };
            ck.check(f, x.values(), nearest_upsample_backward(r, factor).values(), 1e-5);
        }
        return ck.result();
    }

    inline GradcheckResult gc_batchnorm(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("batchnorm", opt);
        for (bool training : {true, false}) {
            Tensor4d x = gc_random({3, 2, opt.size / 2, opt.size / 2}, rng);
            auto st = BatchNormState<double>::identity(2);
            st.gamma = {0.7, 1.3};
            st.beta = {0.1, -0.2};
            st.running_mean = {0.05, -0.1};
            st.running_var = {0.8, 1.2};
            const Tensor4d r = gc_random(x.shape(), rng);
            auto f = [&] {
                auto s = st;
                return gc_dot(batchnorm_forward(x, s, training), r);
            };
            BatchNormCache<double> cache;
            auto s = st;
            batchnorm_forward(x, s, training, &cache);
            const auto g = batchnorm_backward(r, st, cache);
            ck.check(f, x.values(), g.input.values(), 1e-5);
            ck.check(f, st.gamma, g.gamma, 1e-5);
            ck.check(f, st.beta, g.beta, 1e-5);
        }
        return ck.result();
    }

    inline GradcheckResult gc_activation(const GradcheckOptions& opt, std::mt19937_64& rng, Activation act,
                                         const char* name)
    {
        Checker ck(name, opt);
        Tensor4d x = gc_away_from_zero(gc_random({2, 2, opt.size, opt.size}, rng));
        const Tensor4d r = gc_random(x.shape(), rng);
        auto f = [&] { return gc_dot(activation(x, act), r); };
        ck.check(f, x.values(), activation_backward(x, act, r).values(), 1e-6);
        return ck.result();
    }

    inline GradcheckResult gc_max_pool(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("max_pool", opt);
        Tensor4d x = gc_random({2, 2, opt.size, opt.size}, rng);
        const auto pooled = max_pool2x2(x);
        const Tensor4d r = gc_random(pooled.output.shape(), rng);
        auto f = [&] { return gc_dot(max_pool2x2(x).output, r); };
        ck.check(f, x.values(), max_pool2x2_backward(x.shape(), pooled.argmax, r).values(), 1e-6);
        return ck.result();
    }

    inline GradcheckResult gc_concat(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("concat", opt);
        Tensor4d a = gc_random({2, 2, opt.size, opt.size}, rng);
        Tensor4d b = gc_random({2, 3, opt.size, opt.size}, rng);
        const Tensor4d r = gc_random({2, 5, opt.size, opt.size}, rng);
        auto f = [&] { return gc_dot(concat_channels(a, b), r); };
        const auto [ga, gb] = split_channels(r, 2);
        ck.check(f, a.values(), ga.values(), 1e-5);
        ck.check(f, b.values(), gb.values(), 1e-5);
        return ck.result();
    }

    inline GradcheckResult gc_extractor(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("extractor", opt);
        auto stack = FeatureStack<double>::random_stack(rng(), {4, 6, 8}, {1, 2, 1});
        stack.mean = {0.45, 0.5, 0.4};
        stack.stddev = {0.25, 0.2, 0.3};
        Tensor4d img = gc_random({2, 3, 8, 8}, rng, 0, 1);
        const auto f0 = stack.extract(img);
        std::vector<Tensor4d> r;
        for (const auto& t : f0) {
            r.push_back(gc_random(t.shape(), rng));
        }
        auto f = [&] {
            const auto fs = stack.extract(img);
            double acc = 0.0;
            for (std::size_t p = 0; p < fs.size(); ++p) {
                acc += gc_dot(fs[p], r[p]);
            }
            return acc;
        };
        FeatureTrace<double> tr;
        stack.extract(img, &tr);
        ck.check(f, img.values(), stack.extract_backward(tr, r).values(), 1e-6);
        return ck.result();
    }

    struct GcLossCase {
        FeatureStack<double> stack;
        Tensor4d out, gt, mask;
    };

    inline GcLossCase gc_loss_case(std::mt19937_64& rng)
    {
        GcLossCase c{FeatureStack<double>::random_stack(rng(), {4, 6, 5}, {1, 1, 1}),
                     gc_random({2, 3, 8, 8}, rng, 0, 1), gc_random({2, 3, 8, 8}, rng, 0, 1),
                     gc_mask({2, 1, 8, 8}, rng, 0.5)};
        return c;
    }

    /// One weighted term of the total loss, differentiated through total_loss.
    inline GradcheckResult gc_loss_term(const GradcheckOptions& opt, std::mt19937_64& rng, const char* name,
                                        LossWeights w, double h)
    {
        Checker ck(name, opt);
        GcLossCase c = gc_loss_case(rng);
        LossOptions lo;
        lo.feature_terms = w.perceptual != 0.0 || w.style != 0.0;
        auto f = [&] { return total_loss(c.stack, c.out, c.gt, c.mask, w, lo).report.total; };
        const auto g = total_loss(c.stack, c.out, c.gt, c.mask, w, lo).grad_output;
        ck.check(f, c.out.values(), g.values(), h);
        return ck.result();
    }

    /// style_out alone (comp == false) or style_comp alone, through the extractor.
    inline GradcheckResult gc_style(const GradcheckOptions& opt, std::mt19937_64& rng, bool comp)
    {
        Checker ck(comp ? "style_comp" : "style_out", opt);
        GcLossCase c = gc_loss_case(rng);
        const auto f_gt = c.stack.extract(c.gt);
        auto input = [&] { return comp ? composite(c.out, c.gt, c.mask) : c.out; };
        auto f = [&] { return style_term(c.stack.extract(input()), f_gt, false, static_cast<std::vector<Tensor4d>*>(nullptr)); };
        FeatureTrace<double> tr;
        const auto feats = c.stack.extract(input(), &tr);
        std::vector<Tensor4d> tap_grads;
        style_term(feats, f_gt, false, &tap_grads);
        Tensor4d g = c.stack.extract_backward(tr, tap_grads);
        if (comp) {
            const Tensor4d m = replicate_mask(c.mask, 3);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (m[i] != 0.0) {
                    g[i] = 0.0;
                }
            }
        }
        ck.check(f, c.out.values(), g.values(), 1e-6);
        return ck.result();
    }

    /// Full loss back to every network parameter on a small net, spot-checked.
    inline GradcheckResult gc_network_total(const GradcheckOptions& opt, std::mt19937_64& rng)
    {
        Checker ck("network_total", opt, 1e-3);
        auto net = Network<double>::build(NetConfig::scaled(2, 0.1), rng());
        for (auto& l : net.layers()) {
            if (!l.bn) {
                continue;
            }
            for (std::size_t c = 0; c < l.bn->channels(); ++c) {
                l.bn->gamma[c] = 0.8 + 0.1 * static_cast<double>(c);
                l.bn->beta[c] = 0.05 * static_cast<double>(c);
            }
        }
        const auto stack = FeatureStack<double>::random_stack(rng(), {4, 6, 5}, {1, 1, 1});
        const Tensor4d gt = gc_random({2, 3, 8, 8}, rng, 0, 1);
        const Tensor4d mask = gc_mask({2, 1, 8, 8}, rng, 0.6);
        Tensor4d holed = gt;
        const Tensor4d m3 = replicate_mask(mask, 3);
        for (std::size_t i = 0; i < holed.size(); ++i) {
            holed[i] *= m3[i];
        }
        auto f = [&] { return total_loss(stack, net.forward(holed, mask, true), gt, mask, LossWeights{}).report.total; };
        ForwardTrace<double> tr;
        const Tensor4d out = net.forward(holed, mask, true, &tr);
        const auto loss = total_loss(stack, out, gt, mask, LossWeights{});
        const auto grads = net.backward(tr, loss.grad_output);
        for (auto& v : net.parameters(&grads)) {
            ck.check(f, v.values, v.grad, 1e-5, 6);
        }
        return ck.result();
    }

} // namespace detail

/// Runs every primitive's check (or only `only`, when non-empty).
inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt, const std::vector<std::string>& only = {})
{
    if (opt.size < 4 || opt.size % 2 != 0) {
        throw ArgumentError("gradcheck size must be even and at least 4");
    }
    for (const auto& n : only) {
        if (std::find(gradcheck_primitives().begin(), gradcheck_primitives().end(), n) == gradcheck_primitives().end()) {
            throw ArgumentError("unknown gradcheck primitive '" + n + "'");
        }
    }
    if (!opt.corrupt.empty() && std::find(gradcheck_primitives().begin(), gradcheck_primitives().end(), opt.corrupt) ==
                                    gradcheck_primitives().end()) {
        throw ArgumentError("unknown gradcheck primitive '" + opt.corrupt + "'");
    }
    std::vector<GradcheckResult> out;
    for (std::size_t i = 0; i < gradcheck_primitives().size(); ++i) {
        const std::string& name = gradcheck_primitives()[i];
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) {
            continue;
        }
        // Each primitive has its own stream so subsets reproduce the full run.
        std::mt19937_64 rng(derive_seed(opt.seed, {i}));
        using namespace detail;
        if (name == "conv2d") {
            out.push_back(gc_conv2d(opt, rng));
        } else if (name == "partial_conv") {
            out.push_back(gc_partial_conv(opt, rng, MaskNormalization::across_channels, "partial_conv"));
        } else if (name == "partial_conv_per_channel") {
            out.push_back(gc_partial_conv(opt, rng, MaskNormalization::per_channel, "partial_conv_per_channel"));
        } else if (name == "upsample") {
            out.push_back(gc_upsample(opt, rng));
        } else if (name == "batchnorm") {
            out.push_back(gc_batchnorm(opt, rng));
        } else if (name == "relu") {
            out.push_back(gc_activation(opt, rng, Activation::relu(), "relu"));
        } else if (name == "leaky_relu") {
            out.push_back(gc_activation(opt, rng, Activation::leaky_relu(0.2), "leaky_relu"));
        } else if (name == "max_pool") {
            out.push_back(gc_max_pool(opt, rng));
        } else if (name == "concat") {
            out.push_back(gc_concat(opt, rng));
        } else if (name == "extractor") {
            out.push_back(gc_extractor(opt, rng));
        } else if (name == "loss_valid") {
            out.push_back(gc_loss_term(opt, rng, "loss_valid", {1, 0, 0, 0, 0}, 1e-4));
        } else if (name == "loss_hole") {
            out.push_back(gc_loss_term(opt, rng, "loss_hole", {0, 1, 0, 0, 0}, 1e-4));
        } else if (name == "perceptual") {
            out.push_back(gc_loss_term(opt, rng, "perceptual", {0, 0, 1, 0, 0}, 1e-6));
        } else if (name == "style_out") {
            out.push_back(gc_style(opt, rng, false));
        } else if (name == "style_comp") {
            out.push_back(gc_style(opt, rng, true));
        } else if (name == "tv") {
            out.push_back(gc_loss_term(opt, rng, "tv", {0, 0, 0, 0, 1}, 1e-4));
        } else if (name == "network_total") {
            out.push_back(gc_network_total(opt, rng));
        }
    }
    return out;
}

} // namespace pconv
