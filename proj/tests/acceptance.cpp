// Acceptance run: one PASS/FAIL line per primary criterion.
//
//   acceptance [--work-dir DIR] [criterion ...]
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "loss_oracles.hpp"
#include "oracles.hpp"
#include "pconv/pconv.hpp"

using namespace pconv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path work_dir = fs::temp_directory_path() / "pconv_acceptance";

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi)
{
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
}

// ---- hole agnosticism

void randomize_bn(Network<float>& net, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> d(0.5f, 1.5f);
    for (auto& l : net.layers()) {
        if (!l.bn) continue;
        for (std::size_t c = 0; c < l.bn->channels(); ++c) {
            l.bn->gamma[c] = d(rng);
            l.bn->beta[c] = d(rng) - 1.0f;
            l.bn->running_mean[c] = d(rng) - 1.0f;
            l.bn->running_var[c] = d(rng);
        }
    }
}

Outcome hole_agnosticism()
{
    std::size_t identical = 0;
    for (std::uint64_t q = 0; q < 100; ++q) {
        std::mt19937_64 rng(derive_seed(101, {q}));
        const std::size_t depth = uniform(rng, 2, 4);
        const double width = uniform(rng, 0, 1) ? 0.0625 : 0.125;
        auto net = Network<float>::build(NetConfig::scaled(depth, width), rng());
        randomize_bn(net, rng);
        const std::size_t div = net.config().required_divisor();
        const std::size_t h = div * uniform(rng, 1, 3), w = div * uniform(rng, 1, 3);
        const double p_valid = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        const Tensor4f img = oracle::random_tensor({1, 3, h, w}, rng(), 0, 1).cast<float>();
        const Tensor4f mask = oracle::random_mask({1, 1, h, w}, rng(), p_valid).cast<float>();
        const Tensor4f noise = oracle::random_tensor({1, 3, h, w}, rng(), -10, 10).cast<float>();
        Tensor4f zero_fill = img, noise_fill = img;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < h * w; ++i)
                if (mask.plane(0, 0)[i] == 0.0f) {
                    zero_fill.plane(0, c)[i] = 0.0f;
                    noise_fill.plane(0, c)[i] = noise.plane(0, c)[i];
                }
        if (net.infer(zero_fill, mask) == net.infer(noise_fill, mask)) ++identical;
    }
    return {identical == 100, fmt("%zu/100 (net, image, mask, fill) quadruples bit-identical", identical)};
}

// ---- reduction to standard convolution

Outcome reduction()
{
    double worst = 0.0;
    bool masks_full = true;
    for (std::uint64_t t = 0; t < 100; ++t) {
        std::mt19937_64 rng(derive_seed(202, {t}));
        const std::size_t k = 2 * uniform(rng, 0, 3) + 1;
        const std::size_t ci = uniform(rng, 1, 4), co = uniform(rng, 1, 4), stride = uniform(rng, 1, 2);
        const std::size_t n = uniform(rng, 1, 2), h = k + uniform(rng, 0, 9), w = k + uniform(rng, 0, 9);
        PartialConvLayer<double> layer;
        layer.params.weights = oracle::random_tensor({co, ci, k, k}, rng());
        const auto b = oracle::random_tensor({1, co, 1, 1}, rng());
        layer.params.bias.assign(b.values().begin(), b.values().end());
        layer.params.stride = stride;
        layer.params.padding = 0;
        const Tensor4d x = oracle::random_tensor({n, ci, h, w}, rng());
        const auto y = partial_conv_forward(MaskedTensor<double>{x, Tensor4d(x.shape(), 1.0)}, layer);
        const Tensor4d dense = conv2d_forward(x, layer.params);
        const Tensor4d ref = oracle::naive_conv(x, layer.params.weights, layer.params.bias, int(stride), 0);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            worst = std::max({worst, std::abs(y.features[i] - ref[i]), std::abs(y.features[i] - dense[i])});
        }
        for (double v : y.mask.values()) masks_full = masks_full && v == 1.0;
    }
    return {worst < 1e-12 && masks_full,
            fmt("100 unpadded random layers, max |pconv - conv| = %.3g (tol 1e-12), output masks all ones: %s", worst,
                masks_full ? "yes" : "no")};
}

// ---- gradient suite

Outcome gradients()
{
    const auto results = run_gradcheck(GradcheckOptions{});
    std::string worst_name;
    double worst = 0.0;
    std::vector<std::string> failed;
    for (const auto& r : results) {
        if (!r.passed()) failed.push_back(r.primitive);
        if (r.max_rel_error / r.tolerance >= worst) {
            worst = r.max_rel_error / r.tolerance;
            worst_name = r.primitive;
        }
    }
    std::string detail = fmt("%zu primitives, worst %s at %.2g of its tolerance", results.size(), worst_name.c_str(), worst);
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty() && results.size() == gradcheck_primitives().size(), detail};
}

// ---- loss oracles

Outcome loss_oracles()
{
    const LossWeights w;
    const bool weights_ok = w.valid == 1.0 && w.hole == 6.0 && w.perceptual == 0.05 && w.style == 120.0 && w.tv == 0.1;
    double worst = 0.0, worst_total = 0.0;
    for (std::uint64_t t = 0; t < 20; ++t) {
        std::mt19937_64 rng(derive_seed(404, {t}));
        const std::size_t n = uniform(rng, 1, 2);
        const auto stack = FeatureStack<double>::random_stack(rng(), {4, 6, 5}, {1, 1, 1});
        const Tensor4d out = oracle::random_tensor({n, 3, 8, 8}, rng(), 0, 1);
        const Tensor4d gt = oracle::random_tensor({n, 3, 8, 8}, rng(), 0, 1);
        const Tensor4d m1 = oracle::random_mask({n, 1, 8, 8}, rng(), 0.3 + 0.05 * double(t % 10));
        const Tensor4d m = replicate_mask(m1, 3);
        const Tensor4d comp = oracle::o_comp(out, gt, m);
        const auto fo = oracle::oracle_feats(stack, out);
        const auto fc = oracle::oracle_feats(stack, comp);
        const auto fg = oracle::oracle_feats(stack, gt);
        const LossReport r = total_loss(stack, out, gt, m1, w).report;
        const double terms[][2] = {{r.valid, oracle::o_valid(out, gt, m)},
                                   {r.hole, oracle::o_hole(out, gt, m)},
                                   {r.perceptual, oracle::o_perc_pair(fo, fg) + oracle::o_perc_pair(fc, fg)},
                                   {r.style_out, oracle::o_style_pair(fo, fg)},
                                   {r.style_comp, oracle::o_style_pair(fc, fg)},
                                   {r.tv, oracle::o_tv(comp, m)}};
        for (const auto& [lib, ref] : terms) worst = std::max(worst, std::abs(lib - ref));
        const double total = terms[0][1] + 6 * terms[1][1] + 0.05 * terms[2][1] + 120 * (terms[3][1] + terms[4][1]) +
                             0.1 * terms[5][1];
        worst_total = std::max(worst_total, std::abs(r.total - total));
    }
    return {weights_ok && worst < 1e-10 && worst_total < 1e-10,
            fmt("20 random 8x8 cases, max term diff %.3g, max total diff %.3g (tol 1e-10), default weights "
                "(1, 6, 0.05, 120, 0.1): %s",
                worst, worst_total, weights_ok ? "yes" : "no")};
}

// ---- mask propagation

/// Stride/kernel/padding of the eight encoder layers of the full network.
std::vector<ConvParams<float>> paper_encoder_geometry()
{
    const auto net = Network<float>::build(NetConfig::paper(), 1);
    std::vector<ConvParams<float>> out;
    for (const auto& l : net.layers()) {
        if (l.is_decoder()) continue;
        ConvParams<float> p;
        const std::size_t k = l.conv.params.weights.shape().h;
        p.weights = Tensor4f({1, 1, k, k}, 1.0f);
        p.bias = {0.0f};
        p.stride = l.conv.params.stride;
        p.padding = l.conv.params.padding;
        out.push_back(std::move(p));
    }
    return out;
}

/// Window-any dilation of the valid region: an output is valid iff its
/// zero-padded window holds at least one valid input.
std::vector<std::uint8_t> oracle_next_mask(const std::vector<std::uint8_t>& m, std::size_t h, std::size_t w,
                                           std::size_t k, std::size_t s, std::size_t p, std::size_t& oh, std::size_t& ow)
{
    oh = (h + 2 * p - k) / s + 1;
    ow = (w + 2 * p - k) / s + 1;
    std::vector<std::uint8_t> out(oh * ow, 0);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            bool any = false;
            for (std::size_t ky = 0; ky < k && !any; ++ky)
                for (std::size_t kx = 0; kx < k && !any; ++kx) {
                    const long iy = long(y * s + ky) - long(p), ix = long(x * s + kx) - long(p);
                    any = iy >= 0 && ix >= 0 && iy < long(h) && ix < long(w) && m[std::size_t(iy) * w + std::size_t(ix)];
                }
            out[y * ow + x] = any;
        }
    return out;
}

/// Per-layer masks of the encoder, through the library's partial convolution.
std::vector<Tensor4f> propagate(const std::vector<ConvParams<float>>& enc, const Tensor4f& mask)
{
    std::vector<Tensor4f> masks;
    MaskedTensor<float> x{Tensor4f(mask.shape()), mask};
    for (const auto& p : enc) {
        x = partial_conv_forward(x, PartialConvLayer<float>{p, MaskNormalization::across_channels});
        masks.push_back(x.mask);
    }
    return masks;
}

double hole_ratio(const Tensor4f& m)
{
    return double(std::count(m.values().begin(), m.values().end(), 0.0f)) / double(m.size());
}

Outcome mask_propagation()
{
    const auto enc = paper_encoder_geometry();
    BenchmarkSpec spec;
    spec.size = 512;
    spec.per_cell = 84;
    spec.seed = 505;
    const auto bench = build_benchmark(spec);
    std::size_t checked = 0, monotone = 0, oracle_agree = 0;
    for (const auto& e : bench.entries) {
        if (checked == 1000) break;
        ++checked;
        const Tensor4f m = e.mask.to_tensor<float>();
        const auto masks = propagate(enc, m);
        double prev = hole_ratio(m);
        bool ok = true;
        for (const auto& lm : masks) {
            const double r = hole_ratio(lm);
            ok = ok && r <= prev;
            prev = r;
        }
        monotone += ok;
        std::vector<std::uint8_t> om(e.mask.valid);
        std::size_t h = 512, w = 512;
        bool agree = true;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            std::size_t oh = 0, ow = 0;
            om = oracle_next_mask(om, h, w, enc[i].weights.shape().h, enc[i].stride, enc[i].padding, oh, ow);
            h = oh;
            w = ow;
            for (std::size_t j = 0; j < om.size(); ++j) agree = agree && (masks[i][j] == 1.0f) == (om[j] != 0);
        }
        oracle_agree += agree;
    }

    // One valid pixel at the centre, through the full-width encoder.
    const auto net = Network<float>::build(NetConfig::paper(), 7);
    Tensor4f single({1, 3, 512, 512}, 0.0f);
    for (std::size_t c = 0; c < 3; ++c) single(0, c, 256, 256) = 1.0f;
    MaskedTensor<float> x{oracle::random_tensor({1, 3, 512, 512}, 8, 0, 1).cast<float>(), single};
    for (std::size_t i = 0; i < 8; ++i) {
        x = partial_conv_forward(x, net.layers()[i].conv);
    }
    const bool pconv8_full = std::all_of(x.mask.values().begin(), x.mask.values().end(), [](float v) { return v == 1.0f; });

    const bool pass = checked == 1000 && monotone == 1000 && oracle_agree == 1000 && pconv8_full;
    return {pass, fmt("%zu benchmark masks at 512x512: hole ratio non-increasing for %zu, masks equal the window "
                      "oracle for %zu; single valid pixel (256,256) all-ones at PConv8 (%zux%zux%zu): %s",
                      checked, monotone, oracle_agree, x.mask.shape().c, x.mask.shape().h, x.mask.shape().w,
                      pconv8_full ? "yes" : "no")};
}

// ---- architecture

struct Row {
    const char* name;
    std::size_t kernel, channels, stride;
    bool bn;
    ActivationKind act;
    const char* skip;
    std::size_t concat_in; // decoder conv input channels (upsampled + skip)
};

const Row kRows[] = {
    {"PConv1", 7, 64, 2, false, ActivationKind::relu, nullptr, 3},
    {"PConv2", 5, 128, 2, true, ActivationKind::relu, nullptr, 64},
    {"PConv3", 5, 256, 2, true, ActivationKind::relu, nullptr, 128},
    {"PConv4", 3, 512, 2, true, ActivationKind::relu, nullptr, 256},
    {"PConv5", 3, 512, 2, true, ActivationKind::relu, nullptr, 512},
    {"PConv6", 3, 512, 2, true, ActivationKind::relu, nullptr, 512},
    {"PConv7", 3, 512, 2, true, ActivationKind::relu, nullptr, 512},
    {"PConv8", 3, 512, 2, true, ActivationKind::relu, nullptr, 512},
    {"PConv9", 3, 512, 2, true, ActivationKind::leaky_relu, "PConv7", 512 + 512},
    {"PConv10", 3, 512, 2, true, ActivationKind::leaky_relu, "PConv6", 512 + 512},
    {"PConv11", 3, 512, 2, true, ActivationKind::leaky_relu, "PConv5", 512 + 512},
    {"PConv12", 3, 512, 2, true, ActivationKind::leaky_relu, "PConv4", 512 + 512},
    {"PConv13", 3, 256, 2, true, ActivationKind::leaky_relu, "PConv3", 512 + 256},
    {"PConv14", 3, 128, 2, true, ActivationKind::leaky_relu, "PConv2", 256 + 128},
    {"PConv15", 3, 64, 2, true, ActivationKind::leaky_relu, "PConv1", 128 + 64},
    {"PConv16", 3, 3, 2, false, ActivationKind::none, "input", 64 + 3},
};

Outcome architecture()
{
    const auto net = Network<float>::build(NetConfig::paper(), 3);
    std::vector<std::string> bad;
    if (net.layers().size() != 16) return {false, fmt("%zu layers, expected 16", net.layers().size())};
    for (std::size_t i = 0; i < 16; ++i) {
        const auto& l = net.layers()[i];
        const Row& r = kRows[i];
        const auto& p = l.conv.params;
        const bool dec = r.skip != nullptr;
        bool ok = l.spec.name == r.name && l.spec.kernel == r.kernel && l.spec.channels_out == r.channels &&
                  l.spec.stride_or_upfactor == r.stride && l.spec.has_bn == r.bn && l.bn.has_value() == r.bn &&
                  l.spec.nonlinearity.kind == r.act &&
                  (r.act != ActivationKind::leaky_relu || l.spec.nonlinearity.slope == 0.2);
        ok = ok && p.weights.shape() == Shape{r.channels, r.concat_in, r.kernel, r.kernel};
        ok = ok && p.stride == (dec ? 1u : r.stride) && p.padding == r.kernel / 2;
        ok = ok && l.spec.skip_source.has_value() == dec && (!dec || *l.spec.skip_source == r.skip);
        if (dec) {
            const int expect = std::string(r.skip) == "input" ? -1 : std::stoi(r.skip + 5) - 1;
            ok = ok && l.skip_index == expect;
        }
        if (!ok) bad.push_back(r.name);
    }
    std::string detail = "16 rows checked (kernel, channels, stride, BN, nonlinearity, skip, concat sums such as "
                         "512+256 at PConv13)";
    for (const auto& b : bad) detail += "; mismatch at " + b;
    return {bad.empty(), detail};
}

// ---- benchmark

std::optional<int> oracle_bin(std::size_t holes, std::size_t total)
{
    // (0.01, 0.1], (0.1, 0.2], ..., (0.5, 0.6] with exact integer arithmetic.
    if (100 * holes <= total || 10 * holes > 6 * total) return std::nullopt;
    for (int b = 1; b <= 6; ++b)
        if (10 * holes <= std::size_t(b) * total) return b;
    return std::nullopt;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome benchmark()
{
    BenchmarkSpec spec;
    spec.size = 128;
    spec.per_cell = 10;
    spec.seed = 606;
    const double margin = 50.0 * 128.0 / 512.0;
    const auto a = build_benchmark(spec);
    std::size_t per_cell[12] = {};
    std::size_t recategorized = 0, margin_ok = 0;
    for (const auto& e : a.entries) {
        const auto& m = e.mask;
        const auto bin = oracle_bin(m.hole_count(), m.height * m.width);
        bool touches = false;
        for (std::size_t y = 0; y < m.height; ++y)
            for (std::size_t x = 0; x < m.width; ++x)
                if (!m.at(y, x)) {
                    const double d = double(std::min({y, x, m.height - 1 - y, m.width - 1 - x}));
                    touches = touches || d < margin;
                }
        const auto cat = categorize(m, margin);
        if (bin && *bin == e.bin && touches == e.border && cat.bin == bin && cat.touches_border == touches) {
            ++recategorized;
        }
        margin_ok += e.border || !touches;
        if (e.bin >= 1 && e.bin <= 6) ++per_cell[cell_index(e.bin, e.border)];
    }
    const bool cells_ok = std::all_of(std::begin(per_cell), std::end(per_cell), [](std::size_t c) { return c == 10; });

    const auto b = build_benchmark(spec);
    fs::remove_all(work_dir / "bench_a");
    fs::remove_all(work_dir / "bench_b");
    a.write(work_dir / "bench_a");
    b.write(work_dir / "bench_b");
    bool identical = a.manifest() == b.manifest();
    for (const auto& e : a.entries) {
        identical = identical && slurp(work_dir / "bench_a" / e.path) == slurp(work_dir / "bench_b" / e.path);
    }
    const auto back = MaskBenchmark::read(work_dir / "bench_a");
    bool round_trip = back.entries.size() == a.entries.size();
    for (std::size_t i = 0; round_trip && i < a.entries.size(); ++i) {
        round_trip = back.entries[i].mask == a.entries[i].mask && back.entries[i].bin == a.entries[i].bin &&
                     back.entries[i].border == a.entries[i].border;
    }
    const std::size_t n = a.entries.size();
    return {n == 120 && cells_ok && recategorized == n && margin_ok == n && identical && round_trip,
            fmt("%zu masks at 128x128, 10 per cell in all 12 cells: %s; re-categorized into manifest cell: %zu; "
                "no-border masks clear of the %.1f px margin: %zu; regeneration byte-identical: %s; disk round trip: %s",
                n, cells_ok ? "yes" : "no", recategorized, margin, margin_ok, identical ? "yes" : "no",
                round_trip ? "yes" : "no")};
}

// ---- desk-scale training

struct HeldOut {
    std::vector<Tensor4f> images;
    std::vector<Tensor4f> masks;
};

double mean_hole_l1(const Network<float>& net, const HeldOut& h)
{
    double total = 0.0;
    for (std::size_t i = 0; i < h.images.size(); ++i) {
        const Tensor4f& gt = h.images[i];
        const Tensor4f& m = h.masks[i];
        const Tensor4f out = net.infer(apply_holes(gt, m), m);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < m.size(); ++j)
                if (m[j] == 0.0f) {
                    acc += std::abs(double(std::clamp(out.plane(0, c)[j], 0.0f, 1.0f)) - double(gt.plane(0, c)[j]));
                    ++count;
                }
        total += acc / double(count);
    }
    return total / double(h.images.size());
}

double mean_psnr(const HeldOut& h, const std::function<Tensor4f(const Tensor4f&, const Tensor4f&)>& fill)
{
    double total = 0.0;
    for (std::size_t i = 0; i < h.images.size(); ++i) {
        Tensor4f out = fill(h.images[i], h.masks[i]);
        for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
        total += std::min(psnr(composite(out, h.images[i], h.masks[i]), h.images[i]), psnr_text_cap);
    }
    return total / double(h.images.size());
}

/// Holes filled with the per-channel mean colour of the image's valid pixels.
Tensor4f mean_color_fill(const Tensor4f& gt, const Tensor4f& m)
{
    Tensor4f out = gt;
    const std::size_t plane = m.size();
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t j = 0; j < plane; ++j)
            if (m[j] != 0.0f) {
                acc += gt.plane(0, c)[j];
                ++n;
            }
        const float mean = n ? float(acc / double(n)) : 0.5f;
        for (std::size_t j = 0; j < plane; ++j)
            if (m[j] == 0.0f) out.plane(0, c)[j] = mean;
    }
    return out;
}

bool encoder_bn_equal(const PcnvArchive& a, const PcnvArchive& b, const Network<float>& net, bool& decoder_changed)
{
    bool equal = true;
    for (const auto& l : net.layers()) {
        if (!l.bn) continue;
        for (const char* f : {".bn.gamma", ".bn.beta", ".bn.running_mean", ".bn.running_var"}) {
            const std::string name = l.spec.name + f;
            const bool same = a.at(name).values == b.at(name).values;
            if (l.is_decoder()) decoder_changed = decoder_changed || !same;
            else equal = equal && same;
        }
    }
    return equal;
}

Outcome desk_training()
{
    const fs::path dir = work_dir / "desk";
    fs::remove_all(dir);
    write_synthetic_folder(dir / "train", 200, 64, 7001);
    write_synthetic_folder(dir / "heldout", 20, 64, 7002);

    TrainConfig cfg;
    cfg.net = NetConfig::scaled(4, 0.25);
    cfg.image_dir = dir / "train";
    cfg.image_size = 64;
    cfg.batch_size = 4;
    cfg.seed = 2024;
    cfg.mask_pool_size = 512;
    cfg.out_dir = dir / "run";
    const auto data = load_train_data<float>(cfg);

    // Step 0: the freshly initialized network, before any update.
    TrainConfig init = cfg;
    init.iterations = 0;
    init.out_dir = dir / "init";
    const auto r0 = run_training<float>(init, data);

    // 10x the phase defaults (same 4:1 ratio). At 2000 steps the small net
    // stays below the mean-colour baseline with the full-size rates.
    cfg.iterations = 1500;
    cfg.learning_rate = 2e-3;
    const auto r1 = run_training<float>(cfg, data);

    TrainConfig ft = cfg;
    ft.phase = Phase::finetune;
    ft.resume = r1.final_checkpoint;
    ft.iterations = 500;
    ft.learning_rate = 5e-4;
    ft.checkpoint_every = 100;
    const auto r2 = run_training<float>(ft, data);
    const double seconds = r0.seconds + r1.seconds + r2.seconds;

    const auto start_ar = PcnvArchive::load(r1.final_checkpoint);
    const auto first_ar = PcnvArchive::load(ft.out_dir / "finetune_step000100.pcnv");
    const auto last_ar = PcnvArchive::load(r2.final_checkpoint);
    const auto final_net = Network<float>::from_archive(last_ar);
    bool decoder_changed = false;
    const bool frozen = encoder_bn_equal(start_ar, first_ar, final_net, decoder_changed) &&
                        encoder_bn_equal(first_ar, last_ar, final_net, decoder_changed);

    HeldOut held;
    for (const auto& img : load_image_folder<float>(dir / "heldout", 64)) held.images.push_back(img.image);
    for (const auto& m : build_mask_pool(MaskSource::parse("synthetic"), 64, 7003)) {
        if (held.masks.size() == held.images.size()) break;
        held.masks.push_back(m.to_tensor<float>());
    }
    const auto step0_net = Network<float>::load(r0.final_checkpoint);
    const double l1_0 = mean_hole_l1(step0_net, held);
    const double l1_end = mean_hole_l1(final_net, held);
    const double psnr_net = mean_psnr(held, [&](const Tensor4f& gt, const Tensor4f& m) {
        return final_net.infer(apply_holes(gt, m), m);
    });
    const double psnr_base = mean_psnr(held, mean_color_fill);

    // Training-log view of the same quantity, for the record.
    double log_tail = 0.0;
    for (std::size_t i = r2.log.size() - 100; i < r2.log.size(); ++i) log_tail += r2.log[i].hole;
    log_tail /= 100.0;

    const bool pass = frozen && decoder_changed && l1_end <= 0.5 * l1_0 && psnr_net >= psnr_base + 2.0 && seconds <= 1800;
    return {pass, fmt("1500 initial + 500 finetune steps (lr 2e-3 / 5e-4), batch 4, 64x64, 200 train / 20 held out; encoder BN frozen: "
                      "%s (decoder BN moved: %s); held-out hole L1 %.4f -> %.4f (%.1f%% of step 0, need <= 50%%); "
                      "composited PSNR %.2f dB vs mean-colour fill %.2f dB (need +2); log L_hole %.4f -> %.4f "
                      "(last 100 mean); %.0f s",
                      frozen ? "yes" : "no", decoder_changed ? "yes" : "no", l1_0, l1_end, 100.0 * l1_end / l1_0,
                      psnr_net, psnr_base, r1.log.front().hole, log_tail, seconds)};
}

// ---- metrics

Outcome metrics()
{
    const Tensor4d gt({1, 3, 16, 16}, 0.25), off({1, 3, 16, 16}, 0.75);
    const double p = psnr(off, gt);
    const auto a = oracle::random_tensor({1, 3, 32, 32}, 901, 0, 1);
    const double self = ssim(a, a);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto x = oracle::random_tensor({1, 3, 32, 32}, 910 + s, 0, 1);
        Tensor4d y = oracle::random_tensor({1, 3, 32, 32}, 930 + s, 0, 1);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.1 * double(s) * x[i] + (1 - 0.1 * double(s)) * y[i];
        worst = std::max(worst, std::abs(ssim(x, y) - oracle::ssim_direct(x, y)));
    }
    const bool pass = std::abs(p - 6.0206) <= 1e-3 && std::abs(self - 1.0) <= 1e-9 && worst <= 1e-6;
    return {pass, fmt("PSNR of a 0.5 offset %.5f dB (6.0206 +- 1e-3); SSIM(a, a) - 1 = %.2g; max |SSIM - oracle| "
                      "over 10 random 32x32 pairs %.2g (tol 1e-6)",
                      p, self - 1.0, worst)};
}

// ---- super-resolution

Outcome super_resolution()
{
    std::size_t grids = 0, good = 0;
    for (std::size_t k : {1u, 2u, 4u})
        for (std::size_t h = 1; h <= 5; ++h)
            for (std::size_t w = 1; w <= 5; ++w) {
                ++grids;
                const auto low = oracle::random_tensor({1, 3, h, w}, 100 * k + 10 * h + w, 0.01, 1);
                const auto in = build_sr_input(low, k);
                bool ok = in.features.shape() == Shape{1, 3, k * h, k * w};
                std::size_t valid = 0;
                for (std::size_t Y = 0; ok && Y < k * h; ++Y)
                    for (std::size_t X = 0; X < k * w; ++X) {
                        // Pixel (x, y) lands at (Kx + floor(K/2), Ky + floor(K/2)).
                        const bool placed = Y >= k / 2 && X >= k / 2 && (Y - k / 2) % k == 0 && (X - k / 2) % k == 0;
                        for (std::size_t c = 0; c < 3; ++c) {
                            const double expect = placed ? low(0, c, (Y - k / 2) / k, (X - k / 2) / k) : 0.0;
                            ok = ok && in.mask(0, c, Y, X) == (placed ? 1.0 : 0.0) && in.features(0, c, Y, X) == expect;
                        }
                        valid += in.mask(0, 0, Y, X) == 1.0;
                    }
                ok = ok && valid == h * w;
                if (k == 1) ok = ok && in.features == low;
                good += ok;
            }
    return {good == grids, fmt("K in {1, 2, 4} on all %zu grids up to 5x5: placement, valid count = H*W and the K = 1 "
                               "identity hold on %zu",
                               grids, good)};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"hole_agnosticism", hole_agnosticism},
        {"reduction_to_conv", reduction},
        {"gradient_suite", gradients},
        {"loss_oracles", loss_oracles},
        {"mask_propagation", mask_propagation},
        {"architecture", architecture},
        {"benchmark_generator", benchmark},
        {"desk_training", desk_training},
        {"metrics", metrics},
        {"super_resolution", super_resolution},
    };
    std::vector<std::string> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            work_dir = argv[++i];
        } else {
            only.push_back(a);
        }
    }
    fs::create_directories(work_dir);

    bool all = true;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %-20s (%6.1f s) %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), s, o.detail.c_str());
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
