#pragma once

// Two-phase training: initial (all BN active) and finetune (encoder BN
// frozen, lower learning rate). Adam on every trainable parameter.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "pconv/config.hpp"
#include "pconv/core/adam.hpp"
#include "pconv/dataset.hpp"
#include "pconv/evaluate.hpp"
#include "pconv/losses.hpp"
#include "pconv/network.hpp"

namespace pconv {

enum class Phase { initial, finetune };

inline std::string phase_name(Phase p) { return p == Phase::initial ? "initial" : "finetune"; }

inline Phase parse_phase(const std::string& s)
{
    if (s == "initial") {
        return Phase::initial;
    }
    if (s == "finetune") {
        return Phase::finetune;
    }
    throw ConfigError("unknown phase '" + s + "' (expected initial or finetune)");
}

inline double default_learning_rate(Phase p) { return p == Phase::initial ? 2e-4 : 5e-5; }

struct TrainConfig {
    Phase phase = Phase::initial;
    std::optional<double> learning_rate; // phase default when unset
    std::size_t batch_size = 6;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    std::filesystem::path image_dir;
    std::size_t image_size = 64;
    std::string mask_source = "synthetic";
    std::size_t mask_pool_size = 512;
    std::size_t checkpoint_every = 0; // 0: final checkpoint only
    std::filesystem::path out_dir = "run";
    std::filesystem::path resume;    // previous checkpoint; required for finetune
    std::string extractor = "random"; // "random" or a PCNV path
    NetConfig net = NetConfig::scaled(4, 0.25);
    LossWeights weights;
    LossOptions loss;

    double lr() const { return learning_rate.value_or(default_learning_rate(phase)); }

    void validate() const
    {
        if (batch_size == 0) {
            throw ConfigError("train.batch_size must be positive");
        }
        if (phase == Phase::finetune && resume.empty()) {
            throw ConfigError("the finetune phase needs a checkpoint from the initial phase (train.resume)");
        }
        if (!(lr() >= 0.0)) {
            throw ConfigError("train.lr must be non-negative");
        }
        if (image_size != 0 && image_size % net.required_divisor() != 0) {
            throw ConfigError("data.size " + std::to_string(image_size) + " is not divisible by " +
                              std::to_string(net.required_divisor()));
        }
        net.validate();
    }

    static TrainConfig read(const KeyValueConfig& kv)
    {
        TrainConfig c;
        c.phase = parse_phase(kv.get_or("train.phase", "initial"));
        if (kv.has("train.lr")) {
            c.learning_rate = kv.get_double("train.lr");
        }
        c.batch_size = static_cast<std::size_t>(kv.get_int("train.batch_size", 6));
        c.iterations = static_cast<std::size_t>(kv.get_int("train.iterations", 1000));
        c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 0));
        c.image_dir = kv.get_or("data.images", "");
        c.image_size = static_cast<std::size_t>(kv.get_int("data.size", 64));
        c.mask_source = kv.get_or("masks.source", "synthetic");
        c.mask_pool_size = static_cast<std::size_t>(kv.get_int("masks.pool_size", 512));
        c.checkpoint_every = static_cast<std::size_t>(kv.get_int("train.checkpoint_every", 0));
        c.out_dir = kv.get_or("train.out_dir", "run");
        c.resume = kv.get_or("train.resume", "");
        c.extractor = kv.get_or("extractor", "random");
        if (kv.has("net.preset") || kv.has("net.layers")) {
            c.net = NetConfig::read(kv);
        }
        c.weights = LossWeights::read(kv);
        c.loss = LossOptions::read(kv);
        MaskSource::parse(c.mask_source);
        return c;
    }

    void write(KeyValueConfig& kv) const
    {
        kv.set("train.phase", phase_name(phase));
        if (learning_rate) {
            std::ostringstream os;
            os << std::setprecision(17) << *learning_rate;
            kv.set("train.lr", os.str());
        }
        kv.set("train.batch_size", std::to_string(batch_size));
        kv.set("train.iterations", std::to_string(iterations));
        kv.set("train.seed", std::to_string(seed));
        kv.set("data.images", image_dir.string());
        kv.set("data.size", std::to_string(image_size));
        kv.set("masks.source", mask_source);
        kv.set("masks.pool_size", std::to_string(mask_pool_size));
        kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
        kv.set("train.out_dir", out_dir.string());
        kv.set("train.resume", resume.string());
        kv.set("extractor", extractor);
        auto num = [](double v) {
            std::ostringstream os;
            os << v;
            return os.str();
        };
        kv.set("loss.valid", num(weights.valid));
        kv.set("loss.hole", num(weights.hole));
        kv.set("loss.perceptual", num(weights.perceptual));
        kv.set("loss.style", num(weights.style));
        kv.set("loss.tv", num(weights.tv));
        kv.set("loss.style_kp_only", loss.style_kp_only ? "true" : "false");
        kv.set("loss.tv_connectivity", loss.tv_eight_connected ? "8" : "4");
        net.write(kv);
    }
};

/// Network parameters plus one Adam state per parameter tensor.
template <std::floating_point T>
struct TrainState {
    Network<T> net;
    std::vector<AdamState<T>> adam;
    std::uint64_t step = 0;

    void reset_optimizer(double lr)
    {
        adam.clear();
        for (const auto& p : net.parameters()) {
            adam.push_back(AdamState<T>::fresh(p.values.size(), lr));
        }
    }
};

inline std::string loss_log_header() { return "step,total,valid,hole,perceptual,style_out,style_comp,tv"; }

inline std::string loss_log_line(std::uint64_t step, const LossReport& r)
{
    std::ostringstream os;
    os << step << std::setprecision(9);
    for (double v : {r.total, r.valid, r.hole, r.perceptual, r.style_out, r.style_comp, r.tv}) {
        os << ',' << v;
    }
    return os.str();
}

/// Forward, loss, backward and an Adam update of every trainable parameter.
/// `masks` is (n, 1, H, W); the network sees gt with holes zeroed.
template <std::floating_point T>
LossReport train_step(TrainState<T>& st, const FeatureStack<T>& extractor, const Tensor4<T>& gt,
                      const Tensor4<T>& masks, const LossWeights& w, const LossOptions& opt = {})
{
    ForwardTrace<T> trace;
    const Tensor4<T> out = st.net.forward(apply_holes(gt, masks), masks, true, &trace);
    LossResult<T> loss = total_loss(extractor, out, gt, masks, w, opt);
    if (!std::isfinite(loss.report.total)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(st.step));
    }
    const NetworkGrads<T> grads = st.net.backward(trace, loss.grad_output);
    auto params = st.net.parameters(&grads);
    if (st.adam.size() != params.size()) {
        throw ContractError("optimizer state does not match the network parameters");
    }
    try {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].trainable) {
                adam_step<T>(params[i].values, params[i].grad, st.adam[i]);
            }
        }
    } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(st.step));
    }
    ++st.step;
    return loss.report;
}

/// Extractor named by the config: a PCNV file, or the seeded random stack.
template <std::floating_point T>
FeatureStack<T> make_extractor(const std::string& spec, std::uint64_t seed)
{
    if (spec.empty() || spec == "random") {
        return FeatureStack<T>::random_stack(derive_seed(seed, {0x76676700}));
    }
    return FeatureStack<float>::load(spec).template cast<T>();
}

namespace detail {

    template <std::floating_point T>
    void add_optimizer_state(PcnvArchive& ar, TrainState<T>& st, Phase phase)
    {
        ar.add("train.step", {1}, {static_cast<float>(st.step)});
        ar.add("train.phase", {1}, {phase == Phase::initial ? 0.0f : 1.0f});
        const auto params = st.net.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& a = st.adam[i];
            ar.add_vector("optim." + params[i].name + ".m", a.m);
            ar.add_vector("optim." + params[i].name + ".v", a.v);
            ar.add("optim." + params[i].name + ".t", {1}, {static_cast<float>(a.step_count)});
        }
    }

    template <std::floating_point T>
    bool restore_optimizer_state(const PcnvArchive& ar, TrainState<T>& st, Phase phase)
    {
        const PcnvEntry* ph = ar.find("train.phase");
        if (!ph || (ph->values.at(0) != 0.0f) != (phase == Phase::finetune)) {
            return false;
        }
        st.step = static_cast<std::uint64_t>(ar.at("train.step").values.at(0));
        const auto params = st.net.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& a = st.adam[i];
            a.m = ar.vector<T>("optim." + params[i].name + ".m");
            a.v = ar.vector<T>("optim." + params[i].name + ".v");
            a.step_count = static_cast<std::uint64_t>(ar.at("optim." + params[i].name + ".t").values.at(0));
            if (a.m.size() != params[i].values.size() || a.v.size() != params[i].values.size()) {
                throw LoadError("checkpoint optimizer state for '" + params[i].name + "' has the wrong size");
            }
        }
        return true;
    }

} // namespace detail

/// Everything the training loop needs besides the config.
template <std::floating_point T>
struct TrainData {
    std::vector<NamedImage<T>> images;
    std::vector<MaskImage> masks;
};

template <std::floating_point T>
TrainData<T> load_train_data(const TrainConfig& cfg, std::ostream* warn = &std::cerr)
{
    TrainData<T> d;
    d.images = load_image_folder<T>(cfg.image_dir, cfg.image_size, warn);
    if (d.images.empty()) {
        throw ConfigError("no readable images in '" + cfg.image_dir.string() + "'");
    }
    MaskSource src = MaskSource::parse(cfg.mask_source);
    src.pool_size = cfg.mask_pool_size;
    const std::size_t size = d.images.front().image.shape().h;
    d.masks = build_mask_pool(src, size, derive_seed(cfg.seed, {0x6d61736b}));
    return d;
}

struct TrainResult {
    std::vector<LossReport> log;
    std::filesystem::path final_checkpoint;
    double seconds = 0.0;
};

/// Pairs images and masks without replacement (independent reshuffles per
/// epoch), fully determined by the seed and the step index.
template <std::floating_point T>
class BatchSampler {
public:
    BatchSampler(const TrainData<T>& data, std::uint64_t seed)
        : data_(data), images_(data.images.size(), derive_seed(seed, {1})), masks_(data.masks.size(), derive_seed(seed, {2}))
    {
    }

    std::pair<Tensor4<T>, Tensor4<T>> next(std::size_t batch)
    {
        const Shape s = data_.images.front().image.shape();
        Tensor4<T> gt({batch, s.c, s.h, s.w});
        Tensor4<T> m({batch, 1, s.h, s.w});
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& img = data_.images[images_.next()].image;
            if (img.shape() != Shape{1, s.c, s.h, s.w}) {
                throw DimensionError("training images must share one size; resize them with data.size");
            }
            std::copy_n(img.plane(0, 0), s.c * s.plane(), gt.plane(b, 0));
            const auto& mask = data_.masks[masks_.next()];
            for (std::size_t i = 0; i < s.plane(); ++i) {
                m.plane(b, 0)[i] = mask.valid[i] ? T(1) : T(0);
            }
        }
        return {std::move(gt), std::move(m)};
    }

private:
    const TrainData<T>& data_;
    EpochSampler images_;
    EpochSampler masks_;
};

/// Runs one phase. Writes `<out_dir>/<phase>_stepNNNNNN.pcnv` every
/// checkpoint_every steps, `<out_dir>/<phase>_final.pcnv` at the end and
/// appends to `<out_dir>/<phase>_log.csv`. `progress` receives log lines.
template <std::floating_point T>
TrainResult run_training(const TrainConfig& cfg, const TrainData<T>& data, std::ostream* progress = nullptr)
{
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const FeatureStack<T> extractor = make_extractor<T>(cfg.extractor, cfg.seed);

    TrainState<T> st;
    bool resumed_optimizer = false;
    if (!cfg.resume.empty()) {
        const PcnvArchive ar = PcnvArchive::load(cfg.resume);
        st.net = Network<T>::from_archive(ar);
        st.reset_optimizer(cfg.lr());
        resumed_optimizer = detail::restore_optimizer_state(ar, st, cfg.phase);
        for (auto& a : st.adam) {
            a.learning_rate = cfg.lr();
        }
    } else {
        st.net = Network<T>::build(cfg.net, derive_seed(cfg.seed, {0x6e6574}));
        st.reset_optimizer(cfg.lr());
    }
    st.net.set_encoder_bn_frozen(cfg.phase == Phase::finetune);
    if (!resumed_optimizer) {
        st.step = 0;
    }

    BatchSampler<T> sampler(data, derive_seed(cfg.seed, {static_cast<std::uint64_t>(cfg.phase)}));
    for (std::uint64_t s = 0; s < st.step; ++s) {
        sampler.next(cfg.batch_size);
    }

    std::filesystem::create_directories(cfg.out_dir);
    const std::string prefix = phase_name(cfg.phase);
    std::ofstream log(cfg.out_dir / (prefix + "_log.csv"), resumed_optimizer ? std::ios::app : std::ios::trunc);
    if (!resumed_optimizer) {
        log << loss_log_header() << '\n';
    }

    auto save = [&](const std::filesystem::path& p) {
        PcnvArchive ar = st.net.to_archive();
        detail::add_optimizer_state(ar, st, cfg.phase);
        ar.save(p);
    };

    TrainResult res;
    const std::uint64_t end = static_cast<std::uint64_t>(cfg.iterations);
    while (st.step < end) {
        const auto [gt, masks] = sampler.next(cfg.batch_size);
        const std::uint64_t step = st.step;
        const LossReport r = train_step(st, extractor, gt, masks, cfg.weights, cfg.loss);
        res.log.push_back(r);
        const std::string line = loss_log_line(step, r);
        log << line << '\n';
        if (progress) {
            *progress << line << '\n';
        }
        if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 && st.step < end) {
            std::ostringstream name;
            name << prefix << "_step" << std::setw(6) << std::setfill('0') << st.step << ".pcnv";
            save(cfg.out_dir / name.str());
        }
    }
    log.flush();
    res.final_checkpoint = cfg.out_dir / (prefix + "_final.pcnv");
    save(res.final_checkpoint);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace pconv
