#pragma once

// U-Net of partial convolutions with joint feature/mask skip links.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pconv/config.hpp"
#include "pconv/core/init.hpp"
#include "pconv/core/ops.hpp"
#include "pconv/core/pcnv.hpp"
#include "pconv/core/random.hpp"
#include "pconv/partial_conv.hpp"

namespace pconv {

inline constexpr const char* input_skip_name = "input";

struct LayerSpec {
    std::string name;
    std::size_t kernel = 3;
    std::size_t channels_out = 1;
    /// Convolution stride for encoder layers; nearest-upsample factor for
    /// decoder layers, whose convolution always runs at stride 1.
    std::size_t stride_or_upfactor = 1;
    bool has_bn = false;
    Activation nonlinearity = Activation::identity();
    /// Set on decoder layers: the encoder layer (or "input") concatenated
    /// after upsampling.
    std::optional<std::string> skip_source;

    bool is_decoder() const noexcept { return skip_source.has_value(); }
    bool operator==(const LayerSpec&) const = default;
};

struct NetConfig {
    std::size_t input_channels = 3;
    std::vector<LayerSpec> layers;
    MaskNormalization mask_normalization = MaskNormalization::across_channels;
    double depth_scale = 1.0; // informational: encoder depth relative to the full net
    double width_scale = 1.0; // informational: channel width relative to the full net

    std::size_t encoder_depth() const
    {
        std::size_t n = 0;
        for (const auto& l : layers) {
            n += l.is_decoder() ? 0 : 1;
        }
        return n;
    }

    /// Spatial dims of the input must be multiples of this.
    std::size_t required_divisor() const
    {
        std::size_t d = 1;
        for (const auto& l : layers) {
            if (!l.is_decoder()) {
                d *= l.stride_or_upfactor;
            }
        }
        return d;
    }

    /// Index of a layer by name, or -1 for the holed input image.
    int index_of(const std::string& name) const
    {
        if (name == input_skip_name) {
            return -1;
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].name == name) {
                return static_cast<int>(i);
            }
        }
        throw ConfigError("unknown layer '" + name + "'");
    }

    std::size_t channels_of(int index) const
    {
        return index < 0 ? input_channels : layers[static_cast<std::size_t>(index)].channels_out;
    }

    void validate() const
    {
        if (input_channels == 0) {
            throw ConfigError("input_channels must be positive");
        }
        if (layers.empty()) {
            throw ConfigError("network has no layers");
        }
        std::set<std::string> names;
        bool seen_decoder = false;
        for (const auto& l : layers) {
            if (l.name.empty() || l.name == input_skip_name || !names.insert(l.name).second) {
                throw ConfigError("layer name '" + l.name + "' is empty, reserved or duplicated");
            }
            if (l.kernel % 2 == 0) {
                throw ConfigError(l.name + ": kernel must be odd");
            }
            if (l.channels_out == 0 || l.stride_or_upfactor == 0) {
                throw ConfigError(l.name + ": channels and stride must be positive");
            }
            if (l.nonlinearity.kind == ActivationKind::leaky_relu && !(l.nonlinearity.slope >= 0.0)) {
                throw ConfigError(l.name + ": leaky slope must be non-negative");
            }
            if (l.is_decoder()) {
                seen_decoder = true;
            } else if (seen_decoder) {
                throw ConfigError(l.name + ": encoder layers must precede decoder layers");
            }
        }
        const std::size_t enc = encoder_depth();
        const std::size_t dec = layers.size() - enc;
        if (enc == 0 || dec != enc) {
            throw ConfigError("inconsistent skip shapes: " + std::to_string(enc) + " encoder layers but " +
                              std::to_string(dec) + " decoder layers");
        }

        // Skip sources must cover {encoder 1..E-1, input} exactly once.
        std::set<int> used;
        for (std::size_t i = enc; i < layers.size(); ++i) {
            const int s = index_of(*layers[i].skip_source);
            if (s >= static_cast<int>(enc) - 1) {
                throw ConfigError(layers[i].name + ": skip source '" + *layers[i].skip_source +
                                  "' must be an encoder layer other than the deepest, or 'input'");
            }
            if (!used.insert(s).second) {
                throw ConfigError("inconsistent skip shapes: skip source '" + *layers[i].skip_source +
                                  "' used twice");
            }
        }

        // Walk a nominal input size through the net; every concat must line up.
        const std::size_t base = required_divisor() * 2;
        std::vector<std::size_t> extent(layers.size());
        std::size_t cur = base;
        for (std::size_t i = 0; i < enc; ++i) {
            cur = conv_out_extent(cur, layers[i].kernel, layers[i].stride_or_upfactor, layers[i].kernel / 2);
            extent[i] = cur;
        }
        for (std::size_t i = enc; i < layers.size(); ++i) {
            const int s = index_of(*layers[i].skip_source);
            const std::size_t skip_extent = s < 0 ? base : extent[static_cast<std::size_t>(s)];
            if (cur * layers[i].stride_or_upfactor != skip_extent) {
                throw ConfigError("inconsistent skip shapes at " + layers[i].name + ": upsampled extent " +
                                  std::to_string(cur * layers[i].stride_or_upfactor) + " vs skip extent " +
                                  std::to_string(skip_extent));
            }
            cur = skip_extent;
            extent[i] = cur;
        }
        if (layers.back().channels_out != input_channels) {
            throw ConfigError("last layer must output " + std::to_string(input_channels) + " channels");
        }
    }

    /// The full network: 8 encoder and 8 decoder partial-conv layers.
    static NetConfig paper() { return scaled(8, 1.0); }

    /// Same layout as the full net truncated to `encoder_depth` encoder
    /// layers, with every width multiplied by `width_scale`.
    static NetConfig scaled(std::size_t encoder_depth, double width_scale)
    {
        struct Row {
            std::size_t kernel, channels;
        };
        static constexpr Row rows[8] = {{7, 64}, {5, 128}, {5, 256}, {3, 512}, {3, 512}, {3, 512}, {3, 512}, {3, 512}};
        if (encoder_depth < 1 || encoder_depth > 8) {
            throw ConfigError("encoder depth must be in [1, 8]");
        }
        if (!(width_scale > 0.0)) {
            throw ConfigError("width scale must be positive");
        }
        NetConfig cfg;
        cfg.depth_scale = static_cast<double>(encoder_depth) / 8.0;
        cfg.width_scale = width_scale;
        const std::size_t E = encoder_depth;
        for (std::size_t i = 0; i < E; ++i) {
            LayerSpec l;
            l.name = "PConv" + std::to_string(i + 1);
            l.kernel = rows[i].kernel;
            l.channels_out = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(static_cast<double>(rows[i].channels) * width_scale)));
            l.stride_or_upfactor = 2;
            l.has_bn = i != 0;
            l.nonlinearity = Activation::relu();
            cfg.layers.push_back(l);
        }
        for (std::size_t j = 0; j < E; ++j) {
            const bool last = j + 1 == E;
            LayerSpec l;
            l.name = "PConv" + std::to_string(E + j + 1);
            l.kernel = 3;
            l.stride_or_upfactor = 2;
            l.skip_source = last ? std::string(input_skip_name) : cfg.layers[E - 2 - j].name;
            l.channels_out = last ? cfg.input_channels : cfg.layers[E - 2 - j].channels_out;
            l.has_bn = !last;
            l.nonlinearity = last ? Activation::identity() : Activation::leaky_relu(0.2);
            cfg.layers.push_back(l);
        }
        return cfg;
    }

    void write(KeyValueConfig& kv) const
    {
        kv.set("net.input_channels", std::to_string(input_channels));
        kv.set("net.mask_normalization",
               mask_normalization == MaskNormalization::per_channel ? "per_channel" : "across_channels");
        std::string names;
        for (const auto& l : layers) {
            names += (names.empty() ? "" : ",") + l.name;
        }
        kv.set("net.layers", names);
        for (const auto& l : layers) {
            const std::string p = "layer." + l.name + ".";
            kv.set(p + "kernel", std::to_string(l.kernel));
            kv.set(p + "channels", std::to_string(l.channels_out));
            kv.set(p + (l.is_decoder() ? "upsample" : "stride"), std::to_string(l.stride_or_upfactor));
            kv.set(p + "bn", l.has_bn ? "true" : "false");
            kv.set(p + "act", activation_name(l.nonlinearity));
            if (l.skip_source) {
                kv.set(p + "skip", *l.skip_source);
            }
        }
    }

    /// Reads either an explicit layer list (`net.layers` + `layer.<name>.*`)
    /// or a preset (`net.preset = paper | scaled` with `net.depth`,
    /// `net.width_scale`).
    static NetConfig read(const KeyValueConfig& kv)
    {
        NetConfig cfg;
        if (kv.has("net.layers")) {
            cfg.input_channels = static_cast<std::size_t>(kv.get_int("net.input_channels", 3));
            for (const auto& name : split_list(kv.get("net.layers"))) {
                const std::string p = "layer." + name + ".";
                LayerSpec l;
                l.name = name;
                l.kernel = static_cast<std::size_t>(kv.get_int(p + "kernel"));
                l.channels_out = static_cast<std::size_t>(kv.get_int(p + "channels"));
                if (auto s = kv.find(p + "skip")) {
                    l.skip_source = *s;
                    l.stride_or_upfactor = static_cast<std::size_t>(kv.get_int(p + "upsample", 2));
                } else {
                    l.stride_or_upfactor = static_cast<std::size_t>(kv.get_int(p + "stride", 1));
                }
                l.has_bn = kv.get_bool(p + "bn", false);
                l.nonlinearity = parse_activation(kv.get_or(p + "act", "none"));
                cfg.layers.push_back(l);
            }
        } else {
            const std::string preset = kv.get_or("net.preset", "paper");
            if (preset == "paper") {
                cfg = paper();
            } else if (preset == "scaled") {
                cfg = scaled(static_cast<std::size_t>(kv.get_int("net.depth", 4)), kv.get_double("net.width_scale", 0.25));
            } else {
                throw ConfigError("unknown net.preset '" + preset + "'");
            }
        }
        const std::string norm = kv.get_or("net.mask_normalization", "across_channels");
        if (norm == "per_channel") {
            cfg.mask_normalization = MaskNormalization::per_channel;
        } else if (norm != "across_channels") {
            throw ConfigError("unknown net.mask_normalization '" + norm + "'");
        }
        cfg.validate();
        return cfg;
    }

    static std::string activation_name(Activation a)
    {
        switch (a.kind) {
        case ActivationKind::relu:
            return "relu";
        case ActivationKind::leaky_relu: {
            std::ostringstream os;
            os << "leaky_relu(" << a.slope << ")";
            return os.str();
        }
        case ActivationKind::none:
            break;
        }
        return "none";
    }

    static Activation parse_activation(const std::string& s)
    {
        if (s == "relu") {
            return Activation::relu();
        }
        if (s == "none") {
            return Activation::identity();
        }
        if (s == "leaky_relu") {
            return Activation::leaky_relu(0.2);
        }
        if (s.starts_with("leaky_relu(") && s.ends_with(")")) {
            try {
                return Activation::leaky_relu(std::stod(s.substr(11, s.size() - 12)));
            } catch (const std::exception&) {
            }
        }
        throw ConfigError("unknown activation '" + s + "'");
    }
};

template <std::floating_point T>
struct NetLayer {
    LayerSpec spec;
    PartialConvLayer<T> conv;
    std::optional<BatchNormState<T>> bn;
    int skip_index = -1; // decoder only; -1 = holed input

    bool is_decoder() const noexcept { return spec.is_decoder(); }
};

template <std::floating_point T>
struct LayerTrace {
    MaskedTensor<T> input; // what the partial conv consumed (after upsample/concat)
    Tensor4<T> pre_activation;
    BatchNormCache<T> bn_cache;
    MaskedTensor<T> output;
    std::size_t upsampled_channels = 0;
};

template <std::floating_point T>
struct ForwardTrace {
    std::vector<LayerTrace<T>> layers;
};

template <std::floating_point T>
struct LayerGrads {
    Tensor4<T> weights;
    std::vector<T> bias;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <std::floating_point T>
struct NetworkGrads {
    std::vector<LayerGrads<T>> layers;
};

/// A named view of one parameter vector and its gradient.
template <std::floating_point T>
struct ParamView {
    std::string name;
    std::span<T> values;
    std::span<const T> grad; // empty when no gradient was supplied
    bool trainable = true;
};

/// Replicates a single-channel mask to `channels`, or returns it unchanged
/// when it already has that many.
template <std::floating_point T>
Tensor4<T> replicate_mask(const Tensor4<T>& mask, std::size_t channels)
{
    const Shape s = mask.shape();
    if (s.c == channels) {
        return mask;
    }
    if (s.c != 1) {
        throw DimensionError("mask must have 1 or " + std::to_string(channels) + " channels, got " + s.str());
    }
    Tensor4<T> out({s.n, channels, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::copy_n(mask.plane(n, 0), s.plane(), out.plane(n, c));
        }
    }
    return out;
}

template <std::floating_point T>
class Network {
public:
    static Network build(const NetConfig& config, std::uint64_t seed)
    {
        config.validate();
        Network net;
        net.config_ = config;
        for (std::size_t i = 0; i < config.layers.size(); ++i) {
            const LayerSpec& spec = config.layers[i];
            NetLayer<T> layer;
            layer.spec = spec;
            std::size_t cin = 0;
            if (spec.is_decoder()) {
                layer.skip_index = config.index_of(*spec.skip_source);
                cin = config.layers[i - 1].channels_out + config.channels_of(layer.skip_index);
            } else {
                cin = i == 0 ? config.input_channels : config.layers[i - 1].channels_out;
            }
            const std::size_t k = spec.kernel;
            auto& p = layer.conv.params;
            p.weights = he_init<T>({spec.channels_out, cin, k, k}, cin * k * k, derive_seed(seed, {i}));
            p.bias.assign(spec.channels_out, T(0));
            p.stride = spec.is_decoder() ? 1 : spec.stride_or_upfactor;
            p.padding = k / 2;
            layer.conv.normalization = config.mask_normalization;
            if (spec.has_bn) {
                layer.bn = BatchNormState<T>::identity(spec.channels_out);
            }
            net.layers_.push_back(std::move(layer));
        }
        net.round_to_storage();
        return net;
    }

    const NetConfig& config() const noexcept { return config_; }
    std::vector<NetLayer<T>>& layers() noexcept { return layers_; }
    const std::vector<NetLayer<T>>& layers() const noexcept { return layers_; }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& l : layers_) {
            n += l.conv.params.weights.size() + l.conv.params.bias.size();
            if (l.bn) {
                n += 2 * l.bn->channels();
            }
        }
        return n;
    }

    /// Freezes (or unfreezes) batch normalization in the encoder layers.
    void set_encoder_bn_frozen(bool frozen)
    {
        for (auto& l : layers_) {
            if (!l.is_decoder() && l.bn) {
                l.bn->frozen = frozen;
            }
        }
    }

    /// Training mode updates non-frozen BN running statistics, hence
    /// non-const. `trace` receives everything `backward` needs.
    Tensor4<T> forward(const Tensor4<T>& image, const Tensor4<T>& mask, bool training,
                       ForwardTrace<T>* trace = nullptr)
    {
        return run(image, mask, training, trace);
    }

    /// Evaluation-mode forward; safe to call concurrently.
    Tensor4<T> infer(const Tensor4<T>& image, const Tensor4<T>& mask) const
    {
        return const_cast<Network*>(this)->run(image, mask, false, nullptr);
    }

    /// Final-layer output mask and every intermediate mask, for inspection.
    std::vector<Tensor4<T>> layer_masks(const Tensor4<T>& image, const Tensor4<T>& mask) const
    {
        ForwardTrace<T> tr;
        const_cast<Network*>(this)->run(image, mask, false, &tr);
        std::vector<Tensor4<T>> out;
        for (auto& l : tr.layers) {
            out.push_back(std::move(l.output.mask));
        }
        return out;
    }

    NetworkGrads<T> backward(const ForwardTrace<T>& trace, const Tensor4<T>& grad_output) const
    {
        const std::size_t L = layers_.size();
        if (trace.layers.size() != L) {
            throw ContractError("backward: trace does not belong to this network");
        }
        require_same_shape(grad_output.shape(), trace.layers.back().output.features.shape(), "network backward");
        NetworkGrads<T> grads;
        grads.layers.resize(L);
        std::vector<Tensor4<T>> out_grad(L);
        out_grad[L - 1] = grad_output;
        auto accumulate = [&](std::size_t i, Tensor4<T>&& g) {
            if (out_grad[i].empty()) {
                out_grad[i] = std::move(g);
            } else {
                out_grad[i] += g;
            }
        };

        for (std::size_t ii = L; ii-- > 0;) {
            const NetLayer<T>& layer = layers_[ii];
            const LayerTrace<T>& lt = trace.layers[ii];
            Tensor4<T> g = activation_backward(lt.pre_activation, layer.spec.nonlinearity, out_grad[ii]);
            out_grad[ii] = Tensor4<T>();
            LayerGrads<T>& lg = grads.layers[ii];
            if (layer.bn) {
                auto bg = batchnorm_backward(g, *layer.bn, lt.bn_cache);
                g = std::move(bg.input);
                lg.gamma = std::move(bg.gamma);
                lg.beta = std::move(bg.beta);
            }
            auto cg = partial_conv_backward(lt.input, layer.conv, g);
            lg.weights = std::move(cg.weights);
            lg.bias = std::move(cg.bias);
            if (!layer.is_decoder()) {
                if (ii > 0) {
                    accumulate(ii - 1, std::move(cg.input));
                }
                continue;
            }
            auto [g_up, g_skip] = split_channels(cg.input, lt.upsampled_channels);
            accumulate(ii - 1, nearest_upsample_backward(g_up, layer.spec.stride_or_upfactor));
            if (layer.skip_index >= 0) {
                accumulate(static_cast<std::size_t>(layer.skip_index), std::move(g_skip));
            }
        }
        return grads;
    }

    /// Parameter views in a fixed order; when `grads` is given each view
    /// carries its gradient. Frozen encoder BN parameters are marked
    /// non-trainable.
    std::vector<ParamView<T>> parameters(const NetworkGrads<T>* grads = nullptr)
    {
        std::vector<ParamView<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto& l = layers_[i];
            const LayerGrads<T>* g = grads ? &grads->layers.at(i) : nullptr;
            out.push_back({l.spec.name + ".weight", l.conv.params.weights.values(),
                           g ? std::span<const T>(g->weights.values()) : std::span<const T>{}, true});
            out.push_back({l.spec.name + ".bias", l.conv.params.bias, g ? std::span<const T>(g->bias) : std::span<const T>{},
                           true});
            if (l.bn) {
                const bool trainable = !l.bn->frozen;
                out.push_back({l.spec.name + ".bn.gamma", l.bn->gamma,
                               g ? std::span<const T>(g->gamma) : std::span<const T>{}, trainable});
                out.push_back({l.spec.name + ".bn.beta", l.bn->beta,
                               g ? std::span<const T>(g->beta) : std::span<const T>{}, trainable});
            }
        }
        return out;
    }

    /// Snaps every parameter and BN statistic to the nearest f32 so a PCNV
    /// save/load cycle is lossless.
    void round_to_storage()
    {
        auto snap = [](std::span<T> v) {
            for (auto& x : v) {
                x = static_cast<T>(static_cast<float>(x));
            }
        };
        for (auto& l : layers_) {
            snap(l.conv.params.weights.values());
            snap(l.conv.params.bias);
            if (l.bn) {
                snap(l.bn->gamma);
                snap(l.bn->beta);
                snap(l.bn->running_mean);
                snap(l.bn->running_var);
            }
        }
    }

    PcnvArchive to_archive() const
    {
        PcnvArchive ar;
        ar.add("arch.input_channels", {1}, {static_cast<float>(config_.input_channels)});
        ar.add("arch.mask_normalization", {1},
               {config_.mask_normalization == MaskNormalization::per_channel ? 1.0f : 0.0f});
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& s = layers_[i].spec;
            const float skip = s.is_decoder() ? static_cast<float>(layers_[i].skip_index + 1) : -1.0f;
            ar.add("arch.layer." + s.name, {8},
                   {static_cast<float>(i), static_cast<float>(s.kernel), static_cast<float>(s.channels_out),
                    static_cast<float>(s.stride_or_upfactor), s.has_bn ? 1.0f : 0.0f,
                    static_cast<float>(static_cast<int>(s.nonlinearity.kind)),
                    static_cast<float>(s.nonlinearity.slope), skip});
        }
        for (const auto& l : layers_) {
            const std::string& n = l.spec.name;
            ar.add_tensor(n + ".weight", l.conv.params.weights);
            ar.add_vector(n + ".bias", l.conv.params.bias);
            if (l.bn) {
                ar.add_vector(n + ".bn.gamma", l.bn->gamma);
                ar.add_vector(n + ".bn.beta", l.bn->beta);
                ar.add_vector(n + ".bn.running_mean", l.bn->running_mean);
                ar.add_vector(n + ".bn.running_var", l.bn->running_var);
                ar.add(n + ".bn.frozen", {1}, {l.bn->frozen ? 1.0f : 0.0f});
            }
        }
        return ar;
    }

    static Network from_archive(const PcnvArchive& ar)
    {
        NetConfig cfg;
        cfg.input_channels = static_cast<std::size_t>(ar.at("arch.input_channels").values.at(0));
        if (const PcnvEntry* e = ar.find("arch.mask_normalization"); e && e->values.at(0) != 0.0f) {
            cfg.mask_normalization = MaskNormalization::per_channel;
        }
        std::map<std::size_t, std::pair<std::string, std::vector<float>>> rows;
        for (const auto& e : ar.entries()) {
            if (e.name.starts_with("arch.layer.")) {
                if (e.values.size() != 8) {
                    throw LoadError("pcnv: malformed architecture entry '" + e.name + "'");
                }
                rows[static_cast<std::size_t>(e.values[0])] = {e.name.substr(11), e.values};
            }
        }
        if (rows.empty()) {
            throw LoadError("pcnv: checkpoint has no architecture entries");
        }
        std::vector<std::string> names;
        for (const auto& [idx, row] : rows) {
            if (idx != names.size()) {
                throw LoadError("pcnv: architecture layer indices are not contiguous");
            }
            names.push_back(row.first);
        }
        for (const auto& [idx, row] : rows) {
            const auto& v = row.second;
            LayerSpec s;
            s.name = row.first;
            s.kernel = static_cast<std::size_t>(v[1]);
            s.channels_out = static_cast<std::size_t>(v[2]);
            s.stride_or_upfactor = static_cast<std::size_t>(v[3]);
            s.has_bn = v[4] != 0.0f;
            const int kind = static_cast<int>(v[5]);
            if (kind < 0 || kind > 2) {
                throw LoadError("pcnv: unknown activation code in '" + s.name + "'");
            }
            // Slopes are short decimals; undo the f32 round trip.
            s.nonlinearity = {static_cast<ActivationKind>(kind), std::round(static_cast<double>(v[6]) * 1e6) / 1e6};
            const int skip = static_cast<int>(v[7]);
            if (skip == 0) {
                s.skip_source = std::string(input_skip_name);
            } else if (skip > 0) {
                if (static_cast<std::size_t>(skip) > names.size()) {
                    throw LoadError("pcnv: bad skip index in '" + s.name + "'");
                }
                s.skip_source = names[static_cast<std::size_t>(skip - 1)];
            }
            cfg.layers.push_back(s);
        }
        try {
            cfg.validate();
        } catch (const ConfigError& e) {
            throw LoadError(std::string("pcnv: checkpoint architecture invalid: ") + e.what());
        }

        Network net = build(cfg, 0);
        for (auto& l : net.layers_) {
            const std::string& n = l.spec.name;
            auto w = ar.tensor<T>(n + ".weight");
            if (w.shape() != l.conv.params.weights.shape()) {
                throw LoadError("pcnv: '" + n + ".weight' has shape " + w.shape().str() + ", expected " +
                                l.conv.params.weights.shape().str());
            }
            l.conv.params.weights = std::move(w);
            l.conv.params.bias = load_vector(ar, n + ".bias", l.spec.channels_out);
            if (l.bn) {
                l.bn->gamma = load_vector(ar, n + ".bn.gamma", l.spec.channels_out);
                l.bn->beta = load_vector(ar, n + ".bn.beta", l.spec.channels_out);
                l.bn->running_mean = load_vector(ar, n + ".bn.running_mean", l.spec.channels_out);
                l.bn->running_var = load_vector(ar, n + ".bn.running_var", l.spec.channels_out);
                if (const PcnvEntry* e = ar.find(n + ".bn.frozen")) {
                    l.bn->frozen = e->values.at(0) != 0.0f;
                }
            }
        }
        return net;
    }

    void save(const std::filesystem::path& path) const { to_archive().save(path); }
    static Network load(const std::filesystem::path& path) { return from_archive(PcnvArchive::load(path)); }

private:
    static std::vector<T> load_vector(const PcnvArchive& ar, const std::string& name, std::size_t expected)
    {
        auto v = ar.vector<T>(name);
        if (v.size() != expected) {
            throw LoadError("pcnv: '" + name + "' has " + std::to_string(v.size()) + " values, expected " +
                            std::to_string(expected));
        }
        for (T x : v) {
            if (!std::isfinite(x)) {
                throw LoadError("pcnv: '" + name + "' contains non-finite values");
            }
        }
        return v;
    }

    Tensor4<T> run(const Tensor4<T>& image, const Tensor4<T>& mask_in, bool training, ForwardTrace<T>* trace)
    {
        const Shape s = image.shape();
        if (s.c != config_.input_channels) {
            throw DimensionError("network expects " + std::to_string(config_.input_channels) +
                                 "-channel images, got " + s.str());
        }
        const std::size_t div = config_.required_divisor();
        if (s.h % div != 0 || s.w % div != 0 || s.h == 0 || s.w == 0) {
            throw ConfigError("image size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                              " is not divisible by " + std::to_string(div) + "; pad or crop the input");
        }
        Tensor4<T> mask = replicate_mask(mask_in, s.c);
        if (mask.shape() != s) {
            throw DimensionError("mask shape " + mask_in.shape().str() + " does not match image " + s.str());
        }
        require_binary(mask, "network input mask");

        const MaskedTensor<T> input{image, mask};
        if (trace) {
            trace->layers.assign(layers_.size(), {});
        }
        std::vector<MaskedTensor<T>> outputs(layers_.size());
        // Encoder outputs referenced by a skip link are kept until consumed.
        std::vector<bool> needed(layers_.size(), false);
        for (const auto& l : layers_) {
            if (l.is_decoder() && l.skip_index >= 0) {
                needed[static_cast<std::size_t>(l.skip_index)] = true;
            }
        }

        const MaskedTensor<T>* prev = &input;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            NetLayer<T>& layer = layers_[i];
            MaskedTensor<T> x;
            std::size_t up_channels = 0;
            if (layer.is_decoder()) {
                const std::size_t f = layer.spec.stride_or_upfactor;
                const MaskedTensor<T>& skip =
                    layer.skip_index < 0 ? input : outputs[static_cast<std::size_t>(layer.skip_index)];
                auto up_f = nearest_upsample(prev->features, f);
                auto up_m = nearest_upsample(prev->mask, f);
                up_channels = up_f.shape().c;
                x.features = concat_channels(up_f, skip.features);
                x.mask = concat_channels(up_m, skip.mask);
            } else {
                x = *prev;
            }

            MaskedTensor<T> y = partial_conv_forward(x, layer.conv);
            LayerTrace<T>* lt = trace ? &trace->layers[i] : nullptr;
            if (layer.bn) {
                y.features = batchnorm_forward(y.features, *layer.bn, training, lt ? &lt->bn_cache : nullptr);
            }
            if (lt) {
                lt->input = std::move(x);
                lt->pre_activation = y.features;
                lt->upsampled_channels = up_channels;
            }
            y.features = activation(y.features, layer.spec.nonlinearity);
            if (lt) {
                lt->output = y;
            }
            outputs[i] = std::move(y);
            if (i > 0 && !needed[i - 1] && !trace) {
                outputs[i - 1] = MaskedTensor<T>();
            }
            prev = &outputs[i];
        }
        return std::move(outputs.back().features);
    }

    NetConfig config_;
    std::vector<NetLayer<T>> layers_;
};

/// I_comp = M * I_gt + (1 - M) * I_out, with a binary M selecting exactly.
template <std::floating_point T>
Tensor4<T> composite(const Tensor4<T>& output, const Tensor4<T>& ground_truth, const Tensor4<T>& mask_in)
{
    require_same_shape(output.shape(), ground_truth.shape(), "composite");
    const Tensor4<T> mask = replicate_mask(mask_in, output.shape().c);
    require_same_shape(output.shape(), mask.shape(), "composite mask");
    Tensor4<T> out(output.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = mask[i] != T(0) ? ground_truth[i] : output[i];
    }
    return out;
}

} // namespace pconv
