#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "pconv/pconv.hpp"

namespace fs = std::filesystem;
using namespace pconv;

namespace {

constexpr int exit_internal = 1;
constexpr int exit_user = 2;

/// Thrown for command-line values that parse but make no sense.
class UsageError : public Error {
public:
    using Error::Error;
};

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) {
        throw LoadError("cannot write '" + path.string() + "'");
    }
}

void require_file(const fs::path& p, const char* what)
{
    if (!fs::is_regular_file(p)) {
        throw LoadError(std::string(what) + " '" + p.string() + "' does not exist");
    }
}

Network<float> load_net(const fs::path& ckpt)
{
    require_file(ckpt, "checkpoint");
    return Network<float>::load(ckpt);
}

// ---- train

struct TrainArgs {
    fs::path config;
    std::string phase;
    fs::path resume;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> iterations;
    fs::path out_dir;
    std::vector<std::string> overrides;
    bool verbose = false;
};

int run_train(const TrainArgs& a)
{
    require_file(a.config, "config");
    KeyValueConfig kv = KeyValueConfig::load(a.config);
    for (const auto& o : a.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) {
            throw UsageError("--set expects key=value, got '" + o + "'");
        }
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    TrainConfig cfg = TrainConfig::read(kv);
    if (!a.phase.empty()) {
        cfg.phase = parse_phase(a.phase);
    }
    if (!a.resume.empty()) {
        require_file(a.resume, "checkpoint");
        cfg.resume = a.resume;
    }
    if (a.seed) {
        cfg.seed = *a.seed;
    }
    if (a.iterations) {
        cfg.iterations = *a.iterations;
    }
    if (!a.out_dir.empty()) {
        cfg.out_dir = a.out_dir;
    }
    cfg.validate();
    const auto data = load_train_data<float>(cfg);
    std::cout << "training " << phase_name(cfg.phase) << ": " << data.images.size() << " images, "
              << data.masks.size() << " masks, lr " << cfg.lr() << '\n';
    const auto res = run_training<float>(cfg, data, a.verbose ? &std::cout : nullptr);
    if (!res.log.empty()) {
        std::cout << "first " << loss_log_line(0, res.log.front()) << '\n'
                  << "last  " << loss_log_line(res.log.size() - 1, res.log.back()) << '\n';
    }
    std::cout << "wrote " << res.final_checkpoint.string() << " (" << res.seconds << " s)\n";
    return 0;
}

// ---- inpaint

int run_inpaint(const fs::path& ckpt, const fs::path& image_path, const fs::path& mask_path, const fs::path& out)
{
    const auto net = load_net(ckpt);
    const Image8 img = read_png(image_path);
    const MaskImage mask = MaskImage::load(mask_path);
    if (mask.height != img.height || mask.width != img.width) {
        throw DimensionError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                             " but mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    const auto x = image_to_tensor<float>(img);
    const auto m = mask.to_tensor<float>();
    const auto pred = net.infer(apply_holes(x, m), m);
    write_png(out, tensor_to_image(composite(pred, x, m), 0));
    return 0;
}

// ---- maskgen

int run_maskgen(const fs::path& out, std::size_t size, std::size_t per_cell, std::optional<double> margin,
                std::uint64_t seed)
{
    BenchmarkSpec spec;
    spec.size = size;
    spec.per_cell = per_cell;
    spec.margin = margin;
    spec.seed = seed;
    if (size < 32) {
        throw UsageError("--size must be at least 32");
    }
    const auto bench = build_benchmark(spec);
    bench.write(out);
    std::cout << "wrote " << bench.entries.size() << " masks (" << size << "x" << size << ", margin "
              << spec.border_margin() << ") to " << out.string() << '\n';
    return 0;
}

// ---- eval

struct EvalArgs {
    fs::path ckpt, images, benchmark, out, records;
    std::uint64_t seed = 0;
    bool raw = false;
    bool resize = false;
    std::string l1_region = "full";
};

int run_eval(const EvalArgs& a)
{
    const auto net = load_net(a.ckpt);
    const auto bench = MaskBenchmark::read(a.benchmark);
    if (bench.entries.empty()) {
        throw LoadError("benchmark '" + a.benchmark.string() + "' is empty");
    }
    const std::size_t size = a.resize ? bench.entries.front().mask.height : 0;
    const auto images = load_image_folder<float>(a.images, size);
    if (images.empty()) {
        throw LoadError("no readable images in '" + a.images.string() + "'");
    }
    EvalOptions opt;
    opt.seed = a.seed;
    opt.composited = !a.raw;
    opt.l1_region = a.l1_region == "hole" ? L1Region::hole : L1Region::full;
    const auto rep = evaluate_benchmark<float>(network_predictor(net), images, bench, opt);
    for (const auto& e : rep.errors) {
        std::cerr << "warning: " << e << '\n';
    }
    write_text(a.out, rep.to_csv());
    if (!a.records.empty()) {
        write_text(a.records, rep.records_csv());
    }
    std::cout << rep.to_text() << "evaluated " << rep.evaluated() << ", skipped " << rep.skipped() << '\n';
    return rep.evaluated() == 0 ? exit_user : 0;
}

// ---- superres

int run_superres(const fs::path& ckpt, const fs::path& in, std::size_t factor, const fs::path& out)
{
    const auto net = load_net(ckpt);
    const auto low = image_to_tensor<float>(read_png(in));
    write_png(out, tensor_to_image(superres(net, low, factor), 0));
    return 0;
}

// ---- gradcheck

int run_gradcheck_cmd(const GradcheckOptions& opt, const std::vector<std::string>& only)
{
    const auto results = run_gradcheck(opt, only);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-26s %-4s max rel err %.3e (tol %.0e, %zu entries)\n", r.primitive.c_str(),
                    r.passed() ? "PASS" : "FAIL", r.max_rel_error, r.tolerance, r.checked);
        ok = ok && r.passed();
    }
    std::fflush(stdout);
    if (!ok) {
        std::cerr << "gradient check failed\n";
    }
    return ok ? 0 : exit_internal;
}

// ---- export-config

int run_export_config(const std::string& preset, std::uint64_t seed, const fs::path& out)
{
    TrainConfig cfg;
    cfg.seed = seed;
    if (preset == "paper") {
        cfg.net = NetConfig::paper();
        cfg.image_size = 512;
        cfg.batch_size = 6;
    } else if (preset == "desk") {
        cfg.net = NetConfig::scaled(4, 0.25);
        cfg.image_size = 64;
        cfg.batch_size = 4;
        cfg.iterations = 1500;
        cfg.learning_rate = 2e-3;
    } else {
        throw UsageError("unknown preset '" + preset + "' (expected desk or paper)");
    }
    cfg.image_dir = "images";
    KeyValueConfig kv;
    cfg.write(kv);
    if (out.empty()) {
        std::cout << kv.to_text();
    } else {
        write_text(out, kv.to_text());
    }
    return 0;
}

// ---- synth-images

int run_synth_images(const fs::path& out, std::size_t count, std::size_t size, std::uint64_t seed)
{
    write_synthetic_folder(out, count, size, seed);
    std::cout << "wrote " << count << " images to " << out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Partial-convolution image inpainting"};
    app.require_subcommand(1);
    std::function<int()> action;

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train one phase from a key = value config");
    train->add_option("--config", ta.config, "Config file")->required();
    train->add_option("--phase", ta.phase, "initial or finetune (overrides train.phase)")
        ->check(CLI::IsMember({"initial", "finetune"}));
    train->add_option("--resume", ta.resume, "Checkpoint to continue from");
    train->add_option("--seed", ta.seed, "Overrides train.seed");
    train->add_option("--iterations", ta.iterations, "Overrides train.iterations (total step count)");
    train->add_option("--out-dir", ta.out_dir, "Overrides train.out_dir");
    train->add_option("--set", ta.overrides, "Extra key=value overrides");
    train->add_flag("--verbose", ta.verbose, "Print every loss line");
    train->callback([&] { action = [&] { return run_train(ta); }; });

    fs::path ckpt, image, mask_path, out;
    std::uint64_t seed = 0;
    auto* inpaint = app.add_subcommand("inpaint", "Fill the holes of one image");
    inpaint->add_option("--ckpt", ckpt)->required();
    inpaint->add_option("--image", image)->required();
    inpaint->add_option("--mask", mask_path, "Grayscale PNG, 0 = hole, 255 = valid")->required();
    inpaint->add_option("--out", out)->required();
    inpaint->add_option("--seed", seed, "Accepted for uniformity; inference is seed-independent");
    inpaint->callback([&] { action = [&] { return run_inpaint(ckpt, image, mask_path, out); }; });

    std::size_t size = 512, per_cell = 1000;
    std::optional<double> margin;
    auto* maskgen = app.add_subcommand("maskgen", "Generate the categorized mask benchmark");
    maskgen->add_option("--out", out, "Output directory")->required();
    maskgen->add_option("--size", size, "Mask side length")->capture_default_str();
    maskgen->add_option("--per-cell", per_cell, "Masks per (ratio bin, border) cell")->capture_default_str();
    maskgen->add_option("--margin", margin, "Border margin in pixels (default 50 * size / 512)");
    maskgen->add_option("--seed", seed)->capture_default_str();
    maskgen->callback([&] { action = [&] { return run_maskgen(out, size, per_cell, margin, seed); }; });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a mask benchmark");
    eval->add_option("--ckpt", ea.ckpt)->required();
    eval->add_option("--images", ea.images, "Folder of PNG images")->required();
    eval->add_option("--benchmark", ea.benchmark, "Directory written by maskgen")->required();
    eval->add_option("--out", ea.out, "Per-cell CSV")->required();
    eval->add_option("--records", ea.records, "Optional per-image CSV");
    eval->add_option("--seed", ea.seed, "Mask-to-image assignment seed")->capture_default_str();
    eval->add_option("--l1-region", ea.l1_region)->check(CLI::IsMember({"full", "hole"}))->capture_default_str();
    eval->add_flag("--raw", ea.raw, "Score the raw network output instead of the composite");
    eval->add_flag("--resize", ea.resize, "Center-crop and resize images to the benchmark size");
    eval->callback([&] { action = [&] { return run_eval(ea); }; });

    std::size_t factor = 2;
    auto* sr = app.add_subcommand("superres", "Upscale by filling offset-placed pixels");
    sr->add_option("--ckpt", ckpt)->required();
    sr->add_option("--in", image)->required();
    sr->add_option("--factor", factor)->required()->check(CLI::PositiveNumber);
    sr->add_option("--out", out)->required();
    sr->add_option("--seed", seed, "Accepted for uniformity; inference is seed-independent");
    sr->callback([&] { action = [&] { return run_superres(ckpt, image, factor, out); }; });

    GradcheckOptions go;
    std::vector<std::string> only;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    gc->add_option("--seed", go.seed)->capture_default_str();
    gc->add_option("--size", go.size, "Spatial size of the per-primitive problems")->capture_default_str();
    gc->add_option("--only", only, "Restrict to these primitives");
    gc->add_option("--corrupt", go.corrupt, "Negative control: perturb this primitive's analytic gradient");
    gc->callback([&] { action = [&] { return run_gradcheck_cmd(go, only); }; });

    std::string preset = "desk";
    auto* ec = app.add_subcommand("export-config", "Print a complete training config");
    ec->add_option("--preset", preset, "desk or paper")->capture_default_str();
    ec->add_option("--seed", seed)->capture_default_str();
    ec->add_option("--out", out, "File to write (stdout when omitted)");
    ec->callback([&] { action = [&] { return run_export_config(preset, seed, out); }; });

    std::size_t count = 200;
    std::size_t img_size = 64;
    auto* si = app.add_subcommand("synth-images", "Write a folder of procedural training images");
    si->add_option("--out", out)->required();
    si->add_option("--count", count)->capture_default_str();
    si->add_option("--size", img_size)->capture_default_str();
    si->add_option("--seed", seed)->capture_default_str();
    si->callback([&] { action = [&] { return run_synth_images(out, count, img_size, seed); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_user;
    }

    try {
        return action();
    } catch (const std::exception& e) {
        const bool user = dynamic_cast<const UsageError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
                          dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
                          dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const ContractError*>(&e);
        std::cerr << (user ? "error: " : "internal error: ") << e.what() << '\n';
        return user ? exit_user : exit_internal;
    }
}
