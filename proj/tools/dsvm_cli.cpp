#include "dsvm/config.hpp"
#include "dsvm/data.hpp"
#include "dsvm/engine.hpp"
#include "dsvm/error.hpp"
#include "dsvm/log.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace dsvm;
namespace fs = std::filesystem;

namespace {

constexpr const char* kOutputRootEnv = "DSVM_OUTPUT_ROOT";

fs::path output_root() {
    const char* env = std::getenv(kOutputRootEnv);
    return env && *env ? fs::path(env) : fs::path("runs");
}

// Removes a freshly prepared output directory unless commit() is called.
class OutputGuard {
public:
    explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {}
    OutputGuard(const OutputGuard&) = delete;
    OutputGuard& operator=(const OutputGuard&) = delete;
    ~OutputGuard() {
        if (!armed_) return;
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }
    void commit() { armed_ = false; }

private:
    fs::path dir_;
    bool armed_ = true;
};

bool non_empty_dir(const fs::path& p) {
    return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

void prepare_output(const fs::path& dir, bool force) {
    if (non_empty_dir(dir)) {
        if (!force) throw ConfigError(dir.string() + " exists and is not empty (use --force to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw DataError("cannot write " + path.string());
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t pos = 0;
            out.push_back(std::stoull(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("--seeds: '" + tok + "' is not a non-negative integer");
        }
    }
    require_config(!out.empty(), "--seeds is empty");
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TrainConfig preset_config(const std::string& preset) {
    if (preset == "desk") return TrainConfig::desk();
    if (preset == "paper-scale") return TrainConfig::paper();
    throw ConfigError("unknown preset '" + preset + "'");
}

// ---------------------------------------------------------------- shared train flags

struct TrainFlags {
    std::string preset = "desk";
    std::string config_file;
    std::string data;
    uint64_t seed = 0;
    int64_t epochs = 20;
    int64_t batch_size = 8;
    double lr = 1e-3;
    double alpha = 1.0;
    double beta = 0.5;
    int64_t classes = 2;
    int64_t size = 64;
    int64_t base_dim = 16;
    std::string schedule = "cosine";
    double grad_clip = 0.0;
    int threads = 1;
    std::vector<std::string> sets;
    std::string out;
    bool force = false;

    std::map<std::string, CLI::Option*> opts;

    void add(CLI::App* app, bool with_seed) {
        app->add_option("--preset", preset, "Base configuration: desk or paper-scale")
            ->check(CLI::IsMember({"desk", "paper-scale"}))
            ->capture_default_str();
        app->add_option("--config", config_file, "key = value file layered over the preset")
            ->check(CLI::ExistingFile);
        opts["data.root"] = app->add_option("--data", data, "Dataset root with train/ and val/ splits");
        if (with_seed) opts["train.seed"] = app->add_option("--seed", seed, "Random seed")->capture_default_str();
        opts["train.epochs"] = app->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
        opts["train.batch_size"] =
            app->add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str();
        opts["train.base_lr"] = app->add_option("--lr", lr, "Initial learning rate")->capture_default_str();
        opts["loss.alpha"] =
            app->add_option("--alpha", alpha, "Projection distillation weight")->capture_default_str();
        opts["loss.beta"] =
            app->add_option("--beta", beta, "Progressive distillation weight")->capture_default_str();
        opts["model.num_classes"] =
            app->add_option("--classes", classes, "Classes including background (2 = binary)")
                ->capture_default_str();
        opts["model.input_size"] =
            app->add_option("--size", size, "Input side length (multiple of 32)")->capture_default_str();
        opts["model.base_dim"] =
            app->add_option("--base-dim", base_dim, "Channels C of the first level")->capture_default_str();
        opts["train.schedule"] = app->add_option("--schedule", schedule, "cosine or clamp")
                                     ->check(CLI::IsMember({"cosine", "clamp"}))
                                     ->capture_default_str();
        opts["train.grad_clip"] =
            app->add_option("--grad-clip", grad_clip, "Max gradient norm (0 = off)")->capture_default_str();
        opts["train.threads"] =
            app->add_option("--threads", threads, "Intra-op threads (1 = deterministic)")->capture_default_str();
        app->add_option("--set", sets, "Extra key=value override (repeatable)");
        app->add_option("--out", out, std::string("Output directory (default $") + kOutputRootEnv +
                                          "/<command> or runs/<command>)");
        app->add_flag("--force", force, "Replace a non-empty output directory");
    }

    // defaults < preset < file < flags
    TrainConfig resolve(const std::string& command) const {
        TrainConfig cfg = preset_config(preset);
        cfg.output_dir = (output_root() / command).string();
        if (!config_file.empty()) cfg.apply(read_key_values(config_file));

        KeyValues kv;
        auto given = [&](const char* key) { return opts.count(key) && opts.at(key)->count() > 0; };
        if (given("data.root")) kv["data.root"] = data;
        if (given("train.seed")) kv["train.seed"] = std::to_string(seed);
        if (given("train.epochs")) kv["train.epochs"] = std::to_string(epochs);
        if (given("train.batch_size")) kv["train.batch_size"] = std::to_string(batch_size);
        if (given("train.base_lr")) kv["train.base_lr"] = num(lr);
        if (given("loss.alpha")) kv["loss.alpha"] = num(alpha);
        if (given("loss.beta")) kv["loss.beta"] = num(beta);
        if (given("model.num_classes")) {
            require_config(classes >= 2, "--classes must be >= 2");
            kv["model.num_classes"] = std::to_string(classes == 2 ? 1 : classes);
        }
        if (given("model.input_size")) kv["model.input_size"] = std::to_string(size);
        if (given("model.base_dim")) kv["model.base_dim"] = std::to_string(base_dim);
        if (given("train.schedule")) kv["train.schedule"] = schedule;
        if (given("train.grad_clip")) kv["train.grad_clip"] = num(grad_clip);
        if (given("train.threads")) kv["train.threads"] = std::to_string(threads);
        cfg.apply(kv);

        KeyValues extra;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            std::istringstream line(s);
            auto parsed = parse_key_values(line, "--set");
            for (auto& [k, v] : parsed) extra[k] = v;
        }
        cfg.apply(extra);
        if (!out.empty()) cfg.output_dir = out;
        cfg.validate();
        return cfg;
    }
};

// ---------------------------------------------------------------- commands

struct SynthFlags {
    data::SynthConfig cfg;
    std::string shapes = "mixed";
    std::string out;
    bool force = false;
};

int cmd_synth(SynthFlags& f) {
    f.cfg.shapes = data::shape_family_from_string(f.shapes);
    f.cfg.validate();
    const fs::path out = f.out.empty() ? output_root() / "synth" : fs::path(f.out);
    prepare_output(out, f.force);
    OutputGuard guard(out);
    data::generate_synthetic(f.cfg, out);
    guard.commit();
    std::cout << "wrote " << f.cfg.n_samples << " train and " << f.cfg.val_count()
              << " val pairs; manifest " << (out / "manifest.json").string() << "\n";
    return 0;
}

struct TrainExtra {
    std::string resume;
    int64_t max_steps = -1;
};

int cmd_train(const TrainFlags& f, const TrainExtra& x) {
    TrainConfig cfg = f.resolve("train");
    const fs::path out = cfg.output_dir;
    engine::TrainOptions opts;
    opts.max_steps = x.max_steps;
    std::unique_ptr<OutputGuard> guard;
    if (!x.resume.empty()) {
        if (!fs::exists(x.resume)) throw DataError("checkpoint not found: " + x.resume);
        opts.resume = fs::path(x.resume);
        fs::create_directories(out);
    } else {
        prepare_output(out, f.force);
        guard = std::make_unique<OutputGuard>(out);
    }
    auto data = engine::prepare_data(cfg);
    log::info("training on " + std::to_string(data.train.size()) + " samples, validating on " +
              std::to_string(data.val.size()));
    try {
        auto res = engine::train(cfg, data, opts);
        if (guard) guard->commit();
        std::printf("steps %zu  best %s %.4f at epoch %lld  (%.1f s)\n", res.log.size(),
                    cfg.multiclass() ? "DSC" : "mIoU", res.best_metric,
                    static_cast<long long>(res.best_epoch), res.seconds);
        std::cout << "outputs in " << out.string() << "\n";
    } catch (...) {
        // finished epochs stay resumable
        if (guard && fs::exists(out / "last.pt")) {
            guard->commit();
            log::warn("training failed; completed epochs kept in " + (out / "last.pt").string());
        }
        throw;
    }
    return 0;
}

struct EvalFlags {
    std::string checkpoint;
    std::string data;
    std::string split = "val";
    std::string out;
    bool force = false;
    bool no_hd95 = false;
    std::vector<double> spacing{1.0, 1.0};
    std::string hd95_mode = "combined";
    int64_t batch_size = 8;
    int threads = 1;
};

int cmd_eval(const EvalFlags& f) {
    torch::set_num_threads(f.threads);
    require_config(f.spacing.size() == 2, "--spacing expects two values: row col");
    auto loaded = engine::load_model(f.checkpoint);
    TrainConfig cfg = loaded.config;
    if (!f.data.empty()) cfg.data_root = f.data;
    require_config(!cfg.data_root.empty(), "no dataset root: pass --data");

    const fs::path out = f.out.empty() ? output_root() / "eval" : fs::path(f.out);
    prepare_output(out, f.force);
    OutputGuard guard(out);

    auto samples = engine::prepare_split(cfg, f.split);
    if (samples.empty()) throw DataError("split '" + f.split + "' has no samples");
    if (loaded.meta.stats) data::standardize(samples, *loaded.meta.stats);

    engine::EvalOptions eo;
    eo.batch_size = f.batch_size;
    eo.hd95 = !f.no_hd95;
    eo.spacing = {f.spacing[0], f.spacing[1]};
    eo.hd95_mode = f.hd95_mode == "max" ? metrics::HD95Mode::max_directed : metrics::HD95Mode::combined;
    auto r = engine::evaluate(loaded.model, samples, eo);
    engine::write_eval_outputs(out, r);
    guard.commit();

    const auto& m = r.summary.mean;
    if (r.multiclass) {
        std::printf("%-8s %10s %10s\n", "class", "DSC", "HD95");
        for (const auto& c : m.per_class) {
            std::printf("%-8d %10.4f %10s\n", c.cls, c.dsc,
                        c.hd95 ? std::to_string(*c.hd95).c_str() : "NA");
        }
        std::printf("%-8s %10.4f %10s\n", "mean", m.dsc, m.hd95 ? std::to_string(*m.hd95).c_str() : "NA");
    } else {
        std::printf("images %zu\nmIoU %.4f  DSC %.4f  Acc %.4f  Spe %.4f  Sen %.4f", samples.size(),
                    m.miou, m.dsc, m.acc, m.spe, m.sen);
        if (m.hd95) std::printf("  HD95 %.4f", *m.hd95);
        std::printf("\n");
    }
    std::cout << "metrics in " << out.string() << "\n";
    return 0;
}

struct PredictFlags {
    std::string checkpoint;
    std::string input;
    std::string masks;
    std::string out;
    bool force = false;
    int threads = 1;
};

std::vector<fs::path> list_images(const fs::path& input) {
    std::vector<fs::path> out;
    if (fs::is_regular_file(input)) return {input};
    if (!fs::is_directory(input)) throw DataError("input not found: " + input.string());
    for (const auto& e : fs::directory_iterator(input)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw DataError("no images in " + input.string());
    return out;
}

int cmd_predict(const PredictFlags& f) {
    torch::set_num_threads(f.threads);
    auto loaded = engine::load_model(f.checkpoint);
    const auto& mc = loaded.config.model;
    const int64_t classes = loaded.config.dataset_classes();
    const auto images = list_images(f.input);

    const fs::path out = f.out.empty() ? output_root() / "predict" : fs::path(f.out);
    prepare_output(out, f.force);
    OutputGuard guard(out);
    fs::create_directories(out / "masks");
    fs::create_directories(out / "overlays");

    torch::NoGradGuard ng;
    loaded.model->eval();
    const data::NormStats* stats = loaded.meta.stats ? &*loaded.meta.stats : nullptr;
    for (const auto& path : images) {
        const std::string id = path.stem().string();
        data::Sample s;
        s.id = id;
        s.image = data::read_image(path, mc.in_channels);
        s.mask = torch::zeros({s.image.size(1), s.image.size(2)}, torch::kUInt8);
        auto in = data::preprocess(s, mc.input_size, stats);
        auto labels = engine::predict_labels(loaded.model->forward(in.image.unsqueeze(0)).logits);
        auto full = torch::nn::functional::interpolate(
                        labels.unsqueeze(1).to(torch::kFloat),
                        torch::nn::functional::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{s.image.size(1), s.image.size(2)})
                            .mode(torch::kNearest))
                        .squeeze(0)
                        .squeeze(0)
                        .to(torch::kUInt8);
        data::write_mask_png(out / "masks" / (id + ".png"), full, classes == 2);

        std::optional<torch::Tensor> truth;
        if (!f.masks.empty()) {
            for (const auto& name : {id + ".png", id + "_segmentation.png"}) {
                const fs::path mp = fs::path(f.masks) / name;
                if (fs::exists(mp)) {
                    truth = data::read_mask(mp, classes);
                    break;
                }
            }
            if (!truth) log::warn("no ground-truth mask for " + id);
            else if (truth->sizes() != full.sizes()) {
                log::warn("ground-truth size differs for " + id + "; not drawn");
                truth.reset();
            }
        }
        data::write_overlay_png(out / "overlays" / (id + ".png"), s.image, full,
                                truth ? &*truth : nullptr);
    }
    guard.commit();
    std::cout << "wrote " << images.size() << " masks and overlays to " << out.string() << "\n";
    return 0;
}

int cmd_ablate(const TrainFlags& f, const std::string& seeds_arg) {
    TrainConfig cfg = f.resolve("ablate");
    const auto seeds = parse_seeds(seeds_arg);
    const fs::path out = cfg.output_dir;
    prepare_output(out, f.force);
    OutputGuard guard(out);
    auto data = engine::prepare_data(cfg);
    auto res = engine::run_ablation(cfg, data, seeds, out);
    std::ostringstream csv;
    engine::write_ablation_csv(csv, res);
    write_file(out / "ablation.csv", csv.str());
    write_file(out / "ablation.json", engine::to_json(res).dump(2) + "\n");
    guard.commit();
    std::cout << csv.str() << "shared initialization across rows: " << (res.shared_init ? "yes" : "NO")
              << "\noutputs in " << out.string() << "\n";
    return res.shared_init ? 0 : 1;
}

struct ComplexityFlags {
    std::string preset = "paper-scale";
    std::string config_file;
    int64_t size = 0;
    int64_t classes = 0;
    std::string out;
    bool force = false;
};

int cmd_complexity(const ComplexityFlags& f) {
    TrainConfig cfg = preset_config(f.preset);
    if (!f.config_file.empty()) cfg.apply(read_key_values(f.config_file));
    if (f.size > 0) cfg.model.input_size = f.size;
    if (f.classes > 0) cfg.model.num_classes = f.classes == 2 ? 1 : f.classes;
    cfg.model.validate();
    auto r = engine::count_parameters(cfg.model, cfg.distill);
    std::cout << r.table();

    struct Ref {
        const char* name;
        double params_m, gflops;
    };
    // published figures, measured with a module-hook profiler that counts conv
    // and linear layer MACs
    const Ref refs[] = {{"VM-UNet", 27.42, 4.11}, {"DSVM-UNet (reported)", 22.63, 3.65}};
    std::printf("\nreference comparison (layer MACs vs reference G; all-op MACs in brackets)\n");
    for (const auto& ref : refs) {
        std::printf("  %-22s %6.2f M  params %+6.1f%%   %5.2f G  layer MACs %+6.1f%%  [all-op %+6.1f%%]\n",
                    ref.name, ref.params_m, 100.0 * (r.params_inference / 1e6 - ref.params_m) / ref.params_m,
                    ref.gflops, 100.0 * (r.layer_macs / 1e9 - ref.gflops) / ref.gflops,
                    100.0 * (r.macs / 1e9 - ref.gflops) / ref.gflops);
    }

    const fs::path out = f.out.empty() ? output_root() / "complexity" : fs::path(f.out);
    prepare_output(out, f.force);
    OutputGuard guard(out);
    write_file(out / "complexity.json", r.to_json().dump(2) + "\n");
    write_file(out / "complexity.txt", r.table());
    guard.commit();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-distilled vision state-space U-Net for image segmentation"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(36);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings only");

    SynthFlags sf;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic segmentation dataset");
    synth->add_option("--seed", sf.cfg.seed, "Random seed")->capture_default_str();
    synth->add_option("--n", sf.cfg.n_samples, "Training pairs")->capture_default_str();
    synth->add_option("--n-val", sf.cfg.n_val, "Validation pairs (-1 = n/4)")->capture_default_str();
    synth->add_option("--size", sf.cfg.size, "Image side length")->capture_default_str();
    synth->add_option("--classes", sf.cfg.num_classes, "Classes including background (2 = binary)")
        ->capture_default_str();
    synth->add_option("--shapes", sf.shapes, "ellipses, polygons or mixed")
        ->check(CLI::IsMember({"ellipses", "polygons", "mixed"}))
        ->capture_default_str();
    synth->add_option("--noise", sf.cfg.noise, "Gaussian noise std on [0,1] intensities")->capture_default_str();
    synth->add_option("--out", sf.out, "Output directory");
    synth->add_flag("--force", sf.force, "Replace a non-empty output directory");

    TrainFlags tf;
    TrainExtra tx;
    auto* train = app.add_subcommand("train", "Train a model");
    tf.add(train, true);
    train->add_option("--resume", tx.resume, "Continue from a last.pt checkpoint");
    train->add_option("--max-steps", tx.max_steps, "Stop after this many steps (-1 = all)")
        ->capture_default_str();

    EvalFlags ef;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", ef.data, "Dataset root (default: the one used in training)");
    eval->add_option("--split", ef.split, "Split to evaluate")->capture_default_str();
    eval->add_option("--out", ef.out, "Output directory");
    eval->add_flag("--force", ef.force, "Replace a non-empty output directory");
    eval->add_flag("--no-hd95", ef.no_hd95, "Skip HD95");
    eval->add_option("--spacing", ef.spacing, "Pixel spacing: row col")->expected(2)->capture_default_str();
    eval->add_option("--hd95-mode", ef.hd95_mode, "combined or max")
        ->check(CLI::IsMember({"combined", "max"}))
        ->capture_default_str();
    eval->add_option("--batch-size", ef.batch_size, "Inference batch size")->capture_default_str();
    eval->add_option("--threads", ef.threads, "Intra-op threads")->capture_default_str();

    PredictFlags pf;
    auto* predict = app.add_subcommand("predict", "Write predicted masks and overlays");
    predict->add_option("--checkpoint", pf.checkpoint, "Checkpoint file")->required();
    predict->add_option("--input", pf.input, "Image file or directory")->required();
    predict->add_option("--masks", pf.masks, "Ground-truth mask directory drawn on the overlays");
    predict->add_option("--out", pf.out, "Output directory");
    predict->add_flag("--force", pf.force, "Replace a non-empty output directory");
    predict->add_option("--threads", pf.threads, "Intra-op threads")->capture_default_str();

    TrainFlags af;
    std::string seeds = "0,1,2";
    auto* ablate = app.add_subcommand("ablate", "Train the four distillation configurations");
    af.add(ablate, false);
    ablate->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();

    ComplexityFlags cf;
    auto* complexity = app.add_subcommand("complexity", "Parameter and FLOP counts");
    complexity->add_option("--preset", cf.preset, "desk or paper-scale")
        ->check(CLI::IsMember({"desk", "paper-scale"}))
        ->capture_default_str();
    complexity->add_option("--config", cf.config_file, "key = value file layered over the preset")
        ->check(CLI::ExistingFile);
    complexity->add_option("--size", cf.size, "Input side length (0 = preset)")->capture_default_str();
    complexity->add_option("--classes", cf.classes, "Classes (0 = preset, 2 = binary)")->capture_default_str();
    complexity->add_option("--out", cf.out, "Output directory");
    complexity->add_flag("--force", cf.force, "Replace a non-empty output directory");

    CLI11_PARSE(app, argc, argv);
    log::set_level(quiet ? log::Level::warn : verbose ? log::Level::debug : log::Level::info);

    try {
        if (synth->parsed()) return cmd_synth(sf);
        if (train->parsed()) return cmd_train(tf, tx);
        if (eval->parsed()) return cmd_eval(ef);
        if (predict->parsed()) return cmd_predict(pf);
        if (ablate->parsed()) return cmd_ablate(af, seeds);
        if (complexity->parsed()) return cmd_complexity(cf);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const c10::Error& e) {
        std::cerr << "error: " << e.what_without_backtrace() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
