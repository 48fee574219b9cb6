#include "dsvm/engine.hpp"

#include "dsvm/error.hpp"
#include "dsvm/log.hpp"
#include "dsvm/objectives.hpp"

#include <chrono>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dsvm::engine {

double cosine_lr(int64_t t, int64_t t_max, double eta_max, double eta_min, Schedule schedule) {
    require(t >= 0, "cosine_lr: t must be non-negative");
    require(t_max >= 1, "cosine_lr: t_max must be >= 1");
    if (schedule == Schedule::clamp && t >= t_max) return eta_min;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max);
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(phase));
}

// ---------------------------------------------------------------- hashing

namespace {

constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv_bytes(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

uint64_t fnv_tensor(const torch::Tensor& t, uint64_t h) {
    auto c = t.detach().contiguous();
    return fnv_bytes(c.data_ptr(), c.numel() * c.element_size(), h);
}

}  // namespace

uint64_t parameter_fingerprint(torch::nn::Module& m, uint64_t h) {
    for (const auto& p : m.named_parameters()) {
        h = fnv_bytes(p.key().data(), p.key().size(), h);
        h = fnv_tensor(p.value(), h);
    }
    return h;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("cannot write " + tmp.string());
        os << text;
        if (!os) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, network::DSVMUNet& model,
                     distill::DistillHeads* heads, torch::optim::Optimizer* optimizer) {
    torch::serialize::OutputArchive root;
    model->save(root);

    torch::serialize::OutputArchive m;
    m.write("config", c10::IValue(meta.config_text));
    m.write("epoch", c10::IValue(meta.epoch));
    m.write("step", c10::IValue(meta.step));
    m.write("best_metric", c10::IValue(meta.best_metric));
    m.write("best_epoch", c10::IValue(meta.best_epoch));
    m.write("has_heads", c10::IValue(heads != nullptr));
    m.write("has_optimizer", c10::IValue(optimizer != nullptr));
    m.write("norm_stats", c10::IValue(meta.stats ? meta.stats->to_json().dump() : std::string()));
    root.write("meta", m);

    if (heads) {
        torch::serialize::OutputArchive d;
        (*heads)->save(d);
        root.write("distill", d);
    }
    if (optimizer) {
        torch::serialize::OutputArchive o;
        optimizer->save(o);
        root.write("optimizer", o);
    }
    const fs::path tmp = path.string() + ".tmp";
    try {
        root.save_to(tmp.string());
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

namespace {

CheckpointMeta read_meta(torch::serialize::InputArchive& root) {
    torch::serialize::InputArchive m;
    root.read("meta", m);
    CheckpointMeta meta;
    c10::IValue v;
    m.read("config", v);
    meta.config_text = v.toStringRef();
    m.read("epoch", v);
    meta.epoch = v.toInt();
    m.read("step", v);
    meta.step = v.toInt();
    m.read("best_metric", v);
    meta.best_metric = v.toDouble();
    m.read("best_epoch", v);
    meta.best_epoch = v.toInt();
    m.read("has_heads", v);
    meta.has_heads = v.toBool();
    m.read("has_optimizer", v);
    meta.has_optimizer = v.toBool();
    m.read("norm_stats", v);
    if (!v.toStringRef().empty()) {
        meta.stats = data::NormStats::from_json(nlohmann::json::parse(v.toStringRef()));
    }
    return meta;
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive root;
    try {
        root.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    return root;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
    auto root = open_archive(path);
    return read_meta(root);
}

CheckpointMeta load_checkpoint(const fs::path& path, network::DSVMUNet& model,
                               distill::DistillHeads* heads, torch::optim::Optimizer* optimizer) {
    auto root = open_archive(path);
    auto meta = read_meta(root);
    model->load(root);
    if (heads && meta.has_heads) {
        torch::serialize::InputArchive d;
        root.read("distill", d);
        (*heads)->load(d);
    }
    if (optimizer && meta.has_optimizer) {
        torch::serialize::InputArchive o;
        root.read("optimizer", o);
        optimizer->load(o);
    }
    return meta;
}

LoadedModel load_model(const fs::path& checkpoint) {
    LoadedModel out;
    out.meta = read_checkpoint_meta(checkpoint);
    out.config = TrainConfig::from_text(out.meta.config_text);
    out.model = network::DSVMUNet(out.config.model);
    load_checkpoint(checkpoint, out.model);
    return out;
}

// ---------------------------------------------------------------- data

std::vector<data::Sample> prepare_split(const TrainConfig& cfg, const std::string& split) {
    data::LoadOptions lo;
    lo.size = cfg.model.input_size;
    lo.num_classes = cfg.dataset_classes();
    lo.in_channels = cfg.model.in_channels;
    return data::load_dataset(cfg.data_root, split, lo);
}

TrainData prepare_data(const TrainConfig& cfg) {
    require_config(!cfg.data_root.empty(), "data.root is not set");
    TrainData d;
    d.train = prepare_split(cfg, cfg.train_split);
    if (d.train.empty()) throw DataError("training split is empty");
    if (fs::is_directory(fs::path(cfg.data_root) / cfg.val_split)) {
        d.val = prepare_split(cfg, cfg.val_split);
    } else {
        log::warn("no validation split '" + cfg.val_split + "'; best checkpoint follows the last epoch");
    }
    if (cfg.normalize) {
        d.stats = data::load_or_compute_norm_stats(cfg.data_root, d.train);
        data::standardize(d.train, *d.stats);
        data::standardize(d.val, *d.stats);
    }
    return d;
}

// ---------------------------------------------------------------- evaluation

torch::Tensor predict_labels(const torch::Tensor& logits) {
    require(logits.dim() == 4, "predict_labels: expected [Bt, K, H, W]");
    if (logits.size(1) == 1) return (logits.squeeze(1) > 0).to(torch::kUInt8);  // sigmoid > 0.5
    return logits.argmax(1).to(torch::kUInt8);
}

namespace {

metrics::LabelMap to_label_map(const torch::Tensor& t) {
    auto c = t.to(torch::kUInt8).contiguous();
    metrics::LabelMap m(c.size(0), c.size(1));
    std::memcpy(m.labels.data(), c.data_ptr(), m.labels.size());
    return m;
}

}  // namespace

EvalResult evaluate(network::DSVMUNet& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& opts) {
    require(opts.batch_size >= 1, "evaluate: batch_size must be >= 1");
    const int64_t k = model->config().num_classes;
    const int64_t classes = k == 1 ? 2 : k;
    EvalResult res;
    res.multiclass = k > 1;

    torch::NoGradGuard ng;
    const bool was_training = model->is_training();
    model->eval();
    for (size_t b = 0; b < samples.size(); b += static_cast<size_t>(opts.batch_size)) {
        std::vector<size_t> idx;
        for (size_t i = b; i < std::min(samples.size(), b + static_cast<size_t>(opts.batch_size)); ++i) {
            idx.push_back(i);
        }
        auto batch = data::make_batch(samples, idx);
        const int64_t hi = batch.masks.max().item<int64_t>();
        if (hi >= classes) {
            throw ConfigError("class-count mismatch: masks contain label " + std::to_string(hi) +
                              " but the model predicts " + std::to_string(classes) + " classes");
        }
        auto labels = predict_labels(model->forward(batch.images).logits);
        for (size_t j = 0; j < idx.size(); ++j) {
            auto pred = to_label_map(labels[static_cast<int64_t>(j)]);
            auto gt = to_label_map(batch.masks[static_cast<int64_t>(j)]);
            metrics::MetricReport r;
            if (res.multiclass) {
                r = metrics::multiclass_report(batch.ids[j], pred, gt, static_cast<int>(classes),
                                               opts.spacing, opts.hd95_mode);
                if (!opts.hd95) {
                    r.hd95.reset();
                    for (auto& c : r.per_class) c.hd95.reset();
                }
            } else {
                auto counts = metrics::confusion_counts(pred, gt);
                auto s = metrics::segmentation_metrics(counts);
                r.id = batch.ids[j];
                r.miou = s.miou;
                r.dsc = s.dsc;
                r.acc = s.acc;
                r.spe = s.spe;
                r.sen = s.sen;
                if (opts.hd95) r.hd95 = metrics::hd95(pred, gt, opts.spacing, opts.hd95_mode);
                res.counts.push_back(counts);
            }
            res.per_image.push_back(std::move(r));
        }
    }
    if (was_training) model->train();
    res.summary = metrics::summarize(res.per_image, res.counts);
    return res;
}

double selection_metric(const EvalResult& r) {
    return r.multiclass ? r.summary.mean.dsc : r.summary.mean.miou;
}

void write_eval_outputs(const fs::path& dir, const EvalResult& r) {
    fs::create_directories(dir);
    auto rows = r.per_image;
    rows.push_back(r.summary.mean);
    if (!r.multiclass) rows.push_back(r.summary.pooled);
    std::ostringstream csv;
    metrics::write_csv(csv, rows);
    write_text_atomic(dir / "metrics.csv", csv.str());

    nlohmann::json j;
    j["summary"] = metrics::to_json(r.summary);
    j["multiclass"] = r.multiclass;
    auto& imgs = j["images"] = nlohmann::json::array();
    for (const auto& p : r.per_image) imgs.push_back(metrics::to_json(p));
    write_text_atomic(dir / "metrics.json", j.dump(2) + "\n");

    if (r.multiclass) {
        std::ostringstream pc;
        pc << "class,dsc,hd95\n";
        char buf[128];
        for (const auto& c : r.summary.mean.per_class) {
            std::snprintf(buf, sizeof buf, "%d,%.10g,", c.cls, c.dsc);
            pc << buf;
            if (c.hd95) pc << *c.hd95;
            else pc << "NA";
            pc << '\n';
        }
        pc << "mean," << r.summary.mean.dsc << ',';
        if (r.summary.mean.hd95) pc << *r.summary.mean.hd95;
        else pc << "NA";
        pc << '\n';
        write_text_atomic(dir / "per_class.csv", pc.str());
    }
}

// ---------------------------------------------------------------- training

std::string format_step(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.lr, r.l_seg,
                  r.l_proj, r.l_prog, r.l_total);
    return buf;
}

namespace {

constexpr const char* kLogHeader = "step,epoch,lr,l_seg,l_proj,l_prog,l_total";

void check_finite(double v, const char* name, int64_t step, int64_t epoch) {
    if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "non-finite " << name << " (" << v << ") at step " << step << ", epoch " << epoch;
        throw NumericError(msg.str());
    }
}

bool same_model_config(const TrainConfig& a, const TrainConfig& b) {
    auto ka = a.to_key_values(), kb = b.to_key_values();
    for (const auto& [k, v] : ka) {
        if (k.rfind("model.", 0) == 0 && kb[k] != v) return false;
    }
    return true;
}

// Keeps the header and rows up to `last_step`; returns the retained text.
std::string truncate_log(const fs::path& path, int64_t last_step) {
    std::string out = std::string(kLogHeader) + "\n";
    std::ifstream is(path);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (line.empty()) continue;
        if (std::stoll(line.substr(0, line.find(','))) <= last_step) out += line + "\n";
    }
    return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainOptions& opts) {
    cfg.validate();
    require_config(!data.train.empty(), "train: no training samples");
    const auto t_start = std::chrono::steady_clock::now();
    torch::set_num_threads(cfg.threads);

    const bool multi = cfg.multiclass();
    for (const auto* split : {&data.train, &data.val}) {
        for (const auto& s : *split) {
            if (s.mask.max().item<int64_t>() >= cfg.dataset_classes()) {
                throw ConfigError("class-count mismatch: sample " + s.id + " has labels beyond " +
                                  std::to_string(cfg.dataset_classes() - 1));
            }
        }
    }

    torch::manual_seed(cfg.seed);
    network::DSVMUNet model(cfg.model);
    distill::DistillHeads heads(cfg.model, cfg.distill);

    TrainResult res;
    res.init_fingerprint = parameter_fingerprint(*heads, parameter_fingerprint(*model));

    std::vector<torch::Tensor> params = model->parameters();
    for (auto& p : heads->parameters()) params.push_back(p);
    torch::optim::AdamW opt(params,
                            torch::optim::AdamWOptions(cfg.base_lr).weight_decay(cfg.weight_decay));

    CheckpointMeta meta;
    meta.config_text = cfg.to_text();
    meta.stats = data.stats;
    int64_t start_epoch = 0, step = 0;
    if (opts.resume) {
        auto m = load_checkpoint(*opts.resume, model, &heads, &opt);
        if (!same_model_config(TrainConfig::from_text(m.config_text), cfg)) {
            throw ConfigError("resume: checkpoint model configuration differs from the current one");
        }
        if (!m.has_optimizer || !m.has_heads) {
            throw ConfigError("resume: " + opts.resume->string() + " is not a training checkpoint");
        }
        start_epoch = m.epoch;
        step = m.step;
        meta.best_metric = m.best_metric;
        meta.best_epoch = m.best_epoch;
        res.best_metric = m.best_metric;
        res.best_epoch = m.best_epoch;
        log::info("resuming after epoch " + std::to_string(start_epoch) + ", step " +
                  std::to_string(step));
    }

    const fs::path out = cfg.output_dir;
    std::ofstream log_os;
    if (opts.write_files) {
        fs::create_directories(out);
        write_text_atomic(out / "config.txt", meta.config_text);
        const fs::path log_path = out / "train_log.csv";
        const std::string kept = opts.resume && fs::exists(log_path)
                                     ? truncate_log(log_path, step)
                                     : std::string(kLogHeader) + "\n";
        write_text_atomic(log_path, kept);
        log_os.open(log_path, std::ios::app);
        if (!log_os) throw DataError("cannot append to " + log_path.string());
        res.best_checkpoint = out / "best.pt";
        res.last_checkpoint = out / "last.pt";
    }

    auto seg_loss = [&](const torch::Tensor& logits, const torch::Tensor& masks) {
        if (multi) return objectives::cedice_loss(logits, masks, cfg.loss);
        return objectives::bcedice_loss_with_logits(logits, masks.unsqueeze(1).to(logits.dtype()),
                                                    cfg.loss);
    };
    // Unweighted distillation terms are still evaluated and logged, without a graph.
    auto distill_term = [](bool weighted, const std::function<torch::Tensor()>& fn) {
        if (weighted) return fn();
        torch::NoGradGuard ng;
        return fn();
    };

    const size_t n = data.train.size();
    const auto bs = static_cast<size_t>(cfg.batch_size);
    const int64_t steps_per_epoch = static_cast<int64_t>((n + bs - 1) / bs);
    bool stopped = false;
    model->train();

    for (int64_t epoch = start_epoch; epoch < cfg.epochs && !stopped; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.t_max, cfg.base_lr, cfg.eta_min, cfg.schedule);
        for (auto& group : opt.param_groups()) {
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
        }
        const auto order = data::epoch_order(n, cfg.seed, epoch);

        for (size_t b = 0; b < n; b += bs) {
            if (opts.max_steps >= 0 && step >= opts.max_steps) {
                stopped = true;
                break;
            }
            std::vector<data::Sample> batch_samples;
            std::vector<size_t> idx;
            for (size_t i = b; i < std::min(n, b + bs); ++i) {
                const auto& s = data.train[order[i]];
                if (cfg.augment_enabled) {
                    std::mt19937_64 rng(data::sample_seed(cfg.seed, s.id, epoch));
                    batch_samples.push_back(data::augment(s, cfg.augment, rng));
                } else {
                    batch_samples.push_back(s);
                }
                idx.push_back(idx.size());
            }
            auto batch = data::make_batch(batch_samples, idx);
            if (step == 0) {
                res.first_batch_hash = fnv_tensor(batch.masks, fnv_tensor(batch.images, 1469598103934665603ULL));
            }

            auto fwd = model->forward(batch.images);
            auto l_seg = seg_loss(fwd.logits, batch.masks);
            auto l_proj = distill_term(cfg.loss.alpha > 0, [&] {
                return distill::projection_loss(fwd.pyramid, heads).total;
            });
            auto l_prog = distill_term(cfg.loss.beta > 0, [&] {
                return distill::progressive_loss(fwd.pyramid, heads).total;
            });

            StepRecord rec;
            rec.step = step + 1;
            rec.epoch = epoch + 1;
            rec.lr = lr;
            rec.l_seg = l_seg.item<double>();
            rec.l_proj = l_proj.item<double>();
            rec.l_prog = l_prog.item<double>();
            check_finite(rec.l_seg, "l_seg", rec.step, rec.epoch);
            check_finite(rec.l_proj, "l_proj", rec.step, rec.epoch);
            check_finite(rec.l_prog, "l_prog", rec.step, rec.epoch);

            auto total = objectives::total_loss(l_seg, l_proj, l_prog, cfg.loss);
            rec.l_total = total.item<double>();
            check_finite(rec.l_total, "l_total", rec.step, rec.epoch);

            opt.zero_grad();
            total.backward();
            if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
            opt.step();
            ++step;

            res.log.push_back(rec);
            if (log_os.is_open()) log_os << format_step(rec) << '\n' << std::flush;
            if (opts.on_step) opts.on_step(rec);
            if (log::level() >= log::Level::debug) log::debug(format_step(rec));
        }
        if (stopped) break;

        EpochRecord er;
        er.epoch = epoch + 1;
        bool improved;
        if (!data.val.empty()) {
            EvalOptions eo;
            eo.batch_size = cfg.batch_size;
            eo.hd95 = cfg.val_hd95;
            auto ev = evaluate(model, data.val, eo);
            er.val_metric = selection_metric(ev);
            er.val_mean = ev.summary.mean;
            improved = er.val_metric > meta.best_metric;
        } else {
            er.val_metric = std::numeric_limits<double>::quiet_NaN();
            improved = true;
        }
        res.epochs.push_back(er);
        if (improved) {
            meta.best_metric = data.val.empty() ? meta.best_metric : er.val_metric;
            meta.best_epoch = er.epoch;
            res.best_metric = meta.best_metric;
            res.best_epoch = meta.best_epoch;
        }
        meta.epoch = epoch + 1;
        meta.step = step;
        {
            std::ostringstream msg;
            msg << "epoch " << er.epoch << "/" << cfg.epochs << "  lr " << lr << "  loss "
                << (res.log.empty() ? 0.0 : res.log.back().l_total);
            if (!data.val.empty()) msg << "  val " << (multi ? "dsc " : "miou ") << er.val_metric;
            log::info(msg.str());
        }
        if (opts.write_files) {
            if (improved) save_checkpoint(out / "best.pt", meta, model);
            save_checkpoint(out / "last.pt", meta, model, &heads, &opt);
        }
        (void)steps_per_epoch;
    }

    res.model = model;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (opts.write_files) {
        nlohmann::json j;
        j["steps"] = step;
        j["epochs_completed"] = meta.epoch;
        j["best_metric"] = res.best_metric;
        j["best_epoch"] = res.best_epoch;
        j["selection_metric"] = multi ? "val_mean_dsc" : "val_miou";
        j["seconds"] = res.seconds;
        char hex[32];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(res.init_fingerprint));
        j["init_fingerprint"] = hex;
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(res.first_batch_hash));
        j["first_batch_hash"] = hex;
        auto& ep = j["epochs"] = nlohmann::json::array();
        for (const auto& e : res.epochs) {
            nlohmann::json row = {{"epoch", e.epoch}};
            if (std::isfinite(e.val_metric)) {
                row["val_metric"] = e.val_metric;
                row["val"] = metrics::to_json(e.val_mean);
            }
            ep.push_back(row);
        }
        write_text_atomic(out / "summary.json", j.dump(2) + "\n");
    }
    return res;
}

}  // namespace dsvm::engine
