#include "dsvm/data.hpp"

#include "dsvm/error.hpp"
#include "dsvm/log.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace dsvm::data {

namespace F = torch::nn::functional;

void AugmentConfig::validate() const {
    for (double p : {flip_horizontal_p, flip_vertical_p, rotation_p}) {
        require_config(p >= 0.0 && p <= 1.0, "augment: probabilities must lie in [0, 1]");
    }
    if (!continuous_rotation) {
        require_config(!rotation_choices.empty() || rotation_p == 0.0,
                       "augment: rotation enabled with no angle choices");
        for (int a : rotation_choices) {
            require_config(a % 90 == 0, "augment: right-angle mode accepts multiples of 90 only (got " +
                                            std::to_string(a) + ")");
        }
    }
}

void SynthConfig::validate() const {
    require_config(n_samples >= 1, "synth: n_samples must be >= 1");
    require_config(size >= 32 && size % 32 == 0, "synth: size must be a positive multiple of 32");
    require_config(num_classes >= 2 && num_classes <= 255, "synth: classes must lie in [2, 255]");
    require_config(noise >= 0.0, "synth: noise must be non-negative");
}

nlohmann::json SynthConfig::to_json() const {
    return {{"n_samples", n_samples}, {"n_val", val_count()}, {"size", size},
            {"num_classes", num_classes}, {"shapes", to_string(shapes)},
            {"noise", noise}, {"seed", seed}};
}

nlohmann::json NormStats::to_json() const {
    return {{"mean", mean}, {"std", std}, {"count", count}, {"size", size}};
}

NormStats NormStats::from_json(const nlohmann::json& j) {
    NormStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    s.count = j.at("count").get<int64_t>();
    s.size = j.at("size").get<int64_t>();
    return s;
}

std::string to_string(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::ellipses: return "ellipses";
        case ShapeFamily::polygons: return "polygons";
        case ShapeFamily::mixed: return "mixed";
    }
    return "mixed";
}

ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipses") return ShapeFamily::ellipses;
    if (s == "polygons") return ShapeFamily::polygons;
    if (s == "mixed") return ShapeFamily::mixed;
    throw ConfigError("unknown shape family '" + s + "' (expected ellipses, polygons or mixed)");
}

// ---------------------------------------------------------------- image I/O

namespace {

torch::Tensor mat_to_image(const cv::Mat& m) {
    cv::Mat f;
    m.convertTo(f, CV_32F, 1.0 / 255.0);
    const int c = f.channels();
    auto t = torch::from_blob(f.data, {f.rows, f.cols, c}, torch::kFloat).clone();
    return t.permute({2, 0, 1}).contiguous();
}

torch::Tensor mat_to_mask(const cv::Mat& m) {
    return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
}

void write_png(const fs::path& path, const cv::Mat& m) {
    if (!cv::imwrite(path.string(), m)) throw DataError("cannot write " + path.string());
}

}  // namespace

torch::Tensor read_image(const fs::path& path, int64_t in_channels) {
    require_config(in_channels == 1 || in_channels == 3, "in_channels must be 1 or 3");
    cv::Mat m = cv::imread(path.string(), in_channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot read image " + path.string());
    if (in_channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    return mat_to_image(m);
}

void write_mask_png(const fs::path& path, const torch::Tensor& mask, bool binary) {
    require(mask.dim() == 2, "write_mask_png: mask must be [H, W]");
    auto t = mask.to(torch::kUInt8).contiguous();
    if (binary) t = (t > 0).to(torch::kUInt8) * 255;
    cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1, t.data_ptr());
    write_png(path, m.clone());
}

torch::Tensor read_mask(const fs::path& path, int64_t num_classes) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("cannot read mask " + path.string());
    auto mask = mat_to_mask(m);
    const int hi = mask.max().item<int>();
    if (num_classes == 2) {
        // 0/1 label maps are taken as they are; anything else is thresholded at mid-grey
        if (hi <= 1) return mask;
        if (hi < 128) {
            throw ConfigError("class-count mismatch: mask " + path.string() + " holds label " +
                              std::to_string(hi) + " but the data is configured as binary");
        }
        return (mask > 127).to(torch::kUInt8);
    }
    if (hi >= num_classes) {
        throw ConfigError("class-count mismatch: mask " + path.string() + " holds class " +
                          std::to_string(hi) + " but num_classes is " + std::to_string(num_classes));
    }
    return mask;
}

namespace {

torch::Tensor label_edges(const torch::Tensor& labels) {
    auto l = labels.to(torch::kInt16);
    auto edge = torch::zeros_like(l, torch::kBool);
    using torch::indexing::None;
    using torch::indexing::Slice;
    auto dv = l.index({Slice(1, None)}) != l.index({Slice(None, -1)});
    auto dh = l.index({Slice(), Slice(1, None)}) != l.index({Slice(), Slice(None, -1)});
    edge.index({Slice(1, None)}) |= dv;
    edge.index({Slice(None, -1)}) |= dv;
    edge.index({Slice(), Slice(1, None)}) |= dh;
    edge.index({Slice(), Slice(None, -1)}) |= dh;
    return edge;
}

}  // namespace

void write_overlay_png(const fs::path& path, const torch::Tensor& image, const torch::Tensor& pred,
                       const torch::Tensor* truth) {
    require(image.dim() == 3 && pred.dim() == 2 && image.size(1) == pred.size(0) &&
                image.size(2) == pred.size(1),
            "write_overlay_png: image [C,H,W] and mask [H,W] must agree");
    auto rgb = image.size(0) == 1 ? image.expand({3, -1, -1}) : image;
    rgb = rgb.clamp(0, 1).permute({1, 2, 0}).contiguous() * 255.0;
    auto tint = [&](const torch::Tensor& where, std::array<float, 3> colour, float a) {
        auto c = torch::tensor(std::vector<float>(colour.begin(), colour.end()));
        auto w = where.unsqueeze(-1).to(torch::kFloat) * a;
        rgb = rgb * (1 - w) + c * w;
    };
    tint(pred > 0, {255, 64, 64}, 0.25f);
    if (truth) tint(label_edges(*truth), {64, 255, 64}, 1.0f);
    tint(label_edges(pred), {255, 32, 32}, 1.0f);
    auto bytes = rgb.round().clamp(0, 255).to(torch::kUInt8).contiguous();
    cv::Mat m(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3, bytes.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
    write_png(path, bgr);
}

// ---------------------------------------------------------------- loading

namespace {

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
            out.emplace(e.path().stem().string(), e.path());
        }
    }
    return out;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root, const std::string& split,
                                 const LoadOptions& opts) {
    require_config(opts.size >= 1, "load_dataset: size must be positive");
    require_config(opts.num_classes >= 2, "load_dataset: num_classes must be >= 2");
    const fs::path img_dir = root / split / "images";
    const fs::path mask_dir = root / split / "masks";
    if (!fs::is_directory(img_dir)) throw DataError("missing directory " + img_dir.string());
    if (!fs::is_directory(mask_dir)) throw DataError("missing directory " + mask_dir.string());

    auto images = list_pngs(img_dir);
    auto masks = list_pngs(mask_dir);
    if (images.empty()) {
        log::warn("no images found in " + img_dir.string());
        return {};
    }

    std::vector<std::string> missing;
    std::vector<std::pair<std::string, fs::path>> mask_paths;
    for (const auto& [id, _] : images) {
        auto it = masks.find(id);
        if (it == masks.end()) it = masks.find(id + "_segmentation");
        if (it == masks.end()) missing.push_back(id);
        else mask_paths.emplace_back(id, it->second);
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "no mask for " << missing.size() << " image(s) in " << img_dir.string() << ":";
        for (const auto& id : missing) msg << ' ' << id;
        throw DataError(msg.str());
    }

    std::vector<Sample> out;
    out.reserve(images.size());
    size_t k = 0;
    for (const auto& [id, path] : images) {
        Sample s;
        s.id = id;
        s.image = read_image(path, opts.in_channels);
        s.mask = read_mask(mask_paths[k++].second, opts.num_classes);
        if (s.image.size(1) != s.mask.size(0) || s.image.size(2) != s.mask.size(1)) {
            log::debug("size mismatch for " + id + "; resizing both");
        }
        out.push_back(preprocess(s, opts.size));
    }
    return out;
}

// ---------------------------------------------------------------- preprocessing

Sample preprocess(const Sample& s, int64_t size, const NormStats* stats) {
    require(s.image.dim() == 3 && s.mask.dim() == 2, "preprocess: expected image [C,H,W], mask [H,W]");
    Sample out;
    out.id = s.id;
    auto img = s.image.to(torch::kFloat);
    if (img.size(1) != size || img.size(2) != size) {
        img = F::interpolate(img.unsqueeze(0), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{size, size})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false))
                  .squeeze(0);
    }
    auto mask = s.mask;
    if (mask.size(0) != size || mask.size(1) != size) {
        mask = F::interpolate(mask.to(torch::kFloat).unsqueeze(0).unsqueeze(0),
                              F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{size, size})
                                  .mode(torch::kNearest))
                   .squeeze(0)
                   .squeeze(0)
                   .round()
                   .to(torch::kUInt8);
    }
    out.image = img.contiguous();
    out.mask = mask.contiguous();
    if (stats) {
        std::vector<Sample> one{out};
        standardize(one, *stats);
        out = one.front();
    }
    return out;
}

NormStats compute_norm_stats(const std::vector<Sample>& samples) {
    require(!samples.empty(), "compute_norm_stats: no samples");
    const int64_t c = samples.front().image.size(0);
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    int64_t n = 0;
    for (const auto& s : samples) {
        auto img = s.image.to(torch::kDouble);
        for (int64_t k = 0; k < c; ++k) {
            sum[k] += img[k].sum().item<double>();
            sq[k] += img[k].pow(2).sum().item<double>();
        }
        n += s.image.size(1) * s.image.size(2);
    }
    NormStats st;
    st.count = static_cast<int64_t>(samples.size());
    st.size = samples.front().image.size(1);
    for (int64_t k = 0; k < c; ++k) {
        const double m = sum[k] / n;
        st.mean.push_back(m);
        st.std.push_back(std::sqrt(std::max(0.0, sq[k] / n - m * m)));
    }
    return st;
}

NormStats load_or_compute_norm_stats(const fs::path& root, const std::vector<Sample>& train) {
    const fs::path cache = root / "norm_stats.json";
    if (fs::exists(cache)) {
        try {
            std::ifstream is(cache);
            auto st = NormStats::from_json(nlohmann::json::parse(is));
            if (st.count == static_cast<int64_t>(train.size()) && !train.empty() &&
                st.size == train.front().image.size(1) &&
                st.mean.size() == static_cast<size_t>(train.front().image.size(0))) {
                return st;
            }
        } catch (const std::exception& e) {
            log::warn("ignoring unreadable " + cache.string() + ": " + e.what());
        }
    }
    auto st = compute_norm_stats(train);
    std::ofstream os(cache);
    if (os) os << st.to_json().dump(2) << '\n';
    else log::warn("cannot cache normalization statistics at " + cache.string());
    return st;
}

void standardize(std::vector<Sample>& samples, const NormStats& stats) {
    bool warned = false;
    for (auto& s : samples) {
        require(s.image.size(0) == static_cast<int64_t>(stats.mean.size()),
                "standardize: channel count differs from statistics");
        auto img = s.image.clone();
        for (int64_t k = 0; k < img.size(0); ++k) {
            if (stats.std[k] < 1e-8) {
                if (!warned) {
                    log::warn("channel " + std::to_string(k) +
                              " has zero variance; skipping standardization for it");
                    warned = true;
                }
                continue;
            }
            img[k].sub_(stats.mean[k]).div_(stats.std[k]);
        }
        s.image = img;
    }
}

// ---------------------------------------------------------------- augmentation

uint64_t sample_seed(uint64_t seed, const std::string& id, int64_t epoch) {
    // FNV-1a over the id keeps the seed stable across platforms.
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : id) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(h), static_cast<uint32_t>(h >> 32),
                      static_cast<uint32_t>(epoch), static_cast<uint32_t>(epoch >> 32)};
    std::array<uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

torch::Tensor rotate90(const torch::Tensor& t, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return t;
    const int64_t d = t.dim();
    return torch::rot90(t, k, {d - 2, d - 1}).contiguous();
}

namespace {

// Rotation by an arbitrary angle about the centre, zero padding.
torch::Tensor rotate_continuous(const torch::Tensor& t, double degrees, bool nearest) {
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    auto theta = torch::tensor({c, -s, 0.0, s, c, 0.0}, torch::kFloat).view({1, 2, 3});
    auto in = t.to(torch::kFloat);
    const bool is_mask = in.dim() == 2;
    if (is_mask) in = in.unsqueeze(0);
    in = in.unsqueeze(0);
    auto grid = F::affine_grid(theta, in.sizes(), false);
    auto opts = F::GridSampleFuncOptions().padding_mode(torch::kZeros).align_corners(false);
    if (nearest) opts.mode(torch::kNearest);
    else opts.mode(torch::kBilinear);
    auto out = F::grid_sample(in, grid, opts).squeeze(0);
    if (is_mask) out = out.squeeze(0).round().to(t.scalar_type());
    return out.contiguous();
}

}  // namespace

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Sample out = s;
    // Draw every decision up front so the stream consumption is fixed.
    const bool hflip = u(rng) < cfg.flip_horizontal_p;
    const bool vflip = u(rng) < cfg.flip_vertical_p;
    const bool rotate = u(rng) < cfg.rotation_p;
    const double pick = u(rng);

    if (hflip) {
        out.image = torch::flip(out.image, {2});
        out.mask = torch::flip(out.mask, {1});
    }
    if (vflip) {
        out.image = torch::flip(out.image, {1});
        out.mask = torch::flip(out.mask, {0});
    }
    if (rotate) {
        if (cfg.continuous_rotation) {
            const double deg = pick * 360.0;
            out.image = rotate_continuous(out.image, deg, false);
            out.mask = rotate_continuous(out.mask, deg, true);
        } else if (!cfg.rotation_choices.empty()) {
            const auto n = cfg.rotation_choices.size();
            const auto idx = std::min(static_cast<size_t>(pick * n), n - 1);
            const int turns = cfg.rotation_choices[idx] / 90;
            out.image = rotate90(out.image, turns);
            out.mask = rotate90(out.mask, turns);
        }
    }
    out.image = out.image.contiguous();
    out.mask = out.mask.contiguous();
    return out;
}

// ---------------------------------------------------------------- batching

Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices) {
    require(!indices.empty(), "make_batch: no indices");
    std::vector<torch::Tensor> imgs, masks;
    Batch b;
    for (size_t i : indices) {
        const auto& s = samples.at(i);
        imgs.push_back(s.image);
        masks.push_back(s.mask.to(torch::kLong));
        b.ids.push_back(s.id);
    }
    b.images = torch::stack(imgs);
    b.masks = torch::stack(masks);
    return b;
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(sample_seed(seed, "#order", epoch));
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

// ---------------------------------------------------------------- synthetic data

namespace {

struct Rgb {
    double r, g, b;
};

Rgb class_colour(int64_t cls, int64_t num_classes, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (num_classes == 2) return {0.55 + 0.4 * u(rng), 0.55 + 0.4 * u(rng), 0.55 + 0.4 * u(rng)};
    // Distinct hue per class, bright, with a little jitter.
    const double hue = 360.0 * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
    cv::Mat hsv(1, 1, CV_32FC3, cv::Scalar(static_cast<float>(hue), 0.75f, 0.95f)), rgb;
    cv::cvtColor(hsv, rgb, cv::COLOR_HSV2RGB);
    auto px = rgb.at<cv::Vec3f>(0, 0);
    auto jitter = [&] { return 0.06 * (u(rng) - 0.5); };
    return {px[0] + jitter(), px[1] + jitter(), px[2] + jitter()};
}

// Rasterizes one random shape into `canvas` (0/1).
void draw_shape(cv::Mat& canvas, int64_t size, ShapeFamily family, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double cx = (0.15 + 0.7 * u(rng)) * size;
    const double cy = (0.15 + 0.7 * u(rng)) * size;
    const double r = (0.1 + 0.16 * u(rng)) * size;
    bool ellipse = family == ShapeFamily::ellipses;
    if (family == ShapeFamily::mixed) ellipse = u(rng) < 0.5;
    if (ellipse) {
        const double aspect = 0.5 + 0.5 * u(rng);
        const double angle = 180.0 * u(rng);
        cv::ellipse(canvas, cv::Point(static_cast<int>(cx), static_cast<int>(cy)),
                    cv::Size(static_cast<int>(r), std::max(1, static_cast<int>(r * aspect))), angle, 0,
                    360, cv::Scalar(1), cv::FILLED, cv::LINE_8);
        return;
    }
    std::uniform_int_distribution<int> nv(3, 7);
    const int n = nv(rng);
    std::vector<double> angles(n);
    for (auto& a : angles) a = 2.0 * std::numbers::pi * u(rng);
    std::sort(angles.begin(), angles.end());
    std::vector<cv::Point> pts;
    for (double a : angles) {
        const double rr = r * (0.6 + 0.4 * u(rng));
        pts.emplace_back(static_cast<int>(std::lround(cx + rr * std::cos(a))),
                         static_cast<int>(std::lround(cy + rr * std::sin(a))));
    }
    cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(1), cv::LINE_8);
}

void synth_pair(const SynthConfig& cfg, uint64_t pair_seed, cv::Mat& image, cv::Mat& mask) {
    std::mt19937_64 rng(pair_seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int size = static_cast<int>(cfg.size);
    const double area = static_cast<double>(size) * size;

    std::vector<std::pair<cv::Mat, Rgb>> shapes;
    for (int attempt = 0;; ++attempt) {
        mask = cv::Mat::zeros(size, size, CV_8UC1);
        shapes.clear();
        std::uniform_int_distribution<int> count(1, 3);
        std::uniform_int_distribution<int64_t> cls(1, cfg.num_classes - 1);
        for (int k = count(rng); k > 0; --k) {
            cv::Mat canvas = cv::Mat::zeros(size, size, CV_8UC1);
            draw_shape(canvas, cfg.size, cfg.shapes, rng);
            const int64_t c = cfg.num_classes == 2 ? 1 : cls(rng);
            mask.setTo(cv::Scalar(static_cast<double>(c)), canvas);
            shapes.emplace_back(canvas, class_colour(c, cfg.num_classes, rng));
        }
        const double frac = cv::countNonZero(mask) / area;
        if (frac >= 0.02 && frac <= 0.6) break;
        if (attempt > 1000) throw std::runtime_error("synth: cannot satisfy the foreground fraction");
    }

    // Dark background with a gentle gradient.
    const double base[3] = {0.1 + 0.25 * u(rng), 0.1 + 0.25 * u(rng), 0.1 + 0.25 * u(rng)};
    const double gx = 0.2 * (u(rng) - 0.5), gy = 0.2 * (u(rng) - 0.5);
    std::vector<float> px(static_cast<size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double g = gx * x / size + gy * y / size;
            for (int c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = static_cast<float>(base[c] + g);
        }
    }
    for (const auto& [canvas, col] : shapes) {
        const double rgb[3] = {col.r, col.g, col.b};
        for (int y = 0; y < size; ++y) {
            const uint8_t* row = canvas.ptr<uint8_t>(y);
            for (int x = 0; x < size; ++x) {
                if (!row[x]) continue;
                for (int c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = static_cast<float>(rgb[c]);
            }
        }
    }
    image.create(size, size, CV_8UC3);
    for (int y = 0; y < size; ++y) {
        auto* row = image.ptr<cv::Vec3b>(y);
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = px[(y * size + x) * 3 + c] + cfg.noise * noise(rng);
                // Stored as BGR for imwrite.
                row[x][2 - c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
    }
}

}  // namespace

void generate_synthetic(const SynthConfig& cfg, const fs::path& out) {
    cfg.validate();
    const std::vector<std::pair<std::string, int64_t>> splits{{"train", cfg.n_samples},
                                                              {"val", cfg.val_count()}};
    for (size_t si = 0; si < splits.size(); ++si) {
        const auto& [split, n] = splits[si];
        fs::create_directories(out / split / "images");
        fs::create_directories(out / split / "masks");
        for (int64_t i = 0; i < n; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "synth_%05lld", static_cast<long long>(i));
            cv::Mat image, mask;
            synth_pair(cfg, sample_seed(cfg.seed, split + "/" + name, 0), image, mask);
            if (cfg.num_classes == 2) mask *= 255;
            write_png(out / split / "images" / (std::string(name) + ".png"), image);
            write_png(out / split / "masks" / (std::string(name) + ".png"), mask);
        }
    }
    std::ofstream os(out / "manifest.json");
    if (!os) throw DataError("cannot write manifest in " + out.string());
    os << cfg.to_json().dump(2) << '\n';
}

}  // namespace dsvm::data
