#include "dsvm/metrics.hpp"

#include "dsvm/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

namespace dsvm::metrics {

LabelMap LabelMap::one_vs_rest(uint8_t cls) const {
    LabelMap out(height, width);
    for (size_t i = 0; i < labels.size(); ++i) out.labels[i] = labels[i] == cls ? 1 : 0;
    return out;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

namespace {

void check_same_shape(const LabelMap& a, const LabelMap& b, const char* op) {
    require(a.height == b.height && a.width == b.width &&
                a.labels.size() == static_cast<size_t>(a.size()) &&
                b.labels.size() == static_cast<size_t>(b.size()),
            std::string(op) + ": mask shapes differ");
}

double ratio(int64_t num, int64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion_counts(const LabelMap& pred, const LabelMap& gt) {
    check_same_shape(pred, gt, "confusion_counts");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] != 0;
        const bool g = gt.labels[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

Scores segmentation_metrics(const ConfusionCounts& c) {
    Scores s;
    s.miou = ratio(c.tp, c.tp + c.fp + c.fn);
    s.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    s.acc = ratio(c.tp + c.tn, c.total());
    // Background absent from the truth: 1 if the prediction has none either.
    s.spe = c.tn + c.fp == 0 ? (c.fn == 0 ? 1.0 : 0.0) : ratio(c.tn, c.tn + c.fp);
    // Foreground absent from the truth: 1 if the prediction has none either.
    s.sen = c.tp + c.fn == 0 ? (c.fp == 0 ? 1.0 : 0.0) : ratio(c.tp, c.tp + c.fn);
    return s;
}

std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const LabelMap& mask) {
    std::vector<std::pair<int64_t, int64_t>> out;
    const int64_t h = mask.height, w = mask.width;
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            if (!mask.at(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1;
            if (edge || !mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) ||
                !mask.at(r, c + 1)) {
                out.emplace_back(r, c);
            }
        }
    }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of a sampled function along one axis with sample
// spacing `step` (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, double step) {
    const int64_t n = static_cast<int64_t>(f.size());
    std::vector<int64_t> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n + 1));
    const double s2 = step * step;
    auto intersect = [&](int64_t q, int64_t p) {
        return ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
    };
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            if (k < 0) break;
            s = intersect(q, v[k]);
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), kInf);
        return;
    }
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = step * static_cast<double>(q - v[j]);
        d[q] = dq * dq + f[v[j]];
    }
}

// Exact Euclidean distance (not squared) from every pixel to the nearest site.
std::vector<double> distance_to_sites(int64_t h, int64_t w,
                                      const std::vector<std::pair<int64_t, int64_t>>& sites,
                                      Spacing spacing) {
    std::vector<double> grid(static_cast<size_t>(h * w), kInf);
    for (auto [r, c] : sites) grid[r * w + c] = 0.0;

    std::vector<double> f, d;
    f.resize(h);
    d.resize(h);
    for (int64_t c = 0; c < w; ++c) {
        for (int64_t r = 0; r < h; ++r) f[r] = grid[r * w + c];
        edt_1d(f, d, spacing.row);
        for (int64_t r = 0; r < h; ++r) grid[r * w + c] = d[r];
    }
    f.resize(w);
    d.resize(w);
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) f[c] = grid[r * w + c];
        edt_1d(f, d, spacing.col);
        for (int64_t c = 0; c < w; ++c) grid[r * w + c] = std::sqrt(d[c]);
    }
    return grid;
}

std::vector<double> directed_distances(const std::vector<std::pair<int64_t, int64_t>>& from,
                                       const std::vector<double>& field, int64_t w) {
    std::vector<double> out;
    out.reserve(from.size());
    for (auto [r, c] : from) out.push_back(field[r * w + c]);
    return out;
}

}  // namespace

double percentile(std::vector<double>& values, double q) {
    require(!values.empty(), "percentile: empty input");
    require(q >= 0 && q <= 100, "percentile: q must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const LabelMap& pred, const LabelMap& gt, Spacing spacing,
                           HD95Mode mode) {
    check_same_shape(pred, gt, "hd95");
    require(spacing.row > 0 && spacing.col > 0, "hd95: spacing must be positive");
    auto bp = boundary_pixels(pred);
    auto bg = boundary_pixels(gt);
    if (bp.empty() || bg.empty()) return std::nullopt;

    auto to_gt = distance_to_sites(gt.height, gt.width, bg, spacing);
    auto to_pred = distance_to_sites(pred.height, pred.width, bp, spacing);
    auto d_pg = directed_distances(bp, to_gt, gt.width);
    auto d_gp = directed_distances(bg, to_pred, pred.width);

    if (mode == HD95Mode::max_directed) {
        return std::max(percentile(d_pg, 95.0), percentile(d_gp, 95.0));
    }
    d_pg.insert(d_pg.end(), d_gp.begin(), d_gp.end());
    return percentile(d_pg, 95.0);
}

MetricReport binary_report(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                           Spacing spacing, HD95Mode mode) {
    const auto s = segmentation_metrics(confusion_counts(pred, gt));
    MetricReport r;
    r.id = id;
    r.miou = s.miou;
    r.dsc = s.dsc;
    r.acc = s.acc;
    r.spe = s.spe;
    r.sen = s.sen;
    r.hd95 = hd95(pred, gt, spacing, mode);
    return r;
}

MetricReport multiclass_report(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                               int num_classes, Spacing spacing, HD95Mode mode) {
    check_same_shape(pred, gt, "multiclass_report");
    require(num_classes >= 2, "multiclass_report: needs at least 2 classes");
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        require(pred.labels[i] < num_classes && gt.labels[i] < num_classes,
                "multiclass_report: class index out of range");
    }

    MetricReport r;
    r.id = id;
    int64_t correct = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i) correct += pred.labels[i] == gt.labels[i];
    r.acc = pred.labels.empty() ? 1.0 : static_cast<double>(correct) / pred.labels.size();

    double hd_sum = 0;
    int hd_count = 0;
    const int fg_classes = num_classes - 1;
    for (int k = 1; k < num_classes; ++k) {
        auto p = pred.one_vs_rest(static_cast<uint8_t>(k));
        auto g = gt.one_vs_rest(static_cast<uint8_t>(k));
        const auto s = segmentation_metrics(confusion_counts(p, g));
        ClassReport cr{k, s.dsc, hd95(p, g, spacing, mode)};
        r.miou += s.miou / fg_classes;
        r.dsc += s.dsc / fg_classes;
        r.spe += s.spe / fg_classes;
        r.sen += s.sen / fg_classes;
        if (cr.hd95) {
            hd_sum += *cr.hd95;
            ++hd_count;
        }
        r.per_class.push_back(cr);
    }
    if (hd_count > 0) r.hd95 = hd_sum / hd_count;
    return r;
}

Summary summarize(const std::vector<MetricReport>& reports,
                  const std::vector<ConfusionCounts>& counts) {
    Summary s;
    s.images = static_cast<int>(reports.size());
    s.mean.id = "mean";
    s.pooled.id = "pooled";
    if (reports.empty()) return s;

    const double n = static_cast<double>(reports.size());
    double hd_sum = 0;
    int hd_count = 0;
    std::vector<double> cls_dsc;
    std::vector<double> cls_hd_sum;
    std::vector<int> cls_hd_count;
    for (const auto& r : reports) {
        s.mean.miou += r.miou / n;
        s.mean.dsc += r.dsc / n;
        s.mean.acc += r.acc / n;
        s.mean.spe += r.spe / n;
        s.mean.sen += r.sen / n;
        if (r.hd95) {
            hd_sum += *r.hd95;
            ++hd_count;
        } else {
            ++s.hd95_undefined;
        }
        if (cls_dsc.size() < r.per_class.size()) {
            cls_dsc.resize(r.per_class.size(), 0.0);
            cls_hd_sum.resize(r.per_class.size(), 0.0);
            cls_hd_count.resize(r.per_class.size(), 0);
        }
        for (size_t k = 0; k < r.per_class.size(); ++k) {
            cls_dsc[k] += r.per_class[k].dsc / n;
            if (r.per_class[k].hd95) {
                cls_hd_sum[k] += *r.per_class[k].hd95;
                ++cls_hd_count[k];
            }
        }
    }
    if (hd_count > 0) s.mean.hd95 = hd_sum / hd_count;
    for (size_t k = 0; k < cls_dsc.size(); ++k) {
        ClassReport cr{reports.front().per_class[k].cls, cls_dsc[k], std::nullopt};
        if (cls_hd_count[k] > 0) cr.hd95 = cls_hd_sum[k] / cls_hd_count[k];
        s.mean.per_class.push_back(cr);
    }

    if (!counts.empty()) {
        ConfusionCounts total;
        for (const auto& c : counts) total += c;
        const auto p = segmentation_metrics(total);
        s.pooled.miou = p.miou;
        s.pooled.dsc = p.dsc;
        s.pooled.acc = p.acc;
        s.pooled.spe = p.spe;
        s.pooled.sen = p.sen;
    }
    return s;
}

void write_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
    os << "id,miou,dsc,acc,spe,sen,hd95\n";
    os << std::setprecision(10);
    for (const auto& r : reports) {
        os << r.id << ',' << r.miou << ',' << r.dsc << ',' << r.acc << ',' << r.spe << ',' << r.sen
           << ',';
        if (r.hd95) os << *r.hd95;
        else os << "NA";
        os << '\n';
    }
}

void write_csv(const std::string& path, const std::vector<MetricReport>& reports) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_csv(os, reports);
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["miou"] = r.miou;
    j["dsc"] = r.dsc;
    j["acc"] = r.acc;
    j["spe"] = r.spe;
    j["sen"] = r.sen;
    j["hd95"] = r.hd95 ? nlohmann::json(*r.hd95) : nlohmann::json(nullptr);
    if (!r.per_class.empty()) {
        auto& pc = j["per_class"] = nlohmann::json::array();
        for (const auto& c : r.per_class) {
            pc.push_back({{"class", c.cls},
                          {"dsc", c.dsc},
                          {"hd95", c.hd95 ? nlohmann::json(*c.hd95) : nlohmann::json(nullptr)}});
        }
    }
    return j;
}

nlohmann::json to_json(const Summary& s) {
    return {{"images", s.images},
            {"hd95_undefined", s.hd95_undefined},
            {"mean", to_json(s.mean)},
            {"pooled", to_json(s.pooled)}};
}

}  // namespace dsvm::metrics
