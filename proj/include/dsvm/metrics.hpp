#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dsvm::metrics {

// Row-major H x W label image (binary 0/1 or class indices).
struct LabelMap {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> labels;

    LabelMap() = default;
    LabelMap(int64_t h, int64_t w, uint8_t fill = 0)
        : height(h), width(w), labels(static_cast<size_t>(h * w), fill) {}

    uint8_t at(int64_t r, int64_t c) const { return labels[static_cast<size_t>(r * width + c)]; }
    uint8_t& at(int64_t r, int64_t c) { return labels[static_cast<size_t>(r * width + c)]; }
    int64_t size() const { return height * width; }

    // Binary map with 1 where the label equals `cls`.
    LabelMap one_vs_rest(uint8_t cls) const;
};

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
};

struct Scores {
    double miou = 0, dsc = 0, acc = 0, spe = 0, sen = 0;
};

struct Spacing {
    double row = 1.0;
    double col = 1.0;
};

enum class HD95Mode {
    combined,      // percentile of the pooled pred->gt and gt->pred distances
    max_directed,  // max of the two directed percentiles
};

struct ClassReport {
    int cls = 0;
    double dsc = 0;
    std::optional<double> hd95;
};

struct MetricReport {
    std::string id;
    double miou = 0, dsc = 0, acc = 0, spe = 0, sen = 0;
    std::optional<double> hd95;  // empty when either mask has no foreground
    std::vector<ClassReport> per_class;

    // Average of the five ratio metrics.
    double average() const { return (miou + dsc + acc + spe + sen) / 5.0; }
};

// Pixel tallies with nonzero labels treated as foreground.
ConfusionCounts confusion_counts(const LabelMap& pred, const LabelMap& gt);

// IoU, DSC, accuracy, specificity, sensitivity. A zero denominator means the
// relevant set is empty in both masks and yields 1.
Scores segmentation_metrics(const ConfusionCounts& c);

// Foreground pixels with a background 4-neighbour or touching the image edge.
std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const LabelMap& mask);

// 95th percentile (linear interpolation) of boundary-to-boundary nearest
// distances, scaled by spacing. Empty when either mask has no foreground.
std::optional<double> hd95(const LabelMap& pred, const LabelMap& gt, Spacing spacing = {},
                           HD95Mode mode = HD95Mode::combined);

// Linear-interpolated percentile of `values` (q in [0, 100]); values is sorted in place.
double percentile(std::vector<double>& values, double q);

MetricReport binary_report(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                           Spacing spacing = {}, HD95Mode mode = HD95Mode::combined);

// Per-class one-vs-rest DSC and HD95 for classes 1..K-1; aggregate DSC/HD95 are
// means over those classes (HD95 over defined values only).
MetricReport multiclass_report(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                               int num_classes, Spacing spacing = {},
                               HD95Mode mode = HD95Mode::combined);

struct Summary {
    MetricReport mean;    // mean over images
    MetricReport pooled;  // from summed confusion counts (binary only)
    int hd95_undefined = 0;
    int images = 0;
};

Summary summarize(const std::vector<MetricReport>& reports,
                  const std::vector<ConfusionCounts>& counts = {});

// CSV with fixed column order: id, miou, dsc, acc, spe, sen, hd95.
void write_csv(std::ostream& os, const std::vector<MetricReport>& reports);
void write_csv(const std::string& path, const std::vector<MetricReport>& reports);

nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const Summary& s);

}  // namespace dsvm::metrics
