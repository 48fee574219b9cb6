#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace dsvm::data {

namespace fs = std::filesystem;

struct Sample {
    std::string id;
    torch::Tensor image;  // float32 [C, H, W]
    torch::Tensor mask;   // uint8 [H, W]; binary 0/1 or class indices
};

struct AugmentConfig {
    double flip_horizontal_p = 0.5;
    double flip_vertical_p = 0.5;
    double rotation_p = 0.5;
    std::vector<int> rotation_choices{90, 180, 270};
    // Draw an angle uniformly from [0, 360) instead of the right-angle choices.
    bool continuous_rotation = false;

    void validate() const;
};

enum class ShapeFamily { ellipses, polygons, mixed };

struct SynthConfig {
    int64_t n_samples = 64;  // training pairs
    int64_t n_val = -1;      // validation pairs; -1 means n_samples / 4
    int64_t size = 64;
    int64_t num_classes = 2;  // 2 = binary masks (0/255), >2 = class-index masks
    ShapeFamily shapes = ShapeFamily::mixed;
    double noise = 0.05;
    uint64_t seed = 0;

    int64_t val_count() const { return n_val < 0 ? n_samples / 4 : n_val; }
    void validate() const;
    nlohmann::json to_json() const;
};

struct LoadOptions {
    int64_t size = 64;         // every sample is resized to size x size
    int64_t num_classes = 2;   // 2 = binary (masks thresholded at 127)
    int64_t in_channels = 3;   // 3 = RGB, 1 = grayscale
};

// Per-channel statistics of [0, 1]-scaled training images.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    int64_t count = 0;
    int64_t size = 0;

    nlohmann::json to_json() const;
    static NormStats from_json(const nlohmann::json& j);
};

// Reads <root>/<split>/images/*.png with masks from <root>/<split>/masks/ matched
// by basename. Samples are sorted by id and resized to opts.size.
std::vector<Sample> load_dataset(const fs::path& root, const std::string& split,
                                 const LoadOptions& opts);

// Writes <out>/train and <out>/val in the loader layout plus manifest.json.
void generate_synthetic(const SynthConfig& cfg, const fs::path& out);

// Seed for one sample's augmentation in one epoch, independent of visiting order.
uint64_t sample_seed(uint64_t seed, const std::string& id, int64_t epoch);

// Same geometric transform on image and mask. Right-angle rotations and flips
// only permute pixels; continuous rotation uses nearest-neighbour for the mask.
Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// Quarter turns counter-clockwise of the last two axes.
torch::Tensor rotate90(const torch::Tensor& t, int quarter_turns);

// Bilinear image / nearest mask resize, then optional per-channel standardization.
Sample preprocess(const Sample& s, int64_t size, const NormStats* stats = nullptr);

NormStats compute_norm_stats(const std::vector<Sample>& samples);
// Reuses <root>/norm_stats.json when it matches; otherwise computes and writes it.
NormStats load_or_compute_norm_stats(const fs::path& root, const std::vector<Sample>& train);
// In place. Channels with zero variance are left unscaled (with a warning).
void standardize(std::vector<Sample>& samples, const NormStats& stats);

struct Batch {
    torch::Tensor images;  // [B, C, H, W] float32
    torch::Tensor masks;   // [B, H, W] int64
    std::vector<std::string> ids;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices);

// Deterministic permutation of [0, n) for an epoch.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch);

// Mask tensor <-> 8-bit image helpers used by the CLI.
void write_mask_png(const fs::path& path, const torch::Tensor& mask, bool binary);
torch::Tensor read_image(const fs::path& path, int64_t in_channels);  // float [C,H,W] in [0,1]
// uint8 [H,W] labels. Binary: 0/1 as is, otherwise thresholded at 127. Labels
// outside the class range raise ConfigError.
torch::Tensor read_mask(const fs::path& path, int64_t num_classes);
// Image blended with the predicted mask; predicted boundary in red, ground-truth
// boundary (when given) in green.
void write_overlay_png(const fs::path& path, const torch::Tensor& image, const torch::Tensor& pred,
                       const torch::Tensor* truth = nullptr);

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

}  // namespace dsvm::data
