#pragma once

#include "dsvm/config.hpp"
#include "dsvm/data.hpp"
#include "dsvm/distill.hpp"
#include "dsvm/metrics.hpp"
#include "dsvm/network.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dsvm::engine {

namespace fs = std::filesystem;

// eta_min + (eta_max - eta_min)(1 + cos(pi t / t_max)) / 2. In clamp mode the
// rate stays at eta_min once t >= t_max.
double cosine_lr(int64_t t, int64_t t_max, double eta_max, double eta_min,
                 Schedule schedule = Schedule::cosine);

// ---------------------------------------------------------------- checkpoints

struct CheckpointMeta {
    std::string config_text;
    int64_t epoch = 0;  // completed epochs
    int64_t step = 0;   // completed optimizer steps
    double best_metric = -std::numeric_limits<double>::infinity();
    int64_t best_epoch = -1;
    bool has_heads = false;
    bool has_optimizer = false;
    std::optional<data::NormStats> stats;  // input standardization used in training
};

// Single archive: model parameters under their module names, `distill.*` heads
// when given, `optimizer.*` state when given, and `meta.*`. Written atomically.
void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, network::DSVMUNet& model,
                     distill::DistillHeads* heads = nullptr,
                     torch::optim::Optimizer* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const fs::path& path);

// Loads into already-constructed modules; heads/optimizer are restored only
// when given and present in the archive.
CheckpointMeta load_checkpoint(const fs::path& path, network::DSVMUNet& model,
                               distill::DistillHeads* heads = nullptr,
                               torch::optim::Optimizer* optimizer = nullptr);

struct LoadedModel {
    TrainConfig config;
    network::DSVMUNet model{nullptr};
    CheckpointMeta meta;
};

LoadedModel load_model(const fs::path& checkpoint);

// ---------------------------------------------------------------- data

struct TrainData {
    std::vector<data::Sample> train;
    std::vector<data::Sample> val;
    std::optional<data::NormStats> stats;
};

// Loads both splits at the model input size and standardizes them with the
// (cached) training statistics when cfg.normalize is set.
TrainData prepare_data(const TrainConfig& cfg);
std::vector<data::Sample> prepare_split(const TrainConfig& cfg, const std::string& split);

// ---------------------------------------------------------------- evaluation

struct EvalOptions {
    int64_t batch_size = 8;
    bool hd95 = true;
    metrics::Spacing spacing{};
    metrics::HD95Mode hd95_mode = metrics::HD95Mode::combined;
};

struct EvalResult {
    std::vector<metrics::MetricReport> per_image;
    std::vector<metrics::ConfusionCounts> counts;
    metrics::Summary summary;
    bool multiclass = false;
};

// Thresholds sigmoid probabilities at 0.5 (K = 1) or takes the argmax (K >= 2).
torch::Tensor predict_labels(const torch::Tensor& logits);

EvalResult evaluate(network::DSVMUNet& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& opts = {});

// mIoU for binary models, mean foreground DSC for multi-class models.
double selection_metric(const EvalResult& r);

void write_eval_outputs(const fs::path& dir, const EvalResult& r);

// ---------------------------------------------------------------- training

struct StepRecord {
    int64_t step = 0;  // 1-based
    int64_t epoch = 0;  // 1-based
    double lr = 0, l_seg = 0, l_proj = 0, l_prog = 0, l_total = 0;
};

std::string format_step(const StepRecord& r);  // one CSV row, %.17g

struct EpochRecord {
    int64_t epoch = 0;
    double val_metric = 0;
    metrics::MetricReport val_mean;
};

struct TrainOptions {
    std::optional<fs::path> resume;  // last.pt to continue from
    int64_t max_steps = -1;          // stop after this many total steps (-1 = all)
    bool write_files = true;
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    std::vector<StepRecord> log;  // steps run by this call
    std::vector<EpochRecord> epochs;
    double best_metric = -std::numeric_limits<double>::infinity();
    int64_t best_epoch = -1;
    uint64_t init_fingerprint = 0;   // hash of the initial model and head parameters
    uint64_t first_batch_hash = 0;   // hash of the first training batch
    double seconds = 0;
    fs::path best_checkpoint, last_checkpoint;
    network::DSVMUNet model{nullptr};  // weights after the last step
};

// Hash of parameter bytes in registration order.
uint64_t parameter_fingerprint(torch::nn::Module& m, uint64_t h = 1469598103934665603ULL);

TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainOptions& opts = {});

// ---------------------------------------------------------------- ablation

inline constexpr int kAblationMetrics = 6;  // mIoU, DSC, Acc, Spe, Sen, Avg

struct AblationRow {
    std::string label;
    double alpha = 0, beta = 0;
    std::vector<std::array<double, kAblationMetrics>> per_seed;
    std::array<double, kAblationMetrics> mean{}, stddev{};
};

struct AblationResult {
    std::vector<uint64_t> seeds;
    std::vector<AblationRow> rows;
    // Every row shared the same initial parameters and first batch for each seed.
    bool shared_init = false;
};

AblationResult run_ablation(const TrainConfig& cfg, const TrainData& data,
                            const std::vector<uint64_t>& seeds, const fs::path& out_dir);

void write_ablation_csv(std::ostream& os, const AblationResult& r);
nlohmann::json to_json(const AblationResult& r);

// ---------------------------------------------------------------- complexity

struct ModuleCost {
    std::string name;
    int64_t params = 0;
    double macs = 0;  // multiply-accumulates per image
};

struct ComplexityReport {
    int64_t input_size = 0;
    int64_t params_inference = 0;
    int64_t params_training = 0;  // including distillation heads
    double macs = 0;              // forward, per image, scans included
    double scan_macs = 0;
    double ssm_projection_macs = 0;  // x_proj / dt_proj applied per scan direction
    // Conv and linear layers only (macs minus scans and scan projections); the
    // figure module-hook profilers report.
    double layer_macs = 0;
    double flops = 0;             // 2 x macs
    std::vector<ModuleCost> modules;

    nlohmann::json to_json() const;
    std::string table() const;
};

// Exact parameter tallies from instantiated modules plus analytic MACs.
ComplexityReport count_parameters(const network::ModelConfig& cfg,
                                  const distill::DistillConfig& dcfg = {});
// Analytic forward FLOPs (2 x MACs) of convolutions, linear maps and scans.
double estimate_flops(const network::ModelConfig& cfg, int64_t input_size);
// Per-module analytic MACs at `input_size`.
std::vector<ModuleCost> estimate_macs(const network::ModelConfig& cfg, int64_t input_size);

}  // namespace dsvm::engine
