#pragma once

#include "dsvm/data.hpp"
#include "dsvm/distill.hpp"
#include "dsvm/network.hpp"
#include "dsvm/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace dsvm {

// Ordered key -> value map of a `key = value` text file.
using KeyValues = std::map<std::string, std::string>;

// Parses `key = value` lines; '#' starts a comment. Duplicate keys and
// malformed lines raise ConfigError naming `source` and the line number.
KeyValues parse_key_values(std::istream& is, const std::string& source = "<input>");
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

enum class Schedule {
    cosine,  // closed-form cosine, continued past t_max
    clamp,   // eta_min after t_max
};

struct TrainConfig {
    network::ModelConfig model;
    distill::DistillConfig distill;
    objectives::LossWeights loss;
    data::AugmentConfig augment;
    bool augment_enabled = true;

    int64_t epochs = 20;
    int64_t batch_size = 8;
    double base_lr = 1e-3;
    double weight_decay = 1e-2;
    int64_t t_max = 50;
    double eta_min = 1e-5;
    Schedule schedule = Schedule::cosine;
    double grad_clip = 0.0;  // max global norm, 0 = off
    uint64_t seed = 0;
    int threads = 1;

    std::string data_root;
    std::string train_split = "train";
    std::string val_split = "val";
    bool normalize = true;
    bool val_hd95 = false;
    std::string output_dir = "runs/train";

    static TrainConfig desk();
    static TrainConfig paper();

    void validate() const;
    // Overrides fields from `kv`; unknown keys raise ConfigError.
    void apply(const KeyValues& kv);
    KeyValues to_key_values() const;
    std::string to_text() const { return format_key_values(to_key_values()); }
    static TrainConfig from_text(const std::string& text);

    // Mask label count: 2 for the single-logit binary model.
    int64_t dataset_classes() const { return model.num_classes == 1 ? 2 : model.num_classes; }
    bool multiclass() const { return model.num_classes > 1; }
};

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

}  // namespace dsvm
