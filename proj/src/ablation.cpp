#include "dsvm/engine.hpp"

#include "dsvm/error.hpp"
#include "dsvm/log.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace dsvm::engine {

namespace {

struct Variant {
    const char* label;
    bool proj;
    bool prog;
};

constexpr Variant kVariants[] = {
    {"baseline", false, false},
    {"+proj", true, false},
    {"+prog", false, true},
    {"+proj+prog", true, true},
};

constexpr const char* kMetricNames[kAblationMetrics] = {"mIoU", "DSC", "Acc", "Spe", "Sen", "Avg"};

std::array<double, kAblationMetrics> metric_row(const metrics::MetricReport& r) {
    return {r.miou, r.dsc, r.acc, r.spe, r.sen, r.average()};
}

}  // namespace

AblationResult run_ablation(const TrainConfig& cfg, const TrainData& data,
                            const std::vector<uint64_t>& seeds, const fs::path& out_dir) {
    require_config(!seeds.empty(), "ablation: no seeds given");
    require_config(!data.val.empty(), "ablation: a validation split is required");
    require_config(cfg.loss.alpha > 0 && cfg.loss.beta > 0,
                   "ablation: loss.alpha and loss.beta must be positive");

    AblationResult res;
    res.seeds = seeds;
    res.shared_init = true;
    for (const auto& v : kVariants) {
        AblationRow row;
        row.label = v.label;
        row.alpha = v.proj ? cfg.loss.alpha : 0.0;
        row.beta = v.prog ? cfg.loss.beta : 0.0;
        res.rows.push_back(row);
    }

    for (const uint64_t seed : seeds) {
        uint64_t fingerprint = 0, batch_hash = 0;
        for (size_t i = 0; i < res.rows.size(); ++i) {
            auto& row = res.rows[i];
            TrainConfig c = cfg;
            c.seed = seed;
            c.loss.alpha = row.alpha;
            c.loss.beta = row.beta;
            c.output_dir = (out_dir / ("seed" + std::to_string(seed)) / row.label).string();
            log::info("ablation: seed " + std::to_string(seed) + ", " + row.label);
            auto tr = train(c, data);
            if (i == 0) {
                fingerprint = tr.init_fingerprint;
                batch_hash = tr.first_batch_hash;
            } else if (tr.init_fingerprint != fingerprint || tr.first_batch_hash != batch_hash) {
                res.shared_init = false;
            }
            require(tr.best_epoch >= 1, "ablation: run produced no validated epoch");
            row.per_seed.push_back(metric_row(tr.epochs.at(tr.best_epoch - 1).val_mean));
        }
    }

    for (auto& row : res.rows) {
        const double n = static_cast<double>(row.per_seed.size());
        for (int m = 0; m < kAblationMetrics; ++m) {
            double sum = 0;
            for (const auto& r : row.per_seed) sum += r[m];
            row.mean[m] = sum / n;
            double ss = 0;
            for (const auto& r : row.per_seed) ss += (r[m] - row.mean[m]) * (r[m] - row.mean[m]);
            row.stddev[m] = row.per_seed.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        }
    }
    return res;
}

void write_ablation_csv(std::ostream& os, const AblationResult& r) {
    os << "config";
    for (const auto* name : kMetricNames) os << ',' << name;
    os << '\n';
    char buf[64];
    for (const auto& row : r.rows) {
        os << row.label;
        for (int m = 0; m < kAblationMetrics; ++m) {
            std::snprintf(buf, sizeof buf, ",%.4f±%.4f", row.mean[m], row.stddev[m]);
            os << buf;
        }
        os << '\n';
    }
}

nlohmann::json to_json(const AblationResult& r) {
    nlohmann::json j;
    j["seeds"] = r.seeds;
    j["shared_init"] = r.shared_init;
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json jr = {{"config", row.label}, {"alpha", row.alpha}, {"beta", row.beta}};
        for (int m = 0; m < kAblationMetrics; ++m) {
            nlohmann::json per = nlohmann::json::array();
            for (const auto& s : row.per_seed) per.push_back(s[m]);
            jr[kMetricNames[m]] = {{"mean", row.mean[m]}, {"std", row.stddev[m]}, {"per_seed", per}};
        }
        rows.push_back(jr);
    }
    return j;
}

}  // namespace dsvm::engine
