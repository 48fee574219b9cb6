#include "dsvm/engine.hpp"

#include "dsvm/error.hpp"

#include <cstdio>
#include <sstream>

namespace dsvm::engine {

namespace {

// Forward MACs of one VSS block on `tokens` positions of width `dim`.
struct BlockMacs {
    double layers = 0;  // in_proj, depthwise conv, out_proj
    double projections = 0;  // per-direction x_proj and dt_proj
    double scan = 0;
    double total() const { return layers + projections + scan; }
};

BlockMacs vss_block_macs(const network::ModelConfig& cfg, int64_t dim, double tokens) {
    const double d = static_cast<double>(dim);
    const double inner = d * static_cast<double>(cfg.expand);
    const double rank = static_cast<double>((dim + 15) / 16);
    const double n = static_cast<double>(cfg.state_dim);
    const double dirs = static_cast<double>(ssm::kScanDirections);
    BlockMacs m;
    m.layers = tokens * d * 2 * inner + tokens * inner * 9 + tokens * inner * d;
    m.projections = dirs * tokens * inner * (rank + 2 * n) + dirs * tokens * rank * inner;
    // state update and readout per position, channel and state
    m.scan = dirs * tokens * inner * n * 2;
    return m;
}

double tokens_at(int level, int64_t input_size) {
    const double side = static_cast<double>(input_size >> (level + 1));
    return side * side;
}

int64_t count_prefix(torch::nn::Module& m, const std::string& prefix) {
    int64_t n = 0;
    for (const auto& p : m.named_parameters()) {
        if (p.key().rfind(prefix, 0) == 0) n += p.value().numel();
    }
    return n;
}

int64_t count_all(torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace

std::vector<ModuleCost> estimate_macs(const network::ModelConfig& cfg, int64_t input_size) {
    require(input_size > 0 && input_size % 32 == 0,
            "estimate_macs: input size must be a positive multiple of 32");
    std::vector<ModuleCost> out;
    const double c = static_cast<double>(cfg.base_dim);
    const double s = static_cast<double>(input_size);

    out.push_back({"patch_embed", 0,
                   tokens_at(1, input_size) * static_cast<double>(cfg.in_channels) * 16 * c});

    double scan_total = 0, proj_total = 0;
    for (int l = 1; l <= network::kLevels; ++l) {
        const int64_t d = cfg.level_channels(l);
        const double t = tokens_at(l, input_size);
        double macs = 0;
        for (int64_t i = 0; i < cfg.encoder_depth(l); ++i) {
            auto b = vss_block_macs(cfg, d, t);
            macs += b.total();
            scan_total += b.scan;
            proj_total += b.projections;
        }
        if (l < network::kLevels) {
            const double dd = static_cast<double>(d);
            macs += tokens_at(l + 1, input_size) * 4 * dd * 2 * dd;
        }
        out.push_back({"encoder.stage" + std::to_string(l), 0, macs});
    }
    for (int l = network::kLevels; l >= 1; --l) {
        const int64_t d = cfg.level_channels(l);
        const double dd = static_cast<double>(d);
        const double t = tokens_at(l, input_size);
        double macs = 0;
        if (l < network::kLevels) {
            const double up = static_cast<double>(cfg.level_channels(l + 1));
            macs += tokens_at(l + 1, input_size) * up * 4 * (up / 2);
            if (cfg.skip == network::SkipMode::concat) macs += t * 2 * dd * dd;
        }
        for (int64_t i = 0; i < cfg.decoder_depth(l); ++i) {
            auto b = vss_block_macs(cfg, d, t);
            macs += b.total();
            scan_total += b.scan;
            proj_total += b.projections;
        }
        out.push_back({"decoder.stage" + std::to_string(l), 0, macs});
    }
    out.push_back({"final_proj", 0,
                   tokens_at(1, input_size) * c * 16 * c +
                       s * s * c * static_cast<double>(cfg.num_classes)});
    // already included above
    out.push_back({"scan", 0, scan_total});
    out.push_back({"ssm_projections", 0, proj_total});
    return out;
}

double estimate_flops(const network::ModelConfig& cfg, int64_t input_size) {
    double macs = 0;
    for (const auto& m : estimate_macs(cfg, input_size)) {
        if (m.name != "scan" && m.name != "ssm_projections") macs += m.macs;
    }
    return 2 * macs;
}

ComplexityReport count_parameters(const network::ModelConfig& cfg,
                                  const distill::DistillConfig& dcfg) {
    cfg.validate();
    torch::NoGradGuard ng;
    network::DSVMUNet model(cfg);
    distill::DistillHeads heads(cfg, dcfg);

    ComplexityReport r;
    r.input_size = cfg.input_size;
    r.params_inference = count_all(*model);
    const int64_t head_params = count_all(*heads);
    r.params_training = r.params_inference + head_params;

    for (auto& m : estimate_macs(cfg, cfg.input_size)) {
        if (m.name == "scan") {
            r.scan_macs = m.macs;
            continue;
        }
        if (m.name == "ssm_projections") {
            r.ssm_projection_macs = m.macs;
            continue;
        }
        m.params = count_prefix(*model, m.name + ".");
        r.macs += m.macs;
        r.modules.push_back(m);
    }
    r.modules.push_back({"distill_heads (training only)", head_params, 0});
    r.flops = 2 * r.macs;
    r.layer_macs = r.macs - r.scan_macs - r.ssm_projection_macs;
    return r;
}

nlohmann::json ComplexityReport::to_json() const {
    nlohmann::json j;
    j["input_size"] = input_size;
    j["params_inference"] = params_inference;
    j["params_training"] = params_training;
    j["macs"] = macs;
    j["scan_macs"] = scan_macs;
    j["ssm_projection_macs"] = ssm_projection_macs;
    j["layer_macs"] = layer_macs;
    j["flops"] = flops;
    auto& mods = j["modules"] = nlohmann::json::array();
    for (const auto& m : modules) mods.push_back({{"name", m.name}, {"params", m.params}, {"macs", m.macs}});
    return j;
}

std::string ComplexityReport::table() const {
    std::ostringstream os;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-32s %14s %14s\n", "module", "params", "GMACs");
    os << buf;
    for (const auto& m : modules) {
        std::snprintf(buf, sizeof buf, "%-32s %14lld %14.4f\n", m.name.c_str(),
                      static_cast<long long>(m.params), m.macs / 1e9);
        os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "\ninput %lldx%lld\nparams (inference)  %.4f M\nparams (training)   %.4f M\n"
                  "MACs                %.4f G\n  layers            %.4f G\n  scan projections  %.4f G\n"
                  "  scans             %.4f G\nFLOPs (2 x MACs)    %.4f G\n",
                  static_cast<long long>(input_size), static_cast<long long>(input_size),
                  params_inference / 1e6, params_training / 1e6, macs / 1e9, layer_macs / 1e9,
                  ssm_projection_macs / 1e9, scan_macs / 1e9, flops / 1e9);
    os << buf;
    return os.str();
}

}  // namespace dsvm::engine
