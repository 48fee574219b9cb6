// Acceptance run: one PASS/FAIL line per criterion, exit code 1 on any FAIL.
#include "dsvm/distill.hpp"
#include "dsvm/engine.hpp"
#include "dsvm/log.hpp"
#include "dsvm/metrics.hpp"
#include "dsvm/network.hpp"
#include "dsvm/objectives.hpp"
#include "dsvm/ssm.hpp"

#include <CLI11.hpp>
#include <gradcheck.hpp>
#include <json.hpp>
#include <temp_dir.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

using namespace dsvm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------- 1. scan oracle

struct ScanFixture {
    ssm::ScanInput input;
    ssm::SSMParams params;
};

ScanFixture random_scan(int64_t L, int64_t N, int64_t D, uint64_t seed, torch::Dtype dtype) {
    torch::manual_seed(seed);
    auto o = torch::TensorOptions().dtype(dtype);
    ScanFixture f;
    f.input.u = torch::randn({L, D}, o);
    f.input.delta = torch::rand({L, D}, o) * 0.5 + 0.01;
    f.input.b = torch::randn({L, N}, o);
    f.input.c = torch::randn({L, N}, o);
    f.params.a_log = torch::randn({D, N}, o) * 0.5;
    f.params.d_skip = torch::randn({D}, o);
    f.params.delta_bias = torch::zeros({D}, o);
    return f;
}

double max_rel_error(const torch::Tensor& got, const torch::Tensor& ref) {
    auto g = got.to(torch::kDouble), r = ref.to(torch::kDouble);
    // 1e-6 absolute floor for entries near zero
    auto err = ((g - r).abs() - 1e-6).clamp_min(0.0) / r.abs().clamp_min(1e-6);
    return err.max().item<double>();
}

Outcome scan_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int64_t> len(1, 32), small(1, 8);
    double worst = 0, worst_abs = 0;
    for (int i = 0; i < 100; ++i) {
        const int64_t L = len(rng), N = small(rng), D = small(rng);
        auto f = random_scan(L, N, D, 5000 + i, torch::kFloat);
        auto got = ssm::selective_scan(f.input, f.params);
        auto ref = ssm::selective_scan_sequential(f.input, f.params);
        worst = std::max(worst, max_rel_error(got, ref));
        worst_abs = std::max(worst_abs, (got.to(torch::kDouble) - ref).abs().max().item<double>());
    }
    const double s = seconds_since(t0);
    return {worst < 1e-5 && s < 10.0,
            fmt("max rel err %.3g (< 1e-5), max abs err %.3g, over 100 fixtures, %.1f s (< 10 s)",
                worst, worst_abs, s)};
}

// ---------------------------------------------------------------- 2. gradient checks

torch::Tensor leaf(const torch::Tensor& t) { return t.detach().clone().set_requires_grad(true); }

Outcome gradient_checks() {
    const auto t0 = Clock::now();
    std::vector<std::pair<std::string, double>> errs;

    {
        auto f = random_scan(6, 3, 2, 42, torch::kDouble);
        auto u = leaf(f.input.u), delta = leaf(f.input.delta), b = leaf(f.input.b),
             c = leaf(f.input.c), a_log = leaf(f.params.a_log), d_skip = leaf(f.params.d_skip);
        auto w = torch::randn({6, 2}, torch::kDouble);
        auto fn = [&] {
            return (ssm::selective_scan({u, delta, b, c}, {a_log, d_skip, torch::Tensor()}) * w).sum();
        };
        errs.emplace_back("selective_scan",
                          testing::gradcheck(fn, {{"u", u}, {"delta", delta}, {"b", b}, {"c", c},
                                                  {"a_log", a_log}, {"d_skip", d_skip}})
                              .max_rel_error);
    }
    {
        torch::manual_seed(5);
        ssm::VSSBlock block(ssm::VSSBlockOptions(4).state_dim(4));
        block->to(torch::kDouble);
        auto x = torch::randn({1, 4, 4, 4}, torch::kDouble).requires_grad_(true);
        auto w = torch::randn({1, 4, 4, 4}, torch::kDouble);
        std::vector<std::pair<std::string, torch::Tensor>> in{{"x", x}};
        for (auto& p : block->named_parameters()) in.emplace_back(p.key(), p.value());
        errs.emplace_back("vss_block",
                          testing::gradcheck([&] { return (block->forward(x) * w).sum(); }, in)
                              .max_rel_error);
    }
    {
        torch::manual_seed(7);
        network::ModelConfig cfg;
        cfg.base_dim = 2;
        cfg.input_size = 32;
        distill::DistillConfig dcfg;
        dcfg.teacher_detach = false;
        distill::DistillHeads heads(cfg, dcfg);
        heads->to(torch::kDouble);
        network::FeaturePyramid p;
        std::vector<std::pair<std::string, torch::Tensor>> in;
        for (int l = 1; l <= network::kLevels; ++l) {
            const auto c = cfg.level_channels(l), s = cfg.level_size(l);
            p.encoder.push_back(torch::randn({1, c, s, s}, torch::kDouble).requires_grad_(true));
            p.decoder.push_back(torch::randn({1, c, s, s}, torch::kDouble).requires_grad_(true));
            in.emplace_back("enc" + std::to_string(l), p.encoder.back());
            in.emplace_back("dec" + std::to_string(l), p.decoder.back());
        }
        for (auto& kv : heads->named_parameters()) in.emplace_back(kv.key(), kv.value());
        errs.emplace_back("projection_loss",
                          testing::gradcheck([&] { return distill::projection_loss(p, heads).total; }, in)
                              .max_rel_error);
        errs.emplace_back("progressive_loss",
                          testing::gradcheck([&] { return distill::progressive_loss(p, heads).total; }, in)
                              .max_rel_error);
    }
    {
        torch::manual_seed(4);
        auto y = (torch::rand({1, 1, 4, 4}) > 0.5).to(torch::kDouble);
        auto probs = (torch::rand({1, 1, 4, 4}, torch::kDouble) * 0.8 + 0.1).requires_grad_();
        errs.emplace_back("bcedice", testing::gradcheck([&] { return objectives::bcedice_loss(probs, y); },
                                                        {{"probs", probs}})
                                         .max_rel_error);
        auto logits = torch::randn({1, 1, 4, 4}, torch::kDouble).requires_grad_();
        errs.emplace_back("bcedice_logits",
                          testing::gradcheck([&] { return objectives::bcedice_loss_with_logits(logits, y); },
                                             {{"logits", logits}})
                              .max_rel_error);
        auto ml = torch::randn({2, 3, 3, 3}, torch::kDouble).requires_grad_();
        auto mt = torch::randint(0, 3, {2, 3, 3}, torch::kLong);
        errs.emplace_back("cedice", testing::gradcheck([&] { return objectives::cedice_loss(ml, mt); },
                                                       {{"logits", ml}})
                                        .max_rel_error);
    }

    bool ok = true;
    std::string detail;
    for (const auto& [name, e] : errs) {
        ok = ok && e < 1e-3;
        detail += fmt("%s %.2g, ", name.c_str(), e);
    }
    const double s = seconds_since(t0);
    ok = ok && s < 60.0;
    return {ok, detail + fmt("all < 1e-3, %.1f s (< 60 s)", s)};
}

// ---------------------------------------------------------------- 3. shape contract

Outcome shape_contract() {
    torch::NoGradGuard ng;
    int checked = 0;
    std::string bad;
    for (int64_t hw : {64, 128}) {
        for (int64_t c : {8, 16}) {
            for (int64_t k : {1, 4}) {
                network::ModelConfig cfg;
                cfg.base_dim = c;
                cfg.input_size = hw;
                cfg.num_classes = k;
                torch::manual_seed(0);
                network::DSVMUNet model(cfg);
                model->eval();
                auto out = model->forward(torch::randn({2, 3, hw, hw}));
                for (int l = 1; l <= network::kLevels; ++l) {
                    const int64_t ch = c << (l - 1), side = hw >> (l + 1);
                    const std::vector<int64_t> want{2, ch, side, side};
                    for (const auto* f : {&out.pyramid.enc(l), &out.pyramid.dec(l)}) {
                        ++checked;
                        if (f->sizes().vec() != want) bad += fmt("H%lld C%lld l%d ", (long long)hw, (long long)c, l);
                    }
                }
                ++checked;
                if (out.logits.sizes().vec() != std::vector<int64_t>{2, k, hw, hw}) bad += "logits ";
            }
        }
    }
    return {bad.empty() && checked == 72, fmt("%d shapes checked over H in {64,128}, C in {8,16}, K in {1,4}", checked) +
                                                       (bad.empty() ? "" : "; mismatches: " + bad)};
}


// ---------------------------------------------------------------- 4. distillation identities

network::FeaturePyramid random_pyramid(const network::ModelConfig& cfg, torch::Dtype dtype, bool grad) {
    network::FeaturePyramid p;
    auto o = torch::TensorOptions().dtype(dtype);
    for (int l = 1; l <= network::kLevels; ++l) {
        const auto c = cfg.level_channels(l), s = cfg.level_size(l);
        p.encoder.push_back(torch::randn({1, c, s, s}, o).requires_grad_(grad));
        p.decoder.push_back(torch::randn({1, c, s, s}, o).requires_grad_(grad));
    }
    return p;
}

void zero_biases(torch::nn::Module& m) {
    torch::NoGradGuard ng;
    for (auto& p : m.named_parameters()) {
        if (p.key().ends_with("bias")) p.value().zero_();
    }
}

double grad_mass(const torch::Tensor& t) {
    return t.grad().defined() ? t.grad().abs().sum().item<double>() : 0.0;
}

Outcome distill_identities() {
    std::vector<std::string> failed;
    auto cfg = network::ModelConfig::desk();
    network::ModelConfig tiny;
    tiny.base_dim = 2;
    tiny.input_size = 32;

    double prog_zero = 0, proj_zero = 0;
    size_t n_proj = 0, n_prog = 0;
    {
        torch::manual_seed(3);
        distill::DistillHeads heads(cfg, distill::DistillConfig{});
        torch::NoGradGuard ng;
        auto p = random_pyramid(cfg, torch::kFloat, false);
        n_proj = distill::projection_loss(p, heads).terms.size();
        n_prog = distill::progressive_loss(p, heads).terms.size();
        // each student level is rebuilt from its aligned deeper neighbour
        for (int l = network::kLevels; l >= 2; --l) {
            p.encoder[l - 2] = distill::align_adjacent(p.enc(l), heads->prog_encoder(l));
            p.decoder[l - 2] = distill::align_adjacent(p.dec(l), heads->prog_decoder(l));
        }
        prog_zero = distill::progressive_loss(p, heads).total.item<double>();
    }
    {
        distill::DistillConfig dcfg;
        dcfg.proj_spatial_mode = distill::SpatialMode::interpolation;
        distill::DistillHeads heads(tiny, dcfg);
        torch::NoGradGuard ng;
        zero_biases(*heads);
        network::FeaturePyramid p;
        for (int l = 1; l <= network::kLevels; ++l) {
            const auto c = tiny.level_channels(l), s = tiny.level_size(l);
            p.encoder.push_back(torch::full({1, c, s, s}, 3.0));
            p.decoder.push_back(torch::full({1, c, s, s}, 3.0));
            auto w = torch::full({tiny.base_dim, c, 1}, 1.0 / static_cast<double>(c));
            heads->proj_encoder(l)->channel->weight.copy_(w);
            if (l >= 2) heads->proj_decoder(l)->channel->weight.copy_(w);
        }
        proj_zero = distill::projection_loss(p, heads).total.item<double>();
    }
    if (prog_zero != 0.0) failed.push_back("progressive loss not zero");
    if (proj_zero > 1e-12) failed.push_back("projection loss not zero");
    if (n_proj != 7 || n_prog != 6) failed.push_back("term counts");

    // f^d_1 is only ever a teacher; f^e_4 only a progressive teacher
    bool blocking_ok = true;
    for (bool detach : {true, false}) {
        torch::manual_seed(5);
        distill::DistillConfig dcfg;
        dcfg.teacher_detach = detach;
        distill::DistillHeads heads(tiny, dcfg);
        heads->to(torch::kDouble);
        auto p = random_pyramid(tiny, torch::kDouble, true);
        distill::projection_loss(p, heads).total.backward();
        auto q = random_pyramid(tiny, torch::kDouble, true);
        distill::progressive_loss(q, heads).total.backward();
        const double teacher = grad_mass(p.dec(1)) + grad_mass(q.dec(1)) + grad_mass(q.enc(4));
        const double student = grad_mass(p.enc(1)) * grad_mass(q.enc(1)) * grad_mass(q.dec(4));
        blocking_ok = blocking_ok && student > 0 && (detach ? teacher == 0.0 : teacher > 0.0);
    }
    if (!blocking_ok) failed.push_back("teacher detachment");

    std::string detail = fmt("prog loss on aligned pyramid %.3g, proj loss on matched features %.3g, "
                             "terms %zu/%zu, detach blocks teacher gradient: %s",
                             prog_zero, proj_zero, n_proj, n_prog, blocking_ok ? "yes" : "no");
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty(), detail};
}

// ---------------------------------------------------------------- 5. loss values

Outcome loss_values() {
    auto half = torch::full({1, 1, 4, 4}, 0.5, torch::kDouble);
    auto target = (torch::arange(16, torch::kDouble).view({1, 1, 4, 4}).remainder(3) == 0).to(torch::kDouble);
    const double bce = objectives::bce_loss(half, target).item<double>();
    const double dice = objectives::dice_loss(torch::tensor({1.0, 1.0, 0.0}, torch::kDouble),
                                              torch::tensor({0.0, 1.0, 1.0}, torch::kDouble))
                            .item<double>();
    objectives::LossWeights w;  // alpha 1, beta 0.5
    const double total = objectives::total_loss(1.0, 0.2, 0.4, w);
    const double total_t =
        objectives::total_loss(torch::tensor(1.0, torch::kDouble), torch::tensor(0.2, torch::kDouble),
                               torch::tensor(0.4, torch::kDouble), w)
            .item<double>();
    const bool ok = std::abs(bce - std::log(2.0)) <= 1e-6 && std::abs(dice - 0.5) <= 1e-4 &&
                    total == 1.4 && total_t == 1.4;
    return {ok, fmt("BCE(0.5) - ln2 = %.2g, Dice half overlap %.6f, total_loss %.17g (tensor %.17g)",
                    bce - std::log(2.0), dice, total, total_t)};
}

// ---------------------------------------------------------------- 6. scheduler

Outcome scheduler() {
    const double a = engine::cosine_lr(0, 50, 1e-3, 1e-5);
    const double b = engine::cosine_lr(50, 50, 1e-3, 1e-5);
    return {a == 1e-3 && b == 1e-5, fmt("lr(0) = %.17g, lr(50) = %.17g", a, b)};
}

// ---------------------------------------------------------------- 7. metric oracles

metrics::LabelMap random_mask(std::mt19937_64& rng, int64_t h, int64_t w) {
    std::uniform_real_distribution<double> pd(0.0, 1.0);
    std::bernoulli_distribution on(pd(rng) < 0.1 ? 0.0 : pd(rng));
    metrics::LabelMap m(h, w);
    for (auto& v : m.labels) v = on(rng) ? 1 : 0;
    return m;
}

metrics::LabelMap random_blobs(std::mt19937_64& rng, int64_t h, int64_t w) {
    metrics::LabelMap m(h, w);
    std::uniform_int_distribution<int64_t> rr(0, h - 1), cc(0, w - 1);
    std::uniform_int_distribution<int> n(1, 3);
    for (int k = n(rng); k > 0; --k) {
        auto r0 = rr(rng), r1 = rr(rng), c0 = cc(rng), c1 = cc(rng);
        for (auto r = std::min(r0, r1); r <= std::max(r0, r1); ++r)
            for (auto c = std::min(c0, c1); c <= std::max(c0, c1); ++c) m.at(r, c) = 1;
    }
    return m;
}

// Set-based definitions; an empty reference set scores 1 only if the prediction agrees.
metrics::Scores brute_scores(const metrics::LabelMap& p, const metrics::LabelMap& g) {
    int64_t both = 0, pred = 0, truth = 0, neither = 0, uni = 0, agree = 0;
    for (int64_t r = 0; r < p.height; ++r) {
        for (int64_t c = 0; c < p.width; ++c) {
            const bool a = p.at(r, c) != 0, b = g.at(r, c) != 0;
            both += a && b;
            pred += a;
            truth += b;
            neither += !a && !b;
            uni += a || b;
            agree += a == b;
        }
    }
    const int64_t n = p.size(), bg = n - truth;
    auto div = [](int64_t x, int64_t y) { return static_cast<double>(x) / static_cast<double>(y); };
    metrics::Scores s;
    s.miou = uni == 0 ? 1.0 : div(both, uni);
    s.dsc = pred + truth == 0 ? 1.0 : div(2 * both, pred + truth);
    s.acc = div(agree, n);
    s.sen = truth == 0 ? (pred == 0 ? 1.0 : 0.0) : div(both, truth);
    s.spe = bg == 0 ? (pred == n ? 1.0 : 0.0) : div(neither, bg);
    return s;
}

std::optional<double> hd95_oracle(const metrics::LabelMap& a, const metrics::LabelMap& b, double sr,
                                  double sc, bool combined) {
    auto border = [](const metrics::LabelMap& m) {
        std::vector<std::pair<int64_t, int64_t>> out;
        const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
        for (int64_t r = 0; r < m.height; ++r) {
            for (int64_t c = 0; c < m.width; ++c) {
                if (!m.at(r, c)) continue;
                bool edge = false;
                for (int k = 0; k < 4; ++k) {
                    const int64_t rr = r + dr[k], cc = c + dc[k];
                    if (rr < 0 || cc < 0 || rr >= m.height || cc >= m.width || !m.at(rr, cc)) edge = true;
                }
                if (edge) out.emplace_back(r, c);
            }
        }
        return out;
    };
    auto ba = border(a), bb = border(b);
    if (ba.empty() || bb.empty()) return std::nullopt;
    auto directed = [&](const auto& from, const auto& to) {
        std::vector<double> d;
        for (auto [r, c] : from) {
            double best = 1e300;
            for (auto [r2, c2] : to) {
                const double dy = (r - r2) * sr, dx = (c - c2) * sc;
                best = std::min(best, std::sqrt(dy * dy + dx * dx));
            }
            d.push_back(best);
        }
        return d;
    };
    auto q95 = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const double pos = 0.95 * static_cast<double>(v.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    auto d1 = directed(ba, bb), d2 = directed(bb, ba);
    if (!combined) return std::max(q95(d1), q95(d2));
    d1.insert(d1.end(), d2.begin(), d2.end());
    return q95(d1);
}

Outcome metric_oracles() {
    std::mt19937_64 rng(77);
    int mismatches = 0;
    double identity_err = 0;
    for (int i = 0; i < 200; ++i) {
        auto p = random_mask(rng, 16, 16), g = random_mask(rng, 16, 16);
        const auto got = metrics::segmentation_metrics(metrics::confusion_counts(p, g));
        const auto want = brute_scores(p, g);
        if (got.miou != want.miou || got.dsc != want.dsc || got.acc != want.acc ||
            got.spe != want.spe || got.sen != want.sen)
            ++mismatches;
        identity_err = std::max(identity_err, std::abs(got.dsc - 2 * got.miou / (1 + got.miou)));
    }

    double hd_err = 0;
    int hd_defined = 0, hd_bad = 0;
    std::uniform_int_distribution<int64_t> side(1, 32);
    std::uniform_real_distribution<double> sp(0.5, 2.0);
    for (int i = 0; i < 200; ++i) {
        const int64_t h = side(rng), w = side(rng);
        auto p = i % 3 == 0 ? random_mask(rng, h, w) : random_blobs(rng, h, w);
        auto g = random_blobs(rng, h, w);
        const double sr = i % 2 ? sp(rng) : 1.0, sc = i % 2 ? sp(rng) : 1.0;
        for (bool combined : {true, false}) {
            auto got = metrics::hd95(p, g, {sr, sc},
                                     combined ? metrics::HD95Mode::combined : metrics::HD95Mode::max_directed);
            auto want = hd95_oracle(p, g, sr, sc, combined);
            if (got.has_value() != want.has_value()) {
                ++hd_bad;
            } else if (got) {
                ++hd_defined;
                hd_err = std::max(hd_err, std::abs(*got - *want));
            }
        }
    }
    const bool ok = mismatches == 0 && identity_err <= 1e-12 && hd_bad == 0 && hd_err <= 1e-6;
    return {ok, fmt("metric mismatches %d/200, |DSC - 2IoU/(1+IoU)| max %.2g, hd95 max err %.2g over %d "
                    "defined cases (< 1e-6), definedness mismatches %d",
                    mismatches, identity_err, hd_err, hd_defined, hd_bad)};
}

// ---------------------------------------------------------------- 8. desk-scale training

Outcome desk_training(const fs::path& scratch) {
    const auto t0 = Clock::now();
    const fs::path root = scratch / "desk_data";
    data::SynthConfig sc;
    sc.n_samples = 64;
    sc.n_val = 16;
    sc.size = 64;
    sc.seed = 0;
    data::generate_synthetic(sc, root);

    TrainConfig base = TrainConfig::desk();
    base.data_root = root.string();
    base.epochs = 20;
    base.threads = 1;
    const auto data = engine::prepare_data(base);

    engine::TrainOptions opts;
    opts.write_files = false;
    std::vector<double> full, baseline;
    double first_run_s = 0;
    for (uint64_t seed : {0, 1, 2}) {
        for (bool distil : {true, false}) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            if (!distil) cfg.loss.alpha = cfg.loss.beta = 0.0;
            const auto t = Clock::now();
            const auto r = engine::train(cfg, data, opts);
            if (seed == 0 && distil) first_run_s = seconds_since(t);
            (distil ? full : baseline).push_back(r.epochs.back().val_metric);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const bool sanity = full[0] >= 0.80 && first_run_s <= 1200.0;
    const bool non_degraded = mean(full) >= mean(baseline) - 0.01;
    return {sanity && non_degraded,
            fmt("seed-0 full objective final val mIoU %.4f (>= 0.80) in %.0f s (<= 1200 s): %s; "
                "full %.4f/%.4f/%.4f mean %.4f vs baseline %.4f/%.4f/%.4f mean %.4f "
                "(need >= baseline - 0.01): %s; total %.0f s",
                full[0], first_run_s, sanity ? "ok" : "FAILED", full[0], full[1], full[2], mean(full),
                baseline[0], baseline[1], baseline[2], mean(baseline), non_degraded ? "ok" : "FAILED",
                seconds_since(t0))};
}

// ---------------------------------------------------------------- CLI helpers

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + cli + "\" -q " + args + " > \"" + log.string() + "\" 2>&1";
    return std::system(cmd.c_str());
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
    return out;
}

fs::path small_dataset(const fs::path& scratch) {
    const fs::path root = scratch / "small_data";
    if (!fs::exists(root)) {
        data::SynthConfig sc;
        sc.n_samples = 8;
        sc.n_val = 4;
        sc.size = 64;
        sc.seed = 1;
        data::generate_synthetic(sc, root);
    }
    return root;
}

// ---------------------------------------------------------------- 9. ablation harness

Outcome ablation_shape(const std::string& cli, const fs::path& scratch) {
    const auto data = small_dataset(scratch);
    const fs::path out = scratch / "ablate";
    const int rc = run_cli(cli, "ablate --data \"" + data.string() + "\" --epochs 1 --batch-size 4 --seeds 0,1 --out \"" +
                                    out.string() + "\"",
                           scratch / "ablate.log");
    if (rc != 0) return {false, fmt("ablate exited with status %d", rc)};

    const auto lines = read_lines(out / "ablation.csv");
    std::vector<std::string> problems;
    if (lines.size() != 5) problems.push_back(fmt("%zu csv lines", lines.size()));
    if (!lines.empty() && lines[0] != "config,mIoU,DSC,Acc,Spe,Sen,Avg") problems.push_back("header");
    const std::vector<std::string> labels{"baseline", "+proj", "+prog", "+proj+prog"};
    for (size_t i = 1; i < lines.size() && i <= 4; ++i) {
        const auto cells = split(lines[i], ',');
        if (cells.size() != 7 || cells[0] != labels[i - 1]) {
            problems.push_back("row " + std::to_string(i));
            continue;
        }
        for (size_t k = 1; k < cells.size(); ++k) {
            if (cells[k].find("±") == std::string::npos) problems.push_back("cell without ±");
        }
    }

    std::ifstream js(out / "ablation.json");
    const auto j = nlohmann::json::parse(js);
    const bool shared = j.at("shared_init").get<bool>();
    double avg_err = 0;
    for (const auto& row : j.at("rows")) {
        const auto& avg = row.at("Avg").at("per_seed");
        for (size_t s = 0; s < avg.size(); ++s) {
            double sum = 0;
            for (const char* m : {"mIoU", "DSC", "Acc", "Spe", "Sen"}) sum += row.at(m).at("per_seed")[s].get<double>();
            avg_err = std::max(avg_err, std::abs(avg[s].get<double>() - sum / 5));
        }
    }
    if (!shared) problems.push_back("rows did not share initialization");
    if (avg_err > 1e-12) problems.push_back("Avg is not the mean of the five metrics");
    std::string detail = fmt("%zu rows x %zu metric columns, shared_init %s, Avg error %.2g", lines.size() - 1,
                             lines.empty() ? size_t{0} : split(lines[0], ',').size() - 1, shared ? "true" : "false",
                             avg_err);
    for (const auto& p : problems) detail += "; FAILED " + p;
    return {problems.empty(), detail};
}

// ---------------------------------------------------------------- 10. complexity

Outcome complexity() {
    const auto t0 = Clock::now();
    const auto r = engine::count_parameters(network::ModelConfig::paper_scale());
    const double params_m = static_cast<double>(r.params_inference) / 1e6;
    const double layer_g = r.layer_macs / 1e9;
    const double s = seconds_since(t0);
    const double dp = params_m / 27.42 - 1, df = layer_g / 4.11 - 1;
    const bool ok = std::abs(dp) <= 0.20 && std::abs(df) <= 0.25 && s < 30.0;
    return {ok, fmt("params %.4f M (%+.1f%% vs 27.42 M, %+.1f%% vs 22.63 M); layer GMACs %.4f (%+.1f%% vs 4.11 G, "
                    "%+.1f%% vs 3.65 G); all-op GMACs %.4f, GFLOPs (2 x MACs) %.4f; %.1f s",
                    params_m, 100 * dp, 100 * (params_m / 22.63 - 1), layer_g, 100 * df,
                    100 * (layer_g / 3.65 - 1), r.macs / 1e9, r.flops / 1e9, s)};
}

// ---------------------------------------------------------------- 11. determinism

Outcome determinism(const std::string& cli, const fs::path& scratch) {
    const auto data = small_dataset(scratch);
    std::vector<std::vector<std::string>> logs;
    for (const char* name : {"det_a", "det_b"}) {
        const fs::path out = scratch / name;
        const int rc = run_cli(cli, "train --data \"" + data.string() +
                                        "\" --seed 7 --batch-size 2 --epochs 2 --max-steps 5 --threads 1 --out \"" +
                                        out.string() + "\"",
                               scratch / (std::string(name) + ".log"));
        if (rc != 0) return {false, fmt("train exited with status %d", rc)};
        logs.push_back(read_lines(out / "train_log.csv"));
    }
    // header plus five steps
    const bool ok = logs[0].size() >= 6 && logs[1].size() >= 6 &&
                    std::equal(logs[0].begin(), logs[0].begin() + 6, logs[1].begin());
    return {ok, fmt("%zu and %zu log lines, first 5 steps %s", logs[0].size(), logs[1].size(),
                    ok ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string cli;
    std::vector<int> only;
    app.add_option("--cli", cli, "Path to the dsvm executable")->required();
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);

    log::set_level(log::Level::warn);
    torch::set_num_threads(1);
    TempDir scratch("acceptance");

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"scan oracle equivalence", scan_oracle},
        {"gradient checks", gradient_checks},
        {"shape contract", shape_contract},
        {"distillation identities", distill_identities},
        {"analytic loss values", loss_values},
        {"scheduler endpoints", scheduler},
        {"metric oracles", metric_oracles},
        {"desk-scale training", [&] { return desk_training(scratch.path); }},
        {"ablation harness", [&] { return ablation_shape(cli, scratch.path); }},
        {"complexity hooks", complexity},
        {"determinism", [&] { return determinism(cli, scratch.path); }},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
