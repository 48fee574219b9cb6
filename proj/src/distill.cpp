#include "dsvm/distill.hpp"

#include "dsvm/error.hpp"

#include <sstream>

namespace dsvm::distill {

namespace F = torch::nn::functional;
using network::kLevels;

std::vector<int> DistillConfig::decoder_student_levels() const {
    if (decoder_indexing == DecoderIndexing::literal) return {1, 2, 3};
    return {2, 3, 4};
}

namespace {

void check_finite(const torch::Tensor& f, const std::string& what) {
    require(torch::isfinite(f).all().item<bool>(), "distill: non-finite " + what);
}

void check_level_shape(const torch::Tensor& f, int64_t channels, int64_t size, const char* op,
                       int level) {
    std::ostringstream msg;
    msg << op << ": level " << level << " expects [*, " << channels << ", " << size << ", " << size
        << "], got " << f.sizes();
    require(f.dim() == 4 && f.size(1) == channels && f.size(2) == size && f.size(3) == size,
            msg.str());
}

}  // namespace

ProjectionHeadImpl::ProjectionHeadImpl(const network::ModelConfig& cfg, int level, SpatialMode mode)
    : level_(level),
      in_channels_(cfg.level_channels(level)),
      in_size_(cfg.level_size(level)),
      out_channels_(cfg.base_dim),
      out_size_(cfg.level_size(1)),
      mode_(mode) {
    if (level > 1 && mode == SpatialMode::learned_linear) {
        spatial = register_module(
            "spatial", torch::nn::Linear(torch::nn::LinearOptions(in_size_ * in_size_,
                                                                  out_size_ * out_size_)
                                             .bias(false)));
    }
    channel = register_module(
        "channel", torch::nn::Conv1d(torch::nn::Conv1dOptions(in_channels_, out_channels_, 1)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& f) {
    check_level_shape(f, in_channels_, in_size_, "project_feature", level_);
    const int64_t b = f.size(0);
    torch::Tensor spread;
    if (level_ == 1) {
        spread = f.reshape({b, in_channels_, out_size_ * out_size_});
    } else if (mode_ == SpatialMode::learned_linear) {
        spread = spatial(f.reshape({b, in_channels_, in_size_ * in_size_}));
    } else {
        spread = F::interpolate(f, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{out_size_, out_size_})
                                       .mode(torch::kBilinear)
                                       .align_corners(false))
                     .reshape({b, in_channels_, out_size_ * out_size_});
    }
    return channel(spread).view({b, out_channels_, out_size_, out_size_});
}

AlignHeadImpl::AlignHeadImpl(const network::ModelConfig& cfg, int level)
    : level_(level), in_channels_(cfg.level_channels(level)), in_size_(cfg.level_size(level)) {
    require(level >= 2, "align head: level must be >= 2");
    channel = register_module(
        "channel", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels_, in_channels_ / 2, 1)));
}

torch::Tensor AlignHeadImpl::forward(const torch::Tensor& f_deep) {
    check_level_shape(f_deep, in_channels_, in_size_, "align_adjacent", level_);
    return F::interpolate(channel(f_deep), F::InterpolateFuncOptions()
                                               .scale_factor(std::vector<double>{2.0, 2.0})
                                               .mode(torch::kBilinear)
                                               .align_corners(false));
}

DistillHeadsImpl::DistillHeadsImpl(const network::ModelConfig& cfg, const DistillConfig& dcfg)
    : dcfg_(dcfg) {
    cfg.validate();
    auto proj = register_module("proj", std::make_shared<torch::nn::Module>());
    auto proj_enc = proj->register_module("encoder", std::make_shared<torch::nn::Module>());
    auto proj_dec = proj->register_module("decoder", std::make_shared<torch::nn::Module>());
    auto prog = register_module("prog", std::make_shared<torch::nn::Module>());
    auto prog_enc = prog->register_module("encoder", std::make_shared<torch::nn::Module>());
    auto prog_dec = prog->register_module("decoder", std::make_shared<torch::nn::Module>());

    proj_enc_.resize(kLevels, nullptr);
    proj_dec_.resize(kLevels, nullptr);
    prog_enc_.resize(kLevels, nullptr);
    prog_dec_.resize(kLevels, nullptr);

    for (int l = 1; l <= kLevels; ++l) {
        proj_enc_[l - 1] = proj_enc->register_module("level" + std::to_string(l),
                                                     ProjectionHead(cfg, l, dcfg.proj_spatial_mode));
    }
    for (int l : dcfg.decoder_student_levels()) {
        proj_dec_[l - 1] = proj_dec->register_module("level" + std::to_string(l),
                                                     ProjectionHead(cfg, l, dcfg.proj_spatial_mode));
    }
    for (int l = 2; l <= kLevels; ++l) {
        prog_enc_[l - 1] = prog_enc->register_module("pair" + std::to_string(l), AlignHead(cfg, l));
        prog_dec_[l - 1] = prog_dec->register_module("pair" + std::to_string(l), AlignHead(cfg, l));
    }
}

ProjectionHead& DistillHeadsImpl::proj_encoder(int level) {
    auto& h = proj_enc_.at(level - 1);
    require(!h.is_empty(), "distill: no encoder projection head for this level");
    return h;
}

ProjectionHead& DistillHeadsImpl::proj_decoder(int level) {
    auto& h = proj_dec_.at(level - 1);
    require(!h.is_empty(), "distill: no decoder projection head for this level");
    return h;
}

AlignHead& DistillHeadsImpl::prog_encoder(int level) {
    auto& h = prog_enc_.at(level - 1);
    require(!h.is_empty(), "distill: no encoder align head for this level");
    return h;
}

AlignHead& DistillHeadsImpl::prog_decoder(int level) {
    auto& h = prog_dec_.at(level - 1);
    require(!h.is_empty(), "distill: no decoder align head for this level");
    return h;
}

torch::Tensor mse_distill(const torch::Tensor& student, const torch::Tensor& teacher) {
    std::ostringstream msg;
    msg << "mse_distill: shape mismatch " << student.sizes() << " vs " << teacher.sizes();
    require(student.sizes() == teacher.sizes(), msg.str());
    return (student - teacher).pow(2).mean();
}

torch::Tensor project_feature(const torch::Tensor& f, int level, ProjectionHead& head) {
    require(head->level() == level, "project_feature: head/level mismatch");
    return head->forward(f);
}

torch::Tensor align_adjacent(const torch::Tensor& f_deep, AlignHead& head) {
    return head->forward(f_deep);
}

namespace {

torch::Tensor sum_terms(const std::vector<LossTerm>& terms) {
    auto total = terms.front().value;
    for (size_t i = 1; i < terms.size(); ++i) total = total + terms[i].value;
    return total;
}

void check_pyramid(const network::FeaturePyramid& p) {
    require(p.levels() == kLevels && static_cast<int>(p.decoder.size()) == kLevels,
            "distill: pyramid must hold 4 encoder and 4 decoder levels");
    for (int l = 1; l <= kLevels; ++l) {
        check_finite(p.enc(l), "encoder feature " + std::to_string(l));
        check_finite(p.dec(l), "decoder feature " + std::to_string(l));
    }
}

}  // namespace

DistillLoss projection_loss(const network::FeaturePyramid& pyramid, DistillHeads& heads) {
    check_pyramid(pyramid);
    const bool detach = heads->config().teacher_detach;
    auto teacher = detach ? pyramid.dec(1).detach() : pyramid.dec(1);

    DistillLoss out;
    for (int l = 1; l <= kLevels; ++l) {
        auto student = project_feature(pyramid.enc(l), l, heads->proj_encoder(l));
        out.terms.push_back({"proj.encoder.level" + std::to_string(l), mse_distill(student, teacher)});
    }
    for (int l : heads->config().decoder_student_levels()) {
        auto student = project_feature(pyramid.dec(l), l, heads->proj_decoder(l));
        out.terms.push_back({"proj.decoder.level" + std::to_string(l), mse_distill(student, teacher)});
    }
    out.total = sum_terms(out.terms);
    return out;
}

DistillLoss progressive_loss(const network::FeaturePyramid& pyramid, DistillHeads& heads) {
    check_pyramid(pyramid);
    const bool detach = heads->config().teacher_detach;
    auto maybe_detach = [detach](const torch::Tensor& t) { return detach ? t.detach() : t; };

    DistillLoss out;
    for (int l = 2; l <= kLevels; ++l) {
        // Encoder: the deeper feature comes later in the forward pass and teaches.
        // Detaching before the head keeps the head trainable.
        auto enc_teacher = align_adjacent(maybe_detach(pyramid.enc(l)), heads->prog_encoder(l));
        out.terms.push_back({"prog.encoder.pair" + std::to_string(l),
                             mse_distill(pyramid.enc(l - 1), enc_teacher)});
        // Decoder: the shallower feature comes later and teaches.
        auto dec_student = align_adjacent(pyramid.dec(l), heads->prog_decoder(l));
        out.terms.push_back({"prog.decoder.pair" + std::to_string(l),
                             mse_distill(dec_student, maybe_detach(pyramid.dec(l - 1)))});
    }
    out.total = sum_terms(out.terms);
    return out;
}

std::string to_string(SpatialMode mode) {
    return mode == SpatialMode::learned_linear ? "learned-linear" : "interpolation";
}

SpatialMode spatial_mode_from_string(const std::string& s) {
    if (s == "learned-linear") return SpatialMode::learned_linear;
    if (s == "interpolation") return SpatialMode::interpolation;
    throw ConfigError("unknown projection spatial mode '" + s +
                      "' (expected learned-linear or interpolation)");
}

std::string to_string(DecoderIndexing mode) {
    return mode == DecoderIndexing::shallow_teacher ? "shallow-teacher" : "literal";
}

DecoderIndexing decoder_indexing_from_string(const std::string& s) {
    if (s == "shallow-teacher") return DecoderIndexing::shallow_teacher;
    if (s == "literal") return DecoderIndexing::literal;
    throw ConfigError("unknown decoder indexing '" + s + "' (expected shallow-teacher or literal)");
}

}  // namespace dsvm::distill
