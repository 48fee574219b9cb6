#include "dsvm/network.hpp"

#include "dsvm/error.hpp"

#include <sstream>

namespace dsvm::network {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_scale() {
    ModelConfig cfg;
    cfg.base_dim = 96;
    cfg.input_size = 256;
    return cfg;
}

void ModelConfig::validate() const {
    require_config(in_channels >= 1, "model: in_channels must be >= 1");
    require_config(num_classes >= 1, "model: num_classes must be >= 1");
    require_config(base_dim >= 1, "model: base_dim must be >= 1");
    require_config(state_dim >= 1, "model: state_dim must be >= 1");
    require_config(expand >= 1, "model: expand must be >= 1");
    for (auto d : encoder_depths) require_config(d >= 1, "model: encoder depths must be >= 1");
    for (auto d : decoder_depths) require_config(d >= 1, "model: decoder depths must be >= 1");
    const int64_t divisor = int64_t{1} << (kLevels + 1);
    std::ostringstream msg;
    msg << "model: input_size " << input_size << " must be a positive multiple of " << divisor;
    require_config(input_size > 0 && input_size % divisor == 0, msg.str());
}

int64_t ModelConfig::level_channels(int level) const {
    require(level >= 1 && level <= kLevels, "level out of range");
    return base_dim << (level - 1);
}

int64_t ModelConfig::level_size(int level) const {
    require(level >= 1 && level <= kLevels, "level out of range");
    return input_size >> (level + 1);
}

void FeaturePyramid::check_contract(const ModelConfig& cfg) const {
    require(encoder.size() == kLevels && decoder.size() == kLevels,
            "pyramid: expected 4 encoder and 4 decoder features");
    auto check = [&](const torch::Tensor& f, int level, const char* branch) {
        const int64_t c = cfg.level_channels(level);
        const int64_t s = cfg.level_size(level);
        std::ostringstream msg;
        msg << "pyramid: " << branch << " level " << level << " expected [*, " << c << ", " << s
            << ", " << s << "], got " << f.sizes();
        require(f.defined() && f.dim() == 4 && f.size(1) == c && f.size(2) == s && f.size(3) == s,
                msg.str());
    };
    for (int l = 1; l <= kLevels; ++l) {
        check(enc(l), l, "encoder");
        check(dec(l), l, "decoder");
    }
}

PatchEmbedImpl::PatchEmbedImpl(int64_t in_channels, int64_t dim) {
    proj = register_module(
        "proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, dim, kPatchSize)
                                      .stride(kPatchSize)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& image) {
    require(image.dim() == 4, "patch_embed: expected [Bt, C, H, W]");
    std::ostringstream msg;
    msg << "patch_embed: H and W must be divisible by " << kPatchSize << ", got " << image.size(2)
        << "x" << image.size(3);
    require_config(image.size(2) % kPatchSize == 0 && image.size(3) % kPatchSize == 0, msg.str());
    return norm(to_tokens(proj(image)));
}

PatchMergeImpl::PatchMergeImpl(int64_t dim) : dim_(dim) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
    reduction = register_module(
        "reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
}

torch::Tensor PatchMergeImpl::forward(const torch::Tensor& x) {
    require(x.dim() == 4 && x.size(3) == dim_, "patch_merge: expected tokens [Bt, h, w, d]");
    require(x.size(1) % 2 == 0 && x.size(2) % 2 == 0, "patch_merge: spatial dims must be even");
    using torch::indexing::None;
    using torch::indexing::Slice;
    auto x0 = x.index({Slice(), Slice(0, None, 2), Slice(0, None, 2)});
    auto x1 = x.index({Slice(), Slice(1, None, 2), Slice(0, None, 2)});
    auto x2 = x.index({Slice(), Slice(0, None, 2), Slice(1, None, 2)});
    auto x3 = x.index({Slice(), Slice(1, None, 2), Slice(1, None, 2)});
    return reduction(norm(torch::cat({x0, x1, x2, x3}, -1)));
}

PatchExpandImpl::PatchExpandImpl(int64_t dim, int64_t scale, int64_t out_dim)
    : dim_(dim), scale_(scale), out_dim_(out_dim) {
    require(dim >= 1 && scale >= 1 && out_dim >= 1, "patch_expand: invalid sizes");
    expand = register_module(
        "expand",
        torch::nn::Linear(torch::nn::LinearOptions(dim, scale * scale * out_dim).bias(false)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({out_dim})));
}

torch::Tensor PatchExpandImpl::forward(const torch::Tensor& x) {
    require(x.dim() == 4 && x.size(3) == dim_, "patch_expand: expected tokens [Bt, h, w, d]");
    const int64_t b = x.size(0), h = x.size(1), w = x.size(2);
    auto y = expand(x)
                 .view({b, h, w, scale_, scale_, out_dim_})
                 .permute({0, 1, 3, 2, 4, 5})
                 .reshape({b, h * scale_, w * scale_, out_dim_});
    return norm(y);
}

PatchExpand make_patch_expand(int64_t dim) {
    require(dim % 2 == 0, "patch_expand: channel count must be even");
    return PatchExpand(dim, 2, dim / 2);
}

FinalProjectionImpl::FinalProjectionImpl(int64_t dim, int64_t num_classes) {
    up = register_module("up", PatchExpand(dim, kPatchSize, dim));
    head = register_module("head",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, num_classes, 1)));
}

torch::Tensor FinalProjectionImpl::forward(const torch::Tensor& x) {
    return head(to_map(up(x)));
}

namespace {

ssm::VSSBlockOptions block_options(const ModelConfig& cfg, int level) {
    return ssm::VSSBlockOptions(cfg.level_channels(level))
        .state_dim(cfg.state_dim)
        .expand(cfg.expand);
}

}  // namespace

EncoderStageImpl::EncoderStageImpl(const ModelConfig& cfg, int level) {
    for (int64_t i = 0; i < cfg.encoder_depth(level); ++i) {
        blocks.push_back(register_module("block" + std::to_string(i),
                                         ssm::VSSBlock(block_options(cfg, level))));
    }
    if (level < kLevels) {
        merger = register_module("merge", PatchMerge(cfg.level_channels(level)));
    }
}

torch::Tensor EncoderStageImpl::forward(torch::Tensor x) {
    for (auto& block : blocks) x = block->forward(x);
    return x;
}

torch::Tensor EncoderStageImpl::merge(const torch::Tensor& x) {
    require(!merger.is_empty(), "encoder: the deepest stage has no merge");
    return merger(x);
}

DecoderStageImpl::DecoderStageImpl(const ModelConfig& cfg, int level) : skip_mode_(cfg.skip) {
    const int64_t dim = cfg.level_channels(level);
    if (level < kLevels) {
        upsample = register_module("expand", make_patch_expand(cfg.level_channels(level + 1)));
        if (skip_mode_ == SkipMode::concat) {
            skip_reduce = register_module("skip_reduce", torch::nn::Linear(2 * dim, dim));
        }
    }
    for (int64_t i = 0; i < cfg.decoder_depth(level); ++i) {
        blocks.push_back(register_module("block" + std::to_string(i),
                                         ssm::VSSBlock(block_options(cfg, level))));
    }
}

torch::Tensor DecoderStageImpl::forward(const torch::Tensor& deeper, const torch::Tensor& skip) {
    torch::Tensor x;
    if (upsample.is_empty()) {
        x = skip;
    } else {
        auto up = upsample(deeper);
        x = skip_mode_ == SkipMode::add ? up + skip : skip_reduce(torch::cat({up, skip}, -1));
    }
    for (auto& block : blocks) x = block->forward(x);
    return x;
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) {
    for (int l = 1; l <= kLevels; ++l) {
        stages.push_back(register_module("stage" + std::to_string(l), EncoderStage(cfg, l)));
    }
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg) {
    stages.resize(kLevels, nullptr);
    for (int l = kLevels; l >= 1; --l) {
        stages[l - 1] = register_module("stage" + std::to_string(l), DecoderStage(cfg, l));
    }
}

DSVMUNetImpl::DSVMUNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    patch_embed = register_module("patch_embed", PatchEmbed(cfg.in_channels, cfg.base_dim));
    encoder = register_module("encoder", Encoder(cfg));
    decoder = register_module("decoder", Decoder(cfg));
    final_proj = register_module("final_proj", FinalProjection(cfg.base_dim, cfg.num_classes));
}

ForwardOutput DSVMUNetImpl::forward(const torch::Tensor& image) {
    std::ostringstream msg;
    msg << "model_forward: expected [Bt, " << cfg_.in_channels << ", " << cfg_.input_size << ", "
        << cfg_.input_size << "], got " << image.sizes();
    require(image.dim() == 4 && image.size(1) == cfg_.in_channels &&
                image.size(2) == cfg_.input_size && image.size(3) == cfg_.input_size,
            msg.str());

    ForwardOutput out;
    std::vector<torch::Tensor> enc_tokens(kLevels);
    auto x = patch_embed(image);
    for (int l = 1; l <= kLevels; ++l) {
        auto& stage = encoder->stages[l - 1];
        x = stage->forward(x);
        enc_tokens[l - 1] = x;
        if (l < kLevels) x = stage->merge(x);
    }

    std::vector<torch::Tensor> dec_tokens(kLevels);
    torch::Tensor d;
    for (int l = kLevels; l >= 1; --l) {
        d = decoder->stages[l - 1]->forward(d, enc_tokens[l - 1]);
        dec_tokens[l - 1] = d;
    }

    out.logits = final_proj(d);
    for (int l = 1; l <= kLevels; ++l) {
        out.pyramid.encoder.push_back(to_map(enc_tokens[l - 1]));
        out.pyramid.decoder.push_back(to_map(dec_tokens[l - 1]));
    }
    return out;
}

std::string to_string(SkipMode mode) { return mode == SkipMode::add ? "add" : "concat"; }

SkipMode skip_mode_from_string(const std::string& s) {
    if (s == "add") return SkipMode::add;
    if (s == "concat") return SkipMode::concat;
    throw ConfigError("unknown skip mode '" + s + "' (expected add or concat)");
}

}  // namespace dsvm::network
