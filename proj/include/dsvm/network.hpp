#pragma once

#include "dsvm/ssm.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dsvm::network {

inline constexpr int kLevels = 4;
inline constexpr int64_t kPatchSize = 4;

enum class SkipMode { add, concat };

struct ModelConfig {
    int64_t in_channels = 3;
    int64_t num_classes = 1;  // 1 = binary (sigmoid), >= 2 = softmax classes
    int64_t base_dim = 16;
    // Blocks per encoder level, shallowest first.
    std::array<int64_t, kLevels> encoder_depths{2, 2, 2, 2};
    // Blocks per decoder level, deepest first.
    std::array<int64_t, kLevels> decoder_depths{2, 2, 2, 1};
    int64_t state_dim = 16;
    int64_t expand = 2;
    int64_t input_size = 64;
    SkipMode skip = SkipMode::add;

    static ModelConfig desk();
    static ModelConfig paper_scale();

    void validate() const;

    // Channels of level l (1-based): 2^{l-1} C.
    int64_t level_channels(int level) const;
    // Side length of level l: input_size / 2^{l+1}.
    int64_t level_size(int level) const;
    int64_t encoder_depth(int level) const { return encoder_depths.at(level - 1); }
    int64_t decoder_depth(int level) const { return decoder_depths.at(kLevels - level); }
};

// Encoder and decoder features in [Bt, C, H, W] layout, indexed by level - 1.
struct FeaturePyramid {
    std::vector<torch::Tensor> encoder;
    std::vector<torch::Tensor> decoder;

    const torch::Tensor& enc(int level) const { return encoder.at(level - 1); }
    const torch::Tensor& dec(int level) const { return decoder.at(level - 1); }

    int levels() const { return static_cast<int>(encoder.size()); }

    // Throws ContractError unless every feature matches the level shape formula.
    void check_contract(const ModelConfig& cfg) const;
};

struct ForwardOutput {
    torch::Tensor logits;  // [Bt, K, H, W]
    FeaturePyramid pyramid;
};

// Non-overlapping 4x4 patch projection followed by LayerNorm.
// image [Bt, in, H, W] -> tokens [Bt, H/4, W/4, C]
class PatchEmbedImpl : public torch::nn::Module {
public:
    PatchEmbedImpl(int64_t in_channels, int64_t dim);
    torch::Tensor forward(const torch::Tensor& image);

    torch::nn::Conv2d proj{nullptr};
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PatchEmbed);

// 2x2 neighbourhood concat -> LayerNorm -> linear 4d -> 2d.
// tokens [Bt, h, w, d] -> [Bt, h/2, w/2, 2d]
class PatchMergeImpl : public torch::nn::Module {
public:
    explicit PatchMergeImpl(int64_t dim);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear reduction{nullptr};

private:
    int64_t dim_;
};
TORCH_MODULE(PatchMerge);

// Linear d -> scale^2 * out_dim, pixel rearrangement, LayerNorm.
// [Bt, h, w, d] -> [Bt, scale*h, scale*w, out_dim]
class PatchExpandImpl : public torch::nn::Module {
public:
    PatchExpandImpl(int64_t dim, int64_t scale, int64_t out_dim);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear expand{nullptr};
    torch::nn::LayerNorm norm{nullptr};

private:
    int64_t dim_, scale_, out_dim_;
};
TORCH_MODULE(PatchExpand);

// Channel-halving 2x upsampler used between decoder levels.
PatchExpand make_patch_expand(int64_t dim);

// 4x expansion of the shallowest decoder feature followed by a 1x1 map to K
// logit channels. tokens [Bt, H/4, W/4, C] -> logits [Bt, K, H, W]
class FinalProjectionImpl : public torch::nn::Module {
public:
    FinalProjectionImpl(int64_t dim, int64_t num_classes);
    torch::Tensor forward(const torch::Tensor& x);

    PatchExpand up{nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(FinalProjection);

class EncoderStageImpl : public torch::nn::Module {
public:
    EncoderStageImpl(const ModelConfig& cfg, int level);
    // Returns the level feature (tokens); merge() produces the next level's input.
    torch::Tensor forward(torch::Tensor x);
    torch::Tensor merge(const torch::Tensor& x);

    std::vector<ssm::VSSBlock> blocks;
    PatchMerge merger{nullptr};
};
TORCH_MODULE(EncoderStage);

class DecoderStageImpl : public torch::nn::Module {
public:
    DecoderStageImpl(const ModelConfig& cfg, int level);
    // deeper: previous decoder feature (tokens) or undefined at the deepest level.
    torch::Tensor forward(const torch::Tensor& deeper, const torch::Tensor& skip);

    std::vector<ssm::VSSBlock> blocks;
    PatchExpand upsample{nullptr};
    torch::nn::Linear skip_reduce{nullptr};

private:
    SkipMode skip_mode_;
};
TORCH_MODULE(DecoderStage);

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& cfg);
    std::vector<EncoderStage> stages;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& cfg);
    // stages[l - 1] is decoder level l.
    std::vector<DecoderStage> stages;
};
TORCH_MODULE(Decoder);

// U-shaped VSS segmentation network. Parameter names follow
// patch_embed.*, encoder.stage{l}.block{i}.*, decoder.stage{l}.block{i}.*, final_proj.*
class DSVMUNetImpl : public torch::nn::Module {
public:
    explicit DSVMUNetImpl(const ModelConfig& cfg);

    ForwardOutput forward(const torch::Tensor& image);

    const ModelConfig& config() const { return cfg_; }

    PatchEmbed patch_embed{nullptr};
    Encoder encoder{nullptr};
    Decoder decoder{nullptr};
    FinalProjection final_proj{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(DSVMUNet);

// Tokens [Bt, H, W, C] <-> feature maps [Bt, C, H, W].
inline torch::Tensor to_map(const torch::Tensor& tokens) { return tokens.permute({0, 3, 1, 2}); }
inline torch::Tensor to_tokens(const torch::Tensor& map) { return map.permute({0, 2, 3, 1}); }

std::string to_string(SkipMode mode);
SkipMode skip_mode_from_string(const std::string& s);

}  // namespace dsvm::network
