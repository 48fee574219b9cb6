#pragma once

#include "dsvm/network.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace dsvm::distill {

enum class SpatialMode { learned_linear, interpolation };

// Which decoder levels act as projection students.
//   shallow_teacher: f^d_2 .. f^d_M (the teacher f^d_1 never distills against itself)
//   literal:         f^d_1 .. f^d_{M-1}
enum class DecoderIndexing { shallow_teacher, literal };

// The loss weights alpha/beta live in objectives::LossWeights.
struct DistillConfig {
    bool teacher_detach = true;
    SpatialMode proj_spatial_mode = SpatialMode::learned_linear;
    DecoderIndexing decoder_indexing = DecoderIndexing::shallow_teacher;

    // Decoder levels whose projections are compared to f^d_1.
    std::vector<int> decoder_student_levels() const;
};

// Maps a level-l feature [Bt, 2^{l-1}C, h_l, w_l] onto the shallowest decoder
// shape [Bt, C, H/4, W/4]: a bias-free linear map over the flattened spatial
// axis (shared across channels), then a 1x1 Conv1d over channels.
class ProjectionHeadImpl : public torch::nn::Module {
public:
    ProjectionHeadImpl(const network::ModelConfig& cfg, int level, SpatialMode mode);
    torch::Tensor forward(const torch::Tensor& f);

    int level() const { return level_; }

    torch::nn::Linear spatial{nullptr};  // empty at level 1 and in interpolation mode
    torch::nn::Conv1d channel{nullptr};

private:
    int level_;
    int64_t in_channels_, in_size_, out_channels_, out_size_;
    SpatialMode mode_;
};
TORCH_MODULE(ProjectionHead);

// Brings a level-l feature to the level-(l-1) shape: 1x1 Conv2d halving the
// channels, then 2x bilinear upsampling.
class AlignHeadImpl : public torch::nn::Module {
public:
    AlignHeadImpl(const network::ModelConfig& cfg, int level);
    torch::Tensor forward(const torch::Tensor& f_deep);

    int level() const { return level_; }

    torch::nn::Conv2d channel{nullptr};

private:
    int level_;
    int64_t in_channels_, in_size_;
};
TORCH_MODULE(AlignHead);

// Training-only heads. Parameter names:
//   proj.encoder.level{l}.*, proj.decoder.level{l}.*,
//   prog.encoder.pair{l}.*,  prog.decoder.pair{l}.*   (pair l aligns level l onto l-1)
class DistillHeadsImpl : public torch::nn::Module {
public:
    DistillHeadsImpl(const network::ModelConfig& cfg, const DistillConfig& dcfg);

    ProjectionHead& proj_encoder(int level);
    ProjectionHead& proj_decoder(int level);
    AlignHead& prog_encoder(int level);
    AlignHead& prog_decoder(int level);

    const DistillConfig& config() const { return dcfg_; }

private:
    DistillConfig dcfg_;
    std::vector<ProjectionHead> proj_enc_, proj_dec_;  // indexed by level - 1
    std::vector<AlignHead> prog_enc_, prog_dec_;       // indexed by level - 1 (0 unused)
};
TORCH_MODULE(DistillHeads);

struct LossTerm {
    std::string name;
    torch::Tensor value;
};

struct DistillLoss {
    torch::Tensor total;
    std::vector<LossTerm> terms;
};

// Mean squared difference over all elements. Gradient reaches the teacher
// only if the caller passes it undetached.
torch::Tensor mse_distill(const torch::Tensor& student, const torch::Tensor& teacher);

torch::Tensor project_feature(const torch::Tensor& f, int level, ProjectionHead& head);
torch::Tensor align_adjacent(const torch::Tensor& f_deep, AlignHead& head);

// Every encoder level and the configured decoder levels, projected and compared
// against the raw shallowest decoder feature f^d_1.
DistillLoss projection_loss(const network::FeaturePyramid& pyramid, DistillHeads& heads);

// Adjacent-level terms, l = 2..M:
//   encoder: student f^e_{l-1}, teacher align(f^e_l)
//   decoder: student align(f^d_l), teacher f^d_{l-1}
DistillLoss progressive_loss(const network::FeaturePyramid& pyramid, DistillHeads& heads);

std::string to_string(SpatialMode mode);
SpatialMode spatial_mode_from_string(const std::string& s);
std::string to_string(DecoderIndexing mode);
DecoderIndexing decoder_indexing_from_string(const std::string& s);

}  // namespace dsvm::distill
