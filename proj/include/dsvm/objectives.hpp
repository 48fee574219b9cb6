#pragma once

#include <torch/torch.h>

namespace dsvm::objectives {

struct LossWeights {
    double lambda1 = 1.0;  // cross-entropy weight
    double lambda2 = 1.0;  // Dice weight
    double alpha = 1.0;    // projection self-distillation weight
    double beta = 0.5;     // progressive self-distillation weight
    double eps_clamp = 1e-7;
    double dice_smooth = 1e-5;

    void validate() const;
};

// Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps].
torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                       const LossWeights& w = {});

// Same quantity from logits, using log-sigmoid for stability (no clamping).
torch::Tensor bce_loss_with_logits(const torch::Tensor& logits, const torch::Tensor& targets);

// Soft Dice: 1 - (2 sum(p t) + s) / (sum p + sum t + s), summed over all elements.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                        const LossWeights& w = {});

// lambda1 * bce + lambda2 * dice.
torch::Tensor bcedice_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                           const LossWeights& w = {});
torch::Tensor bcedice_loss_with_logits(const torch::Tensor& logits, const torch::Tensor& targets,
                                       const LossWeights& w = {});

// Multi-class: logits [Bt, K, H, W], targets [Bt, H, W] (int64 class indices).
torch::Tensor cross_entropy_term(const torch::Tensor& logits, const torch::Tensor& targets);
// Soft Dice coefficient per class over softmax probabilities, shape [K].
torch::Tensor per_class_dice(const torch::Tensor& logits, const torch::Tensor& targets,
                             const LossWeights& w = {});
// lambda1 * CE + lambda2 * (1 - mean_k dice_k), background included.
torch::Tensor cedice_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                          const LossWeights& w = {});

// seg + alpha * proj + beta * prog. Throws ContractError on non-finite input.
torch::Tensor total_loss(const torch::Tensor& seg, const torch::Tensor& proj,
                         const torch::Tensor& prog, const LossWeights& w);
double total_loss(double seg, double proj, double prog, const LossWeights& w);

}  // namespace dsvm::objectives
