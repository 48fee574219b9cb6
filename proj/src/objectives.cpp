#include "dsvm/objectives.hpp"

#include "dsvm/error.hpp"

#include <cmath>
#include <sstream>

namespace dsvm::objectives {

void LossWeights::validate() const {
    for (double v : {lambda1, lambda2, alpha, beta}) {
        require_config(std::isfinite(v), "loss weights must be finite");
    }
    require_config(alpha >= 0 && beta >= 0, "alpha and beta must be non-negative");
    require_config(eps_clamp > 0 && eps_clamp < 0.5, "eps_clamp must lie in (0, 0.5)");
    require_config(dice_smooth > 0, "dice_smooth must be positive");
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* op) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    require(a.sizes() == b.sizes(), msg.str());
}

void check_classes(const torch::Tensor& logits, const torch::Tensor& targets, const char* op) {
    require(logits.dim() == 4, std::string(op) + ": logits must be [Bt, K, H, W]");
    require(logits.size(1) >= 2, std::string(op) + ": needs K >= 2");
    require(targets.dim() == 3 && targets.size(0) == logits.size(0) &&
                targets.size(1) == logits.size(2) && targets.size(2) == logits.size(3),
            std::string(op) + ": targets must be [Bt, H, W]");
    const auto lo = targets.min().item<int64_t>();
    const auto hi = targets.max().item<int64_t>();
    std::ostringstream msg;
    msg << op << ": class index out of range [0, " << logits.size(1) - 1 << "] (found " << lo
        << ".." << hi << ")";
    require(lo >= 0 && hi < logits.size(1), msg.str());
}

}  // namespace

torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                       const LossWeights& w) {
    check_same_shape(probs, targets, "bce_loss");
    auto p = probs.clamp(w.eps_clamp, 1.0 - w.eps_clamp);
    auto y = targets.to(probs.scalar_type());
    return -(y * torch::log(p) + (1 - y) * torch::log(1 - p)).mean();
}

torch::Tensor bce_loss_with_logits(const torch::Tensor& logits, const torch::Tensor& targets) {
    check_same_shape(logits, targets, "bce_loss_with_logits");
    auto y = targets.to(logits.scalar_type());
    // -[y log s(x) + (1-y) log(1-s(x))] = (1-y) x - log s(x)
    return ((1 - y) * logits - torch::log_sigmoid(logits)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                        const LossWeights& w) {
    check_same_shape(probs, targets, "dice_loss");
    auto y = targets.to(probs.scalar_type());
    auto inter = (probs * y).sum();
    return 1 - (2 * inter + w.dice_smooth) / (probs.sum() + y.sum() + w.dice_smooth);
}

torch::Tensor bcedice_loss(const torch::Tensor& probs, const torch::Tensor& targets,
                           const LossWeights& w) {
    return w.lambda1 * bce_loss(probs, targets, w) + w.lambda2 * dice_loss(probs, targets, w);
}

torch::Tensor bcedice_loss_with_logits(const torch::Tensor& logits, const torch::Tensor& targets,
                                       const LossWeights& w) {
    return w.lambda1 * bce_loss_with_logits(logits, targets) +
           w.lambda2 * dice_loss(torch::sigmoid(logits), targets, w);
}

torch::Tensor cross_entropy_term(const torch::Tensor& logits, const torch::Tensor& targets) {
    check_classes(logits, targets, "cross_entropy");
    auto logp = torch::log_softmax(logits, 1);
    return -logp.gather(1, targets.to(torch::kLong).unsqueeze(1)).mean();
}

torch::Tensor per_class_dice(const torch::Tensor& logits, const torch::Tensor& targets,
                             const LossWeights& w) {
    check_classes(logits, targets, "per_class_dice");
    const int64_t k = logits.size(1);
    auto probs = torch::softmax(logits, 1);
    auto onehot = torch::one_hot(targets.to(torch::kLong), k)
                      .permute({0, 3, 1, 2})
                      .to(logits.scalar_type());
    const std::vector<int64_t> reduce{0, 2, 3};
    auto inter = (probs * onehot).sum(reduce);
    return (2 * inter + w.dice_smooth) / (probs.sum(reduce) + onehot.sum(reduce) + w.dice_smooth);
}

torch::Tensor cedice_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                          const LossWeights& w) {
    return w.lambda1 * cross_entropy_term(logits, targets) +
           w.lambda2 * (1 - per_class_dice(logits, targets, w).mean());
}

torch::Tensor total_loss(const torch::Tensor& seg, const torch::Tensor& proj,
                         const torch::Tensor& prog, const LossWeights& w) {
    require(torch::isfinite(seg).all().item<bool>(), "total_loss: non-finite segmentation loss");
    require(torch::isfinite(proj).all().item<bool>(), "total_loss: non-finite projection loss");
    require(torch::isfinite(prog).all().item<bool>(), "total_loss: non-finite progressive loss");
    return seg + w.alpha * proj + w.beta * prog;
}

double total_loss(double seg, double proj, double prog, const LossWeights& w) {
    require(std::isfinite(seg) && std::isfinite(proj) && std::isfinite(prog),
            "total_loss: non-finite input");
    return seg + w.alpha * proj + w.beta * prog;
}

}  // namespace dsvm::objectives
