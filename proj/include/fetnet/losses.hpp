#pragma once

#include <string>
#include <vector>

#include "fetnet/adversary.hpp"
#include "fetnet/autodiff.hpp"
#include "fetnet/rng.hpp"

namespace fetnet {

/// Blend weights for the total objective: text-region emphasis inside the
/// reconstruction term, then style / perceptual / segmentation / adversarial.
struct LossWeights {
    double lambda_t = 5.0;
    double lambda_s = 60.0;
    double lambda_p = 0.05;
    double lambda_m = 1.5;
    double lambda_g = 0.05;
};

/// Frozen activation stack for the perceptual and style terms. The default
/// stack is a fixed-seed 3-stage random convolution pyramid (stride 2, ReLU);
/// an identity single-stage extractor is available for oracle tests.
class FeatureExtractor {
public:
    explicit FeatureExtractor(uint64_t seed = 17, std::vector<int64_t> widths = {8, 12, 16});
    static FeatureExtractor identity();

    /// Activation maps per stage; gradients flow to the image, the filters
    /// themselves are constants.
    std::vector<ad::Var> operator()(const ad::Var& image) const;
    size_t stage_count() const { return identity_ ? 1 : stages_.size(); }

private:
    struct IdentityTag {};
    explicit FeatureExtractor(IdentityTag) : identity_(true) {}
    bool identity_ = false;
    struct Stage {
        ad::Var w, b;
    };
    std::vector<Stage> stages_;
};

/// Background L1 + lambda_t * text-region L1, both mean-normalized over the
/// full element count. mask is (B,1,H,W).
ad::Var reconstruction_loss(const ad::Var& out, const ad::Var& gt, const ad::Var& mask,
                            double lambda_t = 5.0);

/// Paste the model output into the input's background: in*(1-m) + out*m.
ad::Var compose(const ad::Var& in, const ad::Var& out, const ad::Var& mask);

/// Sum of per-stage mean absolute feature differences, for the output and the
/// composed image against the target.
ad::Var perceptual_loss(const ad::Var& out, const ad::Var& composed, const ad::Var& gt,
                        const FeatureExtractor& fx);

/// Same structure over Gram matrices of the stage activations.
ad::Var style_loss(const ad::Var& out, const ad::Var& composed, const ad::Var& gt,
                   const FeatureExtractor& fx);

/// 1 - 2*sum(a*b) / (sum(a^2) + sum(b^2)); exactly 0 when both maps are all
/// zero.
ad::Var dice_loss(const ad::Var& pred, const ad::Var& target);

/// -E[log D(fake)], patch scores and local score weighted equally.
ad::Var adversarial_g_loss(const DiscOutput& fake);

/// E[log D(real)] + E[log(1 - D(fake))]; <= 0, maximal (0) at perfect
/// discrimination. The training loop ascends this value.
ad::Var adversarial_d_loss(const DiscOutput& real, const DiscOutput& fake);

/// rec + lambda_s*style + lambda_p*perc + lambda_m*seg + lambda_g*adv.
/// A non-finite component raises TrainError naming the component.
ad::Var total_loss(const ad::Var& rec, const ad::Var& style, const ad::Var& perc,
                   const ad::Var& seg, const ad::Var& adv, const LossWeights& w);

} // namespace fetnet
