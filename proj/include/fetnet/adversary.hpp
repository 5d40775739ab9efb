#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "fetnet/autodiff.hpp"
#include "fetnet/rng.hpp"

namespace fetnet {

struct DiscConfig {
    std::vector<int64_t> widths{8, 16, 32, 32}; // four stride-2 trunk layers
    int kernel = 4; // 1 gives per-cell receptive fields (used by locality tests)

    static DiscConfig toy();
    static DiscConfig full();
};

/// Patch-level realness map plus one mask-focused score per batch element.
struct DiscOutput {
    ad::Var global_scores; // (B,1,H/16,W/16), sigmoid probabilities
    ad::Var local_score;   // (B,1,1,1); exactly 0 when the mask is empty
};

/// Four stride-2 convolutions with LeakyReLU(0.2), a 1x1 sigmoid patch head,
/// and a mask-weighted pooling head over the same trunk features.
class Discriminator {
public:
    Discriminator(DiscConfig cfg, uint64_t seed);

    const DiscConfig& config() const { return cfg_; }

    /// image (B,3,H,W) with H, W divisible by 16; mask (B,1,H,W) in [0,1].
    DiscOutput discriminate(const ad::Var& image, const ad::Var& mask) const;

    std::vector<std::pair<std::string, ad::Var>>& params() { return params_; }
    const std::vector<std::pair<std::string, ad::Var>>& params() const { return params_; }
    int64_t param_count() const;

private:
    ad::Var reg(const std::string& name, Tensor t);

    DiscConfig cfg_;
    std::vector<std::pair<std::string, ad::Var>> params_;
    struct ConvP {
        ad::Var w, b;
    };
    std::array<ConvP, 4> trunk_;
    ConvP patch_head_; // 1x1 conv to 1 channel
    ad::Var local_w_, local_b_; // linear head on pooled features
};

} // namespace fetnet
