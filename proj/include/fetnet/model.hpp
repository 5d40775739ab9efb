#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "fetnet/autodiff.hpp"
#include "fetnet/fet.hpp"
#include "fetnet/rng.hpp"

namespace fetnet {

/// Skip-connection treatment per encoder layer.
enum class FetKind { none, texture, structure };

std::string to_string(FetKind k);
FetKind fet_kind_from_string(const std::string& s);

struct GeneratorConfig {
    std::vector<int64_t> enc_widths{8, 16, 32, 64, 64};
    std::vector<int64_t> dec_widths{64, 48, 32, 16, 8};
    int64_t aggregate_width = 32; // texture aggregate channels (split 3 ways)
    int se_reduction = 4;
    std::array<FetKind, 5> fet{FetKind::texture, FetKind::texture, FetKind::texture,
                               FetKind::structure, FetKind::structure};
    bool use_fem = true;        // erase features with (1 - C_t) before the FET blocks
    bool use_ftm = true;        // apply the transfer step (attention / channel gate)
    bool use_similarity = true; // cosine-similarity attention vs. plain background weights
    bool hard_mask = false;     // threshold C_t to binary (gradient blocked) for FET use
    bool masked_attention = false; // restrict softmax support to background keys
    int64_t max_attention_positions = 4096;

    static GeneratorConfig toy();
    static GeneratorConfig full();
};

std::string config_to_json(const GeneratorConfig& c);
GeneratorConfig config_from_json(const std::string& s);

/// Five encoder feature maps at scales 1, 1/2, 1/4, 1/8, 1/16.
struct FeaturePyramid {
    std::vector<ad::Var> levels;
};

/// Optional capture of intermediate values during forward().
struct ForwardTrace {
    struct LayerIo {
        int layer = 0; // 1-based encoder layer
        Tensor in, out;
    };
    std::vector<LayerIo> fem_io;                 // erase input/output per FET layer
    std::vector<std::pair<int, Tensor>> skips;   // final skip features per layer
    Tensor attention;                            // native background attention
    Tensor ct;                                   // confidence map
};

class Generator {
public:
    Generator(GeneratorConfig cfg, uint64_t seed);

    const GeneratorConfig& config() const { return cfg_; }

    /// Residual encoder; image (B,3,H,W) with H, W divisible by 16.
    FeaturePyramid encode(const ad::Var& image) const;

    /// U-Net branch over levels 3-5 -> text confidence map (B,1,H/4,W/4).
    ad::Var segment(const FeaturePyramid& pyr) const;

    struct Out {
        ad::Var image; // I_o, (B,3,H,W) in [0,1]
        ad::Var ct;    // (B,1,H/4,W/4)
    };
    Out forward(const ad::Var& image, ForwardTrace* trace = nullptr) const;

    std::vector<std::pair<std::string, ad::Var>>& params() { return params_; }
    const std::vector<std::pair<std::string, ad::Var>>& params() const { return params_; }
    int64_t param_count() const;

private:
    struct ConvP {
        ad::Var w, b;
        int stride = 1, pad = 0;
    };

    ad::Var reg(const std::string& name, Tensor t);
    ConvP make_conv(const std::string& name, int64_t in, int64_t out, int k, int stride, Rng& rng,
                    bool head = false);
    ConvP make_deconv(const std::string& name, int64_t in, int64_t out, int k, int stride,
                      Rng& rng);

    ad::Var conv(const ad::Var& x, const ConvP& p) const;
    ad::Var deconv(const ad::Var& x, const ConvP& p) const;

    GeneratorConfig cfg_;
    std::vector<std::pair<std::string, ad::Var>> params_;

    // encoder: residual block per layer (strided conv, 3x3 conv, projection)
    struct EncLayer {
        ConvP c1, c2, proj;
    };
    std::array<EncLayer, 5> enc_;

    // segmentation branch
    ConvP seg_up1_, seg_fuse1_, seg_up2_, seg_fuse2_, seg_up3_, seg_head_;

    // texture aggregate (three 1x1 transforms) + gated fill
    bool has_texture_ = false;
    ConvP agg_[3];
    SamParams sam_;

    // channel gates for structure layers (index by layer)
    std::array<CamParams, 5> cam_;
    std::array<bool, 5> has_cam_{};

    // decoder
    ConvP dec_in_;                 // initial fuse at 1/16
    std::array<ConvP, 4> dec_up_;  // 1/16->1/8->1/4->1/2->1
    std::array<ConvP, 4> dec_fuse_; // after concat with skips 4,3,2,1
    ConvP out_head_;
};

/// Binary output mask: C_t upsampled bilinearly to (out_h, out_w), then
/// entries > theta. theta must lie in (0,1).
Tensor threshold_mask(const Tensor& ct, int64_t out_h, int64_t out_w, double theta = 0.5);

} // namespace fetnet
