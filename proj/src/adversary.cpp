#include "fetnet/adversary.hpp"

#include "fetnet/init.hpp"

namespace fetnet {

using ad::Var;

DiscConfig DiscConfig::toy() { return DiscConfig{}; }

DiscConfig DiscConfig::full() {
    DiscConfig c;
    c.widths = {64, 128, 256, 256};
    return c;
}

Var Discriminator::reg(const std::string& name, Tensor t) {
    Var v = ad::param(std::move(t), name);
    params_.emplace_back(name, v);
    return v;
}

Discriminator::Discriminator(DiscConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.widths.size() != 4) throw ParamError("Discriminator: widths must list 4 layers");
    for (int64_t w : cfg_.widths)
        if (w < 1) throw ParamError("Discriminator: widths must be positive");
    const int k = cfg_.kernel;
    if (k < 1 || (k != 4 && k % 2 == 0))
        throw ParamError("Discriminator: kernel must be odd or 4");

    Rng rng = Rng::seeded(seed);
    int64_t in = 3;
    for (int i = 0; i < 4; ++i) {
        const int64_t out = cfg_.widths[static_cast<size_t>(i)];
        const std::string base = "disc" + std::to_string(i + 1);
        trunk_[static_cast<size_t>(i)].w =
            reg(base + ".w", he_normal({out, in, k, k}, in * k * k, rng));
        trunk_[static_cast<size_t>(i)].b = reg(base + ".b", Tensor({out}));
        in = out;
    }
    patch_head_.w = reg("patch.w", head_normal({1, in, 1, 1}, in, rng));
    patch_head_.b = reg("patch.b", Tensor({1}));
    local_w_ = reg("local.w", head_normal({1, in}, in, rng));
    local_b_ = reg("local.b", Tensor({1}));
}

int64_t Discriminator::param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

DiscOutput Discriminator::discriminate(const Var& image, const Var& mask) const {
    const Tensor& iv = image.value();
    const Tensor& mv = mask.value();
    if (iv.rank() != 4 || iv.dim(1) != 3)
        throw ShapeError("discriminate: image must be (B,3,H,W), got " + iv.shape_str());
    if (iv.dim(2) % 16 != 0 || iv.dim(3) % 16 != 0)
        throw ShapeError("discriminate: H and W must be divisible by 16");
    if (mv.rank() != 4 || mv.dim(0) != iv.dim(0) || mv.dim(1) != 1 || mv.dim(2) != iv.dim(2) ||
        mv.dim(3) != iv.dim(3))
        throw ShapeError("discriminate: mask must be (B,1,H,W) matching the image, got " +
                         mv.shape_str());

    const int k = cfg_.kernel;
    const int pad = k == 4 ? 1 : (k - 1) / 2;
    Var x = image;
    for (const ConvP& layer : trunk_)
        x = ad::leaky_relu(ad::conv2d(x, layer.w, layer.b, 2, pad), 0.2);

    DiscOutput out;
    out.global_scores = ad::sigmoid(ad::conv2d(x, patch_head_.w, patch_head_.b, 1, 0));

    // mask at trunk resolution; batch elements with no masked cells score 0
    Var md = ad::blockmean(mask, 16);
    Var pooled = ad::masked_gap(x, md);
    Var score = ad::sigmoid(ad::fc11(pooled, local_w_, local_b_));
    const Tensor& mdv = md.value();
    const int64_t B = mdv.dim(0), HW = mdv.dim(2) * mdv.dim(3);
    Tensor presence({B, 1, 1, 1});
    for (int64_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (int64_t i = 0; i < HW; ++i) s += mdv[b * HW + i];
        presence[b] = s > 0.0 ? 1.0 : 0.0;
    }
    out.local_score = ad::mul(score, ad::constant(std::move(presence)));
    return out;
}

} // namespace fetnet
