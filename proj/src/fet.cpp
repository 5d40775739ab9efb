#include "fetnet/fet.hpp"

#include "fetnet/init.hpp"

namespace fetnet {

using ad::Var;

SamParams make_sam_params(int64_t channels, int kernel, Rng& rng) {
    if (channels < 1 || kernel < 1 || kernel % 2 == 0)
        throw ParamError("make_sam_params: need channels >= 1 and an odd kernel");
    const int64_t in = channels + 1;
    const int64_t fan = in * kernel * kernel;
    SamParams p;
    p.w_g = ad::param(he_normal({1, in, kernel, kernel}, fan, rng), "sam.w_g");
    p.b_g = ad::param(Tensor({1}), "sam.b_g");
    p.w_f = ad::param(he_normal({channels, in, kernel, kernel}, fan, rng), "sam.w_f");
    p.b_f = ad::param(Tensor({channels}), "sam.b_f");
    return p;
}

CamParams make_cam_params(int64_t channels, int reduction, Rng& rng) {
    if (reduction < 1 || channels < reduction)
        throw ParamError("make_cam_params: channel count must be >= reduction ratio");
    const int64_t hidden = channels / reduction;
    CamParams p;
    p.w1 = ad::param(he_normal({hidden, channels}, channels, rng), "cam.w1");
    p.b1 = ad::param(Tensor({hidden}), "cam.b1");
    p.w2 = ad::param(he_normal({channels, hidden}, hidden, rng), "cam.w2");
    p.b2 = ad::param(Tensor({channels}), "cam.b2");
    return p;
}

Var fem(const Var& f, const Var& ct) { return ad::mul_map(f, ad::one_minus(ct)); }

Var sam_fill(const Var& f_e, const Var& ct, const SamParams& p) {
    const int pad = static_cast<int>((p.w_g.value().dim(2) - 1) / 2);
    Var x = ad::concat_ch({f_e, ct});
    Var f_g = ad::conv2d(x, p.w_g, p.b_g, 1, pad);
    Var f_d = ad::conv2d(x, p.w_f, p.b_f, 1, pad);
    return ad::mul_map(ad::relu(f_d), ad::sigmoid(f_g));
}

Var ftm_t(const Var& f_e, const Var& attn, const Var& ct) {
    Var f_t = ad::attend(f_e, attn);
    return ad::add(ad::mul_map(f_t, ct), f_e);
}

Var ftm_t_rescaled(const Var& f_e, const Var& attn_src, int up, const Var& ct) {
    Var f_t = ad::attend_rescaled(attn_src, f_e, up);
    return ad::add(ad::mul_map(f_t, ct), f_e);
}

Var cam(const Var& f_e, const CamParams& p) {
    Var g = ad::global_avg_pool(f_e);
    Var h = ad::relu(ad::fc11(g, p.w1, p.b1));
    return ad::sigmoid(ad::fc11(h, p.w2, p.b2));
}

Var ftm_s(const Var& f_s, const Var& gate) { return ad::mul_gate(f_s, gate); }

} // namespace fetnet
