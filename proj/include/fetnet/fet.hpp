#pragma once

#include "fetnet/autodiff.hpp"
#include "fetnet/rng.hpp"

namespace fetnet {

/// Gated fill block: one gating filter (to 1 channel) and one feature filter
/// (to the input width), both applied to [f_e, C_t].
struct SamParams {
    ad::Var w_g, b_g; // (1, C+1, k, k)
    ad::Var w_f, b_f; // (C, C+1, k, k)
};

/// Squeeze-excitation pair; hidden width = channels / reduction.
struct CamParams {
    ad::Var w1, b1; // (C/r, C)
    ad::Var w2, b2; // (C, C/r)
};

SamParams make_sam_params(int64_t channels, int kernel, Rng& rng);
CamParams make_cam_params(int64_t channels, int reduction, Rng& rng);

/// Text erasing: f_e = (1 - C_t) ⊙ f, broadcast over channels.
/// ct must be (B,1,H,W) at f's resolution.
ad::Var fem(const ad::Var& f, const ad::Var& ct);

/// Coarse fill: ReLU(W_f ∗ [f_e, C_t]) ⊙ σ(W_g ∗ [f_e, C_t]).
/// Used only to build the attention; the transfer itself moves f_e.
ad::Var sam_fill(const ad::Var& f_e, const ad::Var& ct, const SamParams& p);

/// Texture transfer at the attention's native resolution:
/// f_t(q) = Σ_k attn(q,k) f_e(k), then C_t ⊙ f_t + f_e.
ad::Var ftm_t(const ad::Var& f_e, const ad::Var& attn, const ad::Var& ct);

/// Texture transfer for a layer `up`x finer than the attention grid; uses the
/// fused rescale+attend path so the upscaled attention tensor is never
/// materialized.
ad::Var ftm_t_rescaled(const ad::Var& f_e, const ad::Var& attn_src, int up, const ad::Var& ct);

/// Channel gate S_c = σ(FC2(ReLU(FC1(GAP(f_e))))), shape (B,C,1,1).
ad::Var cam(const ad::Var& f_e, const CamParams& p);

/// Structure transfer: S_c ⊙ f_s. Multiplies the original (un-erased) f_s.
ad::Var ftm_s(const ad::Var& f_s, const ad::Var& gate);

} // namespace fetnet
