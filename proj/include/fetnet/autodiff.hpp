#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fetnet/tensor.hpp"

namespace fetnet::ad {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad; // allocated on first accumulation
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // reads this->grad, accumulates into parents
    uint64_t seq = 0;

    Tensor& grad_buffer() {
        if (!grad.defined()) grad = Tensor(value.shape());
        return grad;
    }
};

} // namespace detail

/// Handle to a node in the computation tape. Cheap to copy.
class Var {
public:
    Var() = default;
    explicit Var(Tensor v, bool requires_grad = false, std::string name = {});

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.defined(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    void clear_grad() {
        if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
    }

    std::shared_ptr<detail::Node> node_;
};

/// Leaf with gradient tracking (trainable parameter).
Var param(Tensor v, std::string name = {});
/// Leaf without gradient tracking.
Var constant(Tensor v);

/// Reverse pass from a scalar loss (numel == 1). Seeds d(loss)/d(loss) = 1.
void backward(const Var& loss);

/// Convenience scalar read; loss must have numel == 1.
double item(const Var& v);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double k);
Var add_scalar(const Var& x, double k);
Var one_minus(const Var& x); // 1 - x
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var square(const Var& x);
Var log_clamped(const Var& x, double eps); // log(max(x, eps)); zero grad below eps

/// Detaches from the tape: value copied, no gradient flows back.
Var stopgrad(const Var& x);
/// Hard binary threshold (x > theta ? 1 : 0); non-differentiable, no grad.
Var hard_threshold(const Var& x, double theta);

// ---- broadcast products over NCHW ----
Var mul_map(const Var& x, const Var& m);   // m: (B,1,H,W)
Var mul_gate(const Var& x, const Var& g);  // g: (B,C,1,1)
Var add_bias(const Var& x, const Var& b);  // b: (C)

// ---- structure ----
Var concat_ch(const std::vector<Var>& xs); // along channel axis

// ---- convolution / resampling ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);
Var upsample_nearest(const Var& x, int factor);
Var blockmean(const Var& x, int factor); // average pool, kernel == stride == factor
Var global_avg_pool(const Var& x);       // (B,C,1,1)

/// Weighted average pool: out[b,c] = sum_hw(x*m) / sum_hw(m), per batch.
/// A batch element whose weights sum to zero yields exact zeros (no grad).
Var masked_gap(const Var& x, const Var& m); // x (B,C,H,W), m (B,1,H,W) -> (B,C,1,1)
Var fc11(const Var& x, const Var& w, const Var& b); // x (B,C,1,1), w (O,C), b (O)

// ---- attention ----
/// Pairwise cosine similarity of per-position feature vectors.
/// x: (B,C,H,W) -> (B,N,N), N = H*W, position index = y*W + x.
Var cosine_similarity_map(const Var& x, double eps);

/// Masks similarities by background concurrency and normalizes per query.
/// s: (B,N,N), ct: (B,1,H,W) flattened to N. Output (B,N,H,W): channel q is
/// the key-position distribution of query q. masked=true restricts the
/// softmax support to keys with ct < 1 (uniform fallback when none remain).
Var background_attention(const Var& s, const Var& ct, bool masked = false);

/// Attention that ignores feature similarity: weight of key k is
/// (1-ct_k) / sum_k (1-ct_k), uniform when the background is empty.
Var uniform_background_attention(const Var& ct);

/// Weighted sum of per-position features: out(:,q) = sum_k attn(q,k) f(:,k).
Var attend(const Var& f, const Var& attn);

/// Nearest-neighbor rescale of an attention tensor on both the query and key
/// axes, renormalizing every query slice to sum 1 (uniform when a slice sums
/// to zero).
Var rescale_attention(const Var& attn, int64_t out_h, int64_t out_w);

/// Fused equivalent of rescale_attention (integer upscale) followed by
/// attend() on features at the target resolution. Avoids materializing the
/// upscaled attention tensor.
Var attend_rescaled(const Var& attn_src, const Var& f, int up);

// ---- reductions ----
Var sum(const Var& x);     // -> {1}
Var mean(const Var& x);    // -> {1}
Var l1_mean(const Var& x); // mean |x| -> {1}

/// Gram matrix of an activation map, normalized by C*H*W. (B,C,H,W)->(B,C,C).
Var gram(const Var& x);

// ---- scalar graph arithmetic (operands are {1} tensors) ----
Var s_add(const Var& a, const Var& b);
Var s_sub(const Var& a, const Var& b);
Var s_mul(const Var& a, const Var& b);
Var s_div(const Var& a, const Var& b);

} // namespace fetnet::ad
