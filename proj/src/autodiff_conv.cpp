#include "fetnet/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace fetnet::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

Var wrap(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
}

// Gathers kernel-window patches of src (C,H,W) into col, shape
// (C*KH*KW) x (GH*GW) row-major. Grid cell (gy,gx) reads
// src[c, gy*s - p + ky, gx*s - p + kx], zero outside the image.
void im2col(const double* src, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW, int64_t s,
            int64_t p, int64_t GH, int64_t GW, double* col) {
    const int64_t M = GH * GW;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < KH; ++ky)
            for (int64_t kx = 0; kx < KW; ++kx) {
                double* row = col + ((c * KH + ky) * KW + kx) * M;
                const double* plane = src + c * H * W;
                for (int64_t gy = 0; gy < GH; ++gy) {
                    const int64_t iy = gy * s - p + ky;
                    double* out = row + gy * GW;
                    if (iy < 0 || iy >= H) {
                        std::fill(out, out + GW, 0.0);
                        continue;
                    }
                    const double* in = plane + iy * W;
                    for (int64_t gx = 0; gx < GW; ++gx) {
                        const int64_t ix = gx * s - p + kx;
                        out[gx] = (ix >= 0 && ix < W) ? in[ix] : 0.0;
                    }
                }
            }
}

// Scatter-add inverse of im2col: dst[c, gy*s-p+ky, gx*s-p+kx] += col[...].
void col2im_add(const double* col, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW,
                int64_t s, int64_t p, int64_t GH, int64_t GW, double* dst) {
    const int64_t M = GH * GW;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < KH; ++ky)
            for (int64_t kx = 0; kx < KW; ++kx) {
                const double* row = col + ((c * KH + ky) * KW + kx) * M;
                double* plane = dst + c * H * W;
                for (int64_t gy = 0; gy < GH; ++gy) {
                    const int64_t iy = gy * s - p + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* in = row + gy * GW;
                    double* out = plane + iy * W;
                    for (int64_t gx = 0; gx < GW; ++gx) {
                        const int64_t ix = gx * s - p + kx;
                        if (ix >= 0 && ix < W) out[ix] += in[gx];
                    }
                }
            }
}

std::vector<double>& scratch(size_t n) {
    static std::vector<double> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4)
        throw ShapeError("conv2d: x and w must be rank 4");
    if (stride < 1 || pad < 0) throw ParamError("conv2d: stride must be >= 1, pad >= 0");
    const int64_t B = xv.dim(0), IC = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t OC = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    if (wv.dim(1) != IC)
        throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                         " input channels, x has " + std::to_string(IC));
    const bool has_bias = b.defined();
    if (has_bias && (b.value().rank() != 1 || b.value().dim(0) != OC))
        throw ShapeError("conv2d: bias must be (out_channels)");
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    if (H + 2 * pad < KH || W + 2 * pad < KW)
        throw ShapeError("conv2d: kernel larger than padded input");

    const int64_t K = IC * KH * KW, M = OH * OW;
    Tensor out({B, OC, OH, OW});
    {
        std::vector<double>& col = scratch(static_cast<size_t>(K * M));
        CMapRM Wmat(wv.data(), OC, K);
        for (int64_t bi = 0; bi < B; ++bi) {
            im2col(xv.data() + bi * IC * H * W, IC, H, W, KH, KW, stride, pad, OH, OW, col.data());
            CMapRM Col(col.data(), K, M);
            MapRM Y(out.data() + bi * OC * M, OC, M);
            Y.noalias() = Wmat * Col;
        }
        if (has_bias) {
            const Tensor& bv = b.value();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    double* p = out.data() + (bi * OC + oc) * M;
                    const double bb = bv[oc];
                    for (int64_t i = 0; i < M; ++i) p[i] += bb;
                }
        }
    }

    std::vector<NodePtr> parents{x.node_, w.node_};
    if (has_bias) parents.push_back(b.node_);
    auto geom = [=](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xval = nd.parents[0]->value;
        const Tensor& wval = nd.parents[1]->value;
        CMapRM Wmat(wval.data(), OC, K);
        const bool need_x = nd.parents[0]->requires_grad;
        const bool need_w = nd.parents[1]->requires_grad;
        Tensor* xg = need_x ? &nd.parents[0]->grad_buffer() : nullptr;
        Tensor* wg = need_w ? &nd.parents[1]->grad_buffer() : nullptr;
        std::vector<double>& col = scratch(static_cast<size_t>(2 * K * M));
        double* colbuf = col.data();
        double* dcolbuf = col.data() + K * M;
        for (int64_t bi = 0; bi < B; ++bi) {
            CMapRM dY(g.data() + bi * OC * M, OC, M);
            if (need_w) {
                im2col(xval.data() + bi * IC * H * W, IC, H, W, KH, KW, stride, pad, OH, OW,
                       colbuf);
                CMapRM Col(colbuf, K, M);
                MapRM dW(wg->data(), OC, K);
                dW.noalias() += dY * Col.transpose();
            }
            if (need_x) {
                MapRM dCol(dcolbuf, K, M);
                dCol.noalias() = Wmat.transpose() * dY;
                col2im_add(dcolbuf, IC, H, W, KH, KW, stride, pad, OH, OW,
                           xg->data() + bi * IC * H * W);
            }
        }
        if (has_bias && nd.parents[2]->requires_grad) {
            Tensor& bg = nd.parents[2]->grad_buffer();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    const double* p = g.data() + (bi * OC + oc) * M;
                    double acc = 0.0;
                    for (int64_t i = 0; i < M; ++i) acc += p[i];
                    bg[oc] += acc;
                }
        }
    };
    return wrap(make_node(std::move(out), std::move(parents), std::move(geom)));
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4)
        throw ShapeError("conv_transpose2d: x and w must be rank 4");
    if (stride < 1 || pad < 0) throw ParamError("conv_transpose2d: stride must be >= 1, pad >= 0");
    const int64_t B = xv.dim(0), IC = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int64_t OC = wv.dim(1), KH = wv.dim(2), KW = wv.dim(3);
    if (wv.dim(0) != IC)
        throw ShapeError("conv_transpose2d: weight expects " + std::to_string(wv.dim(0)) +
                         " input channels, x has " + std::to_string(IC));
    const bool has_bias = b.defined();
    if (has_bias && (b.value().rank() != 1 || b.value().dim(0) != OC))
        throw ShapeError("conv_transpose2d: bias must be (out_channels)");
    const int64_t OH = (h - 1) * stride - 2 * pad + KH;
    const int64_t OW = (wd - 1) * stride - 2 * pad + KW;
    if (OH < 1 || OW < 1) throw ShapeError("conv_transpose2d: output would be empty");

    const int64_t K = OC * KH * KW, M = h * wd;
    Tensor out({B, OC, OH, OW});
    {
        std::vector<double>& col = scratch(static_cast<size_t>(K * M));
        CMapRM Wmat(wv.data(), IC, K); // (IC, OC*KH*KW)
        for (int64_t bi = 0; bi < B; ++bi) {
            CMapRM X(xv.data() + bi * IC * M, IC, M);
            MapRM Col(col.data(), K, M);
            Col.noalias() = Wmat.transpose() * X;
            col2im_add(col.data(), OC, OH, OW, KH, KW, stride, pad, h, wd,
                       out.data() + bi * OC * OH * OW);
        }
        if (has_bias) {
            const Tensor& bv = b.value();
            const int64_t OM = OH * OW;
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    double* p = out.data() + (bi * OC + oc) * OM;
                    const double bb = bv[oc];
                    for (int64_t i = 0; i < OM; ++i) p[i] += bb;
                }
        }
    }

    std::vector<NodePtr> parents{x.node_, w.node_};
    if (has_bias) parents.push_back(b.node_);
    auto back = [=](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xval = nd.parents[0]->value;
        const Tensor& wval = nd.parents[1]->value;
        CMapRM Wmat(wval.data(), IC, K);
        const bool need_x = nd.parents[0]->requires_grad;
        const bool need_w = nd.parents[1]->requires_grad;
        Tensor* xg = need_x ? &nd.parents[0]->grad_buffer() : nullptr;
        Tensor* wg = need_w ? &nd.parents[1]->grad_buffer() : nullptr;
        std::vector<double>& col = scratch(static_cast<size_t>(K * M));
        const int64_t OM = OH * OW;
        for (int64_t bi = 0; bi < B; ++bi) {
            // dY gathered on x's grid plays the role of im2col output.
            im2col(g.data() + bi * OC * OM, OC, OH, OW, KH, KW, stride, pad, h, wd, col.data());
            CMapRM dYcol(col.data(), K, M);
            if (need_x) {
                MapRM dX(xg->data() + bi * IC * M, IC, M);
                dX.noalias() += Wmat * dYcol;
            }
            if (need_w) {
                CMapRM X(xval.data() + bi * IC * M, IC, M);
                MapRM dW(wg->data(), IC, K);
                dW.noalias() += X * dYcol.transpose();
            }
        }
        if (has_bias && nd.parents[2]->requires_grad) {
            Tensor& bg = nd.parents[2]->grad_buffer();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    const double* p = g.data() + (bi * OC + oc) * OM;
                    double acc = 0.0;
                    for (int64_t i = 0; i < OM; ++i) acc += p[i];
                    bg[oc] += acc;
                }
        }
    };
    return wrap(make_node(std::move(out), std::move(parents), std::move(back)));
}

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("resize_bilinear: expects rank 4");
    if (out_h < 1 || out_w < 1) throw ParamError("resize_bilinear: output dims must be >= 1");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H == out_h && W == out_w) {
        // identity resize still creates a node so gradients flow
        Tensor out = xv;
        return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
            Tensor& pg = nd.parents[0]->grad_buffer();
            for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
        }));
    }

    // half-pixel-center sampling
    struct Tap {
        int64_t i0, i1;
        double w1; // weight of i1; i0 gets 1-w1
    };
    auto make_taps = [](int64_t in, int64_t out) {
        std::vector<Tap> taps(static_cast<size_t>(out));
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (int64_t o = 0; o < out; ++o) {
            double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
            if (s < 0.0) s = 0.0;
            int64_t i0 = static_cast<int64_t>(s);
            if (i0 > in - 1) i0 = in - 1;
            int64_t i1 = std::min(i0 + 1, in - 1);
            taps[static_cast<size_t>(o)] = {i0, i1, s - static_cast<double>(i0)};
        }
        return taps;
    };
    auto ty = make_taps(H, out_h);
    auto tx = make_taps(W, out_w);

    Tensor out({B, C, out_h, out_w});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* in = xv.data() + (b * C + c) * H * W;
            double* op = out.data() + (b * C + c) * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const Tap& yt = ty[static_cast<size_t>(oy)];
                const double* r0 = in + yt.i0 * W;
                const double* r1 = in + yt.i1 * W;
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const Tap& xt = tx[static_cast<size_t>(ox)];
                    const double top = r0[xt.i0] * (1.0 - xt.w1) + r0[xt.i1] * xt.w1;
                    const double bot = r1[xt.i0] * (1.0 - xt.w1) + r1[xt.i1] * xt.w1;
                    op[oy * out_w + ox] = top * (1.0 - yt.w1) + bot * yt.w1;
                }
            }
        }
    return wrap(make_node(std::move(out), {x.node_}, [B, C, H, W, out_h, out_w, ty, tx](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double* in = pg.data() + (b * C + c) * H * W;
                const double* gp = g.data() + (b * C + c) * out_h * out_w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const Tap& yt = ty[static_cast<size_t>(oy)];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const Tap& xt = tx[static_cast<size_t>(ox)];
                        const double gv = gp[oy * out_w + ox];
                        in[yt.i0 * W + xt.i0] += gv * (1.0 - yt.w1) * (1.0 - xt.w1);
                        in[yt.i0 * W + xt.i1] += gv * (1.0 - yt.w1) * xt.w1;
                        in[yt.i1 * W + xt.i0] += gv * yt.w1 * (1.0 - xt.w1);
                        in[yt.i1 * W + xt.i1] += gv * yt.w1 * xt.w1;
                    }
                }
            }
    }));
}

Var upsample_nearest(const Var& x, int factor) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("upsample_nearest: expects rank 4");
    if (factor < 1) throw ParamError("upsample_nearest: factor must be >= 1");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t OH = H * factor, OW = W * factor;
    Tensor out({B, C, OH, OW});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* in = xv.data() + bc * H * W;
        double* op = out.data() + bc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
            const double* row = in + (oy / factor) * W;
            double* orow = op + oy * OW;
            for (int64_t ox = 0; ox < OW; ++ox) orow[ox] = row[ox / factor];
        }
    }
    return wrap(make_node(std::move(out), {x.node_}, [B, C, H, W, factor](Node& nd) {
        const int64_t OH = H * factor, OW = W * factor;
        const Tensor& g = nd.grad;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            double* in = pg.data() + bc * H * W;
            const double* gp = g.data() + bc * OH * OW;
            for (int64_t oy = 0; oy < OH; ++oy) {
                double* row = in + (oy / factor) * W;
                const double* grow = gp + oy * OW;
                for (int64_t ox = 0; ox < OW; ++ox) row[ox / factor] += grow[ox];
            }
        }
    }));
}

Var blockmean(const Var& x, int factor) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("blockmean: expects rank 4");
    if (factor < 1) throw ParamError("blockmean: factor must be >= 1");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % factor != 0 || W % factor != 0)
        throw ShapeError("blockmean: spatial dims must be divisible by factor");
    const int64_t OH = H / factor, OW = W / factor;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    Tensor out({B, C, OH, OW});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* in = xv.data() + bc * H * W;
        double* op = out.data() + bc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < factor; ++dy) {
                    const double* row = in + (oy * factor + dy) * W + ox * factor;
                    for (int64_t dx = 0; dx < factor; ++dx) acc += row[dx];
                }
                op[oy * OW + ox] = acc * inv;
            }
    }
    return wrap(make_node(std::move(out), {x.node_}, [B, C, H, W, factor, inv](Node& nd) {
        const int64_t OH = H / factor, OW = W / factor;
        const Tensor& g = nd.grad;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            double* in = pg.data() + bc * H * W;
            const double* gp = g.data() + bc * OH * OW;
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const double gv = gp[oy * OW + ox] * inv;
                    for (int64_t dy = 0; dy < factor; ++dy) {
                        double* row = in + (oy * factor + dy) * W + ox * factor;
                        for (int64_t dx = 0; dx < factor; ++dx) row[dx] += gv;
                    }
                }
        }
    }));
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("global_avg_pool: expects rank 4");
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out({B, C, 1, 1});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* in = xv.data() + bc * HW;
        double acc = 0.0;
        for (int64_t i = 0; i < HW; ++i) acc += in[i];
        out[bc] = acc / static_cast<double>(HW);
    }
    return wrap(make_node(std::move(out), {x.node_}, [B, C, HW](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const double gv = g[bc] / static_cast<double>(HW);
            double* in = pg.data() + bc * HW;
            for (int64_t i = 0; i < HW; ++i) in[i] += gv;
        }
    }));
}

Var masked_gap(const Var& x, const Var& m) {
    const Tensor& xv = x.value();
    const Tensor& mv = m.value();
    if (xv.rank() != 4 || mv.rank() != 4 || mv.dim(0) != xv.dim(0) || mv.dim(1) != 1 ||
        mv.dim(2) != xv.dim(2) || mv.dim(3) != xv.dim(3))
        throw ShapeError("masked_gap: weights must be (B,1,H,W) matching x " + xv.shape_str() +
                         ", got " + mv.shape_str());
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out({B, C, 1, 1});
    std::vector<double> sums(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        const double* mw = mv.data() + b * HW;
        double s = 0.0;
        for (int64_t i = 0; i < HW; ++i) s += mw[i];
        sums[static_cast<size_t>(b)] = s;
        if (s <= 0.0) continue; // sentinel: zeros
        for (int64_t c = 0; c < C; ++c) {
            const double* in = xv.data() + (b * C + c) * HW;
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += in[i] * mw[i];
            out[b * C + c] = acc / s;
        }
    }
    return wrap(make_node(std::move(out), {x.node_, m.node_}, [B, C, HW, sums](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xval = nd.parents[0]->value;
        const Tensor& mval = nd.parents[1]->value;
        const Tensor& oval = nd.value;
        for (int64_t b = 0; b < B; ++b) {
            const double s = sums[static_cast<size_t>(b)];
            if (s <= 0.0) continue;
            const double* mw = mval.data() + b * HW;
            if (nd.parents[0]->requires_grad) {
                Tensor& xg = nd.parents[0]->grad_buffer();
                for (int64_t c = 0; c < C; ++c) {
                    const double gv = g[b * C + c] / s;
                    double* xr = xg.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) xr[i] += gv * mw[i];
                }
            }
            if (nd.parents[1]->requires_grad) {
                Tensor& mg = nd.parents[1]->grad_buffer();
                double* mr = mg.data() + b * HW;
                for (int64_t c = 0; c < C; ++c) {
                    const double gv = g[b * C + c] / s;
                    const double ov = oval[b * C + c];
                    const double* xr = xval.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) mr[i] += gv * (xr[i] - ov);
                }
            }
        }
    }));
}

Var fc11(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || xv.dim(2) != 1 || xv.dim(3) != 1)
        throw ShapeError("fc11: x must be (B,C,1,1), got " + xv.shape_str());
    if (wv.rank() != 2 || wv.dim(1) != xv.dim(1))
        throw ShapeError("fc11: w must be (O,C) with C matching x");
    const int64_t B = xv.dim(0), C = xv.dim(1), O = wv.dim(0);
    const bool has_bias = b.defined();
    if (has_bias && (b.value().rank() != 1 || b.value().dim(0) != O))
        throw ShapeError("fc11: bias must be (O)");
    Tensor out({B, O, 1, 1});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t o = 0; o < O; ++o) {
            double acc = has_bias ? b.value()[o] : 0.0;
            const double* xr = xv.data() + bi * C;
            const double* wr = wv.data() + o * C;
            for (int64_t c = 0; c < C; ++c) acc += wr[c] * xr[c];
            out[bi * O + o] = acc;
        }
    std::vector<NodePtr> parents{x.node_, w.node_};
    if (has_bias) parents.push_back(b.node_);
    return wrap(make_node(std::move(out), std::move(parents), [B, C, O, has_bias](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xval = nd.parents[0]->value;
        const Tensor& wval = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            Tensor& xg = nd.parents[0]->grad_buffer();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t o = 0; o < O; ++o) {
                    const double gv = g[bi * O + o];
                    const double* wr = wval.data() + o * C;
                    double* xr = xg.data() + bi * C;
                    for (int64_t c = 0; c < C; ++c) xr[c] += gv * wr[c];
                }
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& wg = nd.parents[1]->grad_buffer();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t o = 0; o < O; ++o) {
                    const double gv = g[bi * O + o];
                    const double* xr = xval.data() + bi * C;
                    double* wr = wg.data() + o * C;
                    for (int64_t c = 0; c < C; ++c) wr[c] += gv * xr[c];
                }
        }
        if (has_bias && nd.parents[2]->requires_grad) {
            Tensor& bg = nd.parents[2]->grad_buffer();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t o = 0; o < O; ++o) bg[o] += g[bi * O + o];
        }
    }));
}

} // namespace fetnet::ad
