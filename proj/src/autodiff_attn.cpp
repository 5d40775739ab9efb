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

} // namespace

Var cosine_similarity_map(const Var& x, double eps) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("cosine_similarity_map: expects rank 4");
    if (eps <= 0.0) throw ParamError("cosine_similarity_map: eps must be > 0");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t N = H * W;

    // Normalized per-position feature rows U (N,C) per batch item; the norm
    // is floored at eps so all-zero positions stay well defined.
    Tensor U({B, N, C});
    Tensor norms({B, N});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n) {
            double sq = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const double v = xv[(b * C + c) * N + n];
                sq += v * v;
            }
            const double nr = std::sqrt(sq);
            const double d = std::max(nr, eps);
            norms.at(b, n) = nr;
            for (int64_t c = 0; c < C; ++c)
                U.at(b, n, c) = xv[(b * C + c) * N + n] / d;
        }

    Tensor out({B, N, N});
    for (int64_t b = 0; b < B; ++b) {
        CMapRM Ub(U.data() + b * N * C, N, C);
        MapRM Sb(out.data() + b * N * N, N, N);
        Sb.noalias() = Ub * Ub.transpose();
    }

    return wrap(make_node(std::move(out), {x.node_},
                          [B, C, N, eps, U = std::move(U), norms = std::move(norms)](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& xg = nd.parents[0]->grad_buffer();
        Tensor dU({N, C});
        for (int64_t b = 0; b < B; ++b) {
            CMapRM G(g.data() + b * N * N, N, N);
            CMapRM Ub(U.data() + b * N * C, N, C);
            MapRM dUb(dU.data(), N, C);
            // S = U U^T  =>  dU = (G + G^T) U
            dUb.noalias() = G * Ub;
            dUb.noalias() += G.transpose() * Ub;
            for (int64_t n = 0; n < N; ++n) {
                const double nr = norms.at(b, n);
                if (nr > eps) {
                    // u = x/|x|: dx = (dU - (u . dU) u) / |x|
                    double dot = 0.0;
                    for (int64_t c = 0; c < C; ++c) dot += U.at(b, n, c) * dU.at(n, c);
                    for (int64_t c = 0; c < C; ++c)
                        xg[(b * C + c) * N + n] +=
                            (dU.at(n, c) - dot * U.at(b, n, c)) / nr;
                } else {
                    // u = x/eps: linear
                    for (int64_t c = 0; c < C; ++c)
                        xg[(b * C + c) * N + n] += dU.at(n, c) / eps;
                }
            }
        }
    }));
}

Var background_attention(const Var& s, const Var& ct, bool masked) {
    const Tensor& sv = s.value();
    const Tensor& cv = ct.value();
    if (sv.rank() != 3 || sv.dim(1) != sv.dim(2))
        throw ShapeError("background_attention: s must be (B,N,N), got " + sv.shape_str());
    if (cv.rank() != 4 || cv.dim(1) != 1)
        throw ShapeError("background_attention: ct must be (B,1,H,W), got " + cv.shape_str());
    const int64_t B = sv.dim(0), N = sv.dim(1), H = cv.dim(2), W = cv.dim(3);
    if (cv.dim(0) != B || H * W != N)
        throw ShapeError("background_attention: ct spatial size must match s positions");

    Tensor out({B, N, H, W});
    for (int64_t b = 0; b < B; ++b) {
        const double* c = cv.data() + b * N;
        const double* S = sv.data() + b * N * N;
        for (int64_t q = 0; q < N; ++q) {
            double* y = out.data() + (b * N + q) * N;
            const double bq = 1.0 - c[q];
            if (masked) {
                double mx = -1e300;
                bool any = false;
                for (int64_t k = 0; k < N; ++k)
                    if (c[k] < 1.0) {
                        any = true;
                        const double pre = bq * (1.0 - c[k]) * S[q * N + k];
                        if (pre > mx) mx = pre;
                    }
                if (!any) {
                    const double u = 1.0 / static_cast<double>(N);
                    for (int64_t k = 0; k < N; ++k) y[k] = u;
                    continue;
                }
                double z = 0.0;
                for (int64_t k = 0; k < N; ++k) {
                    if (c[k] < 1.0) {
                        y[k] = std::exp(bq * (1.0 - c[k]) * S[q * N + k] - mx);
                        z += y[k];
                    } else {
                        y[k] = 0.0;
                    }
                }
                for (int64_t k = 0; k < N; ++k) y[k] /= z;
                for (int64_t k = 0; k < N; ++k)
                    if (c[k] >= 1.0) y[k] = 0.0;
            } else {
                double mx = -1e300;
                for (int64_t k = 0; k < N; ++k) {
                    const double pre = bq * (1.0 - c[k]) * S[q * N + k];
                    y[k] = pre;
                    if (pre > mx) mx = pre;
                }
                double z = 0.0;
                for (int64_t k = 0; k < N; ++k) {
                    y[k] = std::exp(y[k] - mx);
                    z += y[k];
                }
                for (int64_t k = 0; k < N; ++k) y[k] /= z;
            }
        }
    }

    return wrap(make_node(std::move(out), {s.node_, ct.node_}, [B, N, masked](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& y = nd.value;
        const Tensor& sv = nd.parents[0]->value;
        const Tensor& cv = nd.parents[1]->value;
        const bool need_s = nd.parents[0]->requires_grad;
        const bool need_c = nd.parents[1]->requires_grad;
        Tensor* sg = need_s ? &nd.parents[0]->grad_buffer() : nullptr;
        Tensor* cg = need_c ? &nd.parents[1]->grad_buffer() : nullptr;
        std::vector<double> dpre(static_cast<size_t>(N));
        for (int64_t b = 0; b < B; ++b) {
            const double* c = cv.data() + b * N;
            const double* S = sv.data() + b * N * N;
            for (int64_t q = 0; q < N; ++q) {
                const double* yq = y.data() + (b * N + q) * N;
                const double* gq = g.data() + (b * N + q) * N;
                const double bq = 1.0 - c[q];
                if (masked) {
                    bool any = false;
                    for (int64_t k = 0; k < N; ++k)
                        if (c[k] < 1.0) { any = true; break; }
                    if (!any) continue; // uniform fallback: constant
                }
                // softmax jacobian: dpre_k = y_k (g_k - sum_j g_j y_j)
                double dot = 0.0;
                for (int64_t k = 0; k < N; ++k) dot += gq[k] * yq[k];
                for (int64_t k = 0; k < N; ++k) {
                    double d = yq[k] * (gq[k] - dot);
                    if (masked && c[k] >= 1.0) d = 0.0;
                    dpre[static_cast<size_t>(k)] = d;
                }
                // pre(q,k) = (1-c_q)(1-c_k) S(q,k)
                double dbq = 0.0;
                for (int64_t k = 0; k < N; ++k) {
                    const double d = dpre[static_cast<size_t>(k)];
                    if (d == 0.0) continue;
                    const double bk = 1.0 - c[k];
                    if (need_s) (*sg)[(b * N + q) * N + k] += bq * bk * d;
                    dbq += bk * S[q * N + k] * d;
                    if (need_c) (*cg)[b * N + k] -= bq * S[q * N + k] * d;
                }
                if (need_c) (*cg)[b * N + q] -= dbq;
            }
        }
    }));
}

Var uniform_background_attention(const Var& ct) {
    const Tensor& cv = ct.value();
    if (cv.rank() != 4 || cv.dim(1) != 1)
        throw ShapeError("uniform_background_attention: ct must be (B,1,H,W)");
    const int64_t B = cv.dim(0), H = cv.dim(2), W = cv.dim(3), N = H * W;
    Tensor out({B, N, H, W});
    for (int64_t b = 0; b < B; ++b) {
        const double* c = cv.data() + b * N;
        double ssum = 0.0;
        for (int64_t k = 0; k < N; ++k) ssum += 1.0 - c[k];
        double* y0 = out.data() + b * N * N;
        if (ssum <= 0.0) {
            const double u = 1.0 / static_cast<double>(N);
            for (int64_t k = 0; k < N; ++k) y0[k] = u;
        } else {
            for (int64_t k = 0; k < N; ++k) y0[k] = (1.0 - c[k]) / ssum;
        }
        for (int64_t q = 1; q < N; ++q)
            std::copy(y0, y0 + N, y0 + q * N);
    }
    return wrap(make_node(std::move(out), {ct.node_}, [B, N](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& cv = nd.parents[0]->value;
        Tensor& cg = nd.parents[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b) {
            const double* c = cv.data() + b * N;
            double ssum = 0.0;
            for (int64_t k = 0; k < N; ++k) ssum += 1.0 - c[k];
            if (ssum <= 0.0) continue;
            // y_k = b_k / s: dL/db_j = sum_q [g(q,j) - sum_k g(q,k) y_k] / s
            const double* yrow = nd.value.data() + b * N * N; // row 0; all rows equal
            for (int64_t q = 0; q < N; ++q) {
                const double* gq = g.data() + (b * N + q) * N;
                double dot = 0.0;
                for (int64_t k = 0; k < N; ++k) dot += gq[k] * yrow[k];
                for (int64_t k = 0; k < N; ++k)
                    cg[b * N + k] -= (gq[k] - dot) / ssum; // dct = -db
            }
        }
    }));
}

Var attend(const Var& f, const Var& attn) {
    const Tensor& fv = f.value();
    const Tensor& av = attn.value();
    if (fv.rank() != 4 || av.rank() != 4)
        throw ShapeError("attend: expects rank-4 features and attention");
    const int64_t B = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
    const int64_t N = H * W;
    if (av.dim(0) != B || av.dim(1) != N || av.dim(2) != H || av.dim(3) != W)
        throw ShapeError("attend: attention must be (B," + std::to_string(N) + "," +
                         std::to_string(H) + "," + std::to_string(W) + "), got " + av.shape_str());
    Tensor out({B, C, H, W});
    for (int64_t b = 0; b < B; ++b) {
        CMapRM F(fv.data() + b * C * N, C, N);
        CMapRM A(av.data() + b * N * N, N, N);
        MapRM Y(out.data() + b * C * N, C, N);
        Y.noalias() = F * A.transpose(); // Y(c,q) = sum_k F(c,k) A(q,k)
    }
    return wrap(make_node(std::move(out), {f.node_, attn.node_}, [B, C, N](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& fv = nd.parents[0]->value;
        const Tensor& av = nd.parents[1]->value;
        for (int64_t b = 0; b < B; ++b) {
            CMapRM G(g.data() + b * C * N, C, N);
            if (nd.parents[0]->requires_grad) {
                MapRM dF(nd.parents[0]->grad_buffer().data() + b * C * N, C, N);
                CMapRM A(av.data() + b * N * N, N, N);
                dF.noalias() += G * A;
            }
            if (nd.parents[1]->requires_grad) {
                MapRM dA(nd.parents[1]->grad_buffer().data() + b * N * N, N, N);
                CMapRM F(fv.data() + b * C * N, C, N);
                dA.noalias() += G.transpose() * F; // dA(q,k) = sum_c G(c,q) F(c,k)
            }
        }
    }));
}

namespace {

// nearest-neighbor source index with half-pixel centers
inline int64_t nn_src(int64_t o, int64_t in, int64_t out) {
    int64_t s = (2 * o + 1) * in / (2 * out);
    return std::min(s, in - 1);
}

} // namespace

Var rescale_attention(const Var& attn, int64_t out_h, int64_t out_w) {
    const Tensor& av = attn.value();
    if (av.rank() != 4) throw ShapeError("rescale_attention: expects rank 4");
    const int64_t B = av.dim(0), N = av.dim(1), hs = av.dim(2), ws = av.dim(3);
    if (N != hs * ws)
        throw ShapeError("rescale_attention: channel count must equal key grid size");
    if (out_h < 1 || out_w < 1) throw ParamError("rescale_attention: output dims must be >= 1");
    if (hs * out_w != ws * out_h)
        throw ParamError("rescale_attention: target grid must keep the source aspect ratio");
    const int64_t N2 = out_h * out_w;

    std::vector<int64_t> qy(static_cast<size_t>(out_h)), qx(static_cast<size_t>(out_w));
    for (int64_t y = 0; y < out_h; ++y) qy[static_cast<size_t>(y)] = nn_src(y, hs, out_h);
    for (int64_t x = 0; x < out_w; ++x) qx[static_cast<size_t>(x)] = nn_src(x, ws, out_w);

    Tensor out({B, N2, out_h, out_w});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t Qy = 0; Qy < out_h; ++Qy)
            for (int64_t Qx = 0; Qx < out_w; ++Qx) {
                const int64_t q = qy[static_cast<size_t>(Qy)] * ws + qx[static_cast<size_t>(Qx)];
                const double* src = av.data() + (b * N + q) * hs * ws;
                double* dst = out.data() + (b * N2 + Qy * out_w + Qx) * N2;
                double ssum = 0.0;
                for (int64_t Ky = 0; Ky < out_h; ++Ky) {
                    const double* srow = src + qy[static_cast<size_t>(Ky)] * ws;
                    double* drow = dst + Ky * out_w;
                    for (int64_t Kx = 0; Kx < out_w; ++Kx) {
                        const double v = srow[qx[static_cast<size_t>(Kx)]];
                        drow[Kx] = v;
                        ssum += v;
                    }
                }
                if (ssum <= 0.0) {
                    const double u = 1.0 / static_cast<double>(N2);
                    for (int64_t i = 0; i < N2; ++i) dst[i] = u;
                } else {
                    for (int64_t i = 0; i < N2; ++i) dst[i] /= ssum;
                }
            }

    return wrap(make_node(
        std::move(out), {attn.node_},
        [B, N, hs, ws, out_h, out_w, N2, qy, qx](Node& nd) {
            const Tensor& g = nd.grad;
            const Tensor& y = nd.value;
            const Tensor& av = nd.parents[0]->value;
            Tensor& ag = nd.parents[0]->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t Qy = 0; Qy < out_h; ++Qy)
                    for (int64_t Qx = 0; Qx < out_w; ++Qx) {
                        const int64_t q =
                            qy[static_cast<size_t>(Qy)] * ws + qx[static_cast<size_t>(Qx)];
                        const int64_t Q = Qy * out_w + Qx;
                        const double* src = av.data() + (b * N + q) * hs * ws;
                        const double* yq = y.data() + (b * N2 + Q) * N2;
                        const double* gq = g.data() + (b * N2 + Q) * N2;
                        double ssum = 0.0;
                        for (int64_t Ky = 0; Ky < out_h; ++Ky) {
                            const double* srow = src + qy[static_cast<size_t>(Ky)] * ws;
                            for (int64_t Kx = 0; Kx < out_w; ++Kx)
                                ssum += srow[qx[static_cast<size_t>(Kx)]];
                        }
                        if (ssum <= 0.0) continue; // uniform fallback: constant
                        // y_i = raw_i / s: draw_i = (g_i - sum_j g_j y_j) / s
                        double dot = 0.0;
                        for (int64_t i = 0; i < N2; ++i) dot += gq[i] * yq[i];
                        double* dsrc = ag.data() + (b * N + q) * hs * ws;
                        for (int64_t Ky = 0; Ky < out_h; ++Ky) {
                            double* drow = dsrc + qy[static_cast<size_t>(Ky)] * ws;
                            const double* grow = gq + Ky * out_w;
                            for (int64_t Kx = 0; Kx < out_w; ++Kx)
                                drow[qx[static_cast<size_t>(Kx)]] +=
                                    (grow[Kx] - dot) / ssum;
                        }
                    }
        }));
}

Var attend_rescaled(const Var& attn_src, const Var& f, int up) {
    const Tensor& av = attn_src.value();
    const Tensor& fv = f.value();
    if (av.rank() != 4 || fv.rank() != 4)
        throw ShapeError("attend_rescaled: expects rank-4 tensors");
    if (up < 1) throw ParamError("attend_rescaled: upscale factor must be >= 1");
    const int64_t B = av.dim(0), Nq = av.dim(1), hs = av.dim(2), ws = av.dim(3);
    if (Nq != hs * ws)
        throw ShapeError("attend_rescaled: attention channels must equal key grid size");
    const int64_t C = fv.dim(1), Ht = fv.dim(2), Wt = fv.dim(3);
    if (fv.dim(0) != B || Ht != hs * up || Wt != ws * up)
        throw ShapeError("attend_rescaled: feature grid must be the attention grid times the "
                         "upscale factor");

    // Pool features to the attention resolution, attend there with per-query
    // renormalized weights, then repeat each result over its up x up block.
    // For integer upscales this matches rescale_attention + attend exactly:
    // the upscaled slice repeats each source weight over an up^2 block, so
    // the weighted sum over target keys equals the sum over source keys of
    // weight * blockmean * up^2, and the renormalizer likewise becomes
    // (source slice sum) * up^2.
    const double inv = 1.0 / (static_cast<double>(up) * up);
    Tensor m({B, C, hs, ws});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* in = fv.data() + bc * Ht * Wt;
        double* op = m.data() + bc * Nq;
        for (int64_t oy = 0; oy < hs; ++oy)
            for (int64_t ox = 0; ox < ws; ++ox) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < up; ++dy) {
                    const double* row = in + (oy * up + dy) * Wt + ox * up;
                    for (int64_t dx = 0; dx < up; ++dx) acc += row[dx];
                }
                op[oy * ws + ox] = acc * inv;
            }
    }

    Tensor anorm({B, Nq, Nq}); // per-query renormalized source attention
    for (int64_t b = 0; b < B; ++b)
        for (int64_t q = 0; q < Nq; ++q) {
            const double* a = av.data() + (b * Nq + q) * Nq;
            double* o = anorm.data() + (b * Nq + q) * Nq;
            double ssum = 0.0;
            for (int64_t k = 0; k < Nq; ++k) ssum += a[k];
            if (ssum <= 0.0) {
                const double u = 1.0 / static_cast<double>(Nq);
                for (int64_t k = 0; k < Nq; ++k) o[k] = u;
            } else {
                for (int64_t k = 0; k < Nq; ++k) o[k] = a[k] / ssum;
            }
        }

    Tensor fsrc({B, C, hs, ws});
    for (int64_t b = 0; b < B; ++b) {
        CMapRM M(m.data() + b * C * Nq, C, Nq);
        CMapRM A(anorm.data() + b * Nq * Nq, Nq, Nq);
        MapRM Y(fsrc.data() + b * C * Nq, C, Nq);
        Y.noalias() = M * A.transpose();
    }

    Tensor out({B, C, Ht, Wt});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* in = fsrc.data() + bc * Nq;
        double* op = out.data() + bc * Ht * Wt;
        for (int64_t oy = 0; oy < Ht; ++oy) {
            const double* row = in + (oy / up) * ws;
            double* orow = op + oy * Wt;
            for (int64_t ox = 0; ox < Wt; ++ox) orow[ox] = row[ox / up];
        }
    }

    return wrap(make_node(
        std::move(out), {attn_src.node_, f.node_},
        [B, C, Nq, hs, ws, Ht, Wt, up, inv, m = std::move(m), anorm = std::move(anorm),
         fsrc = std::move(fsrc)](Node& nd) {
            const Tensor& g = nd.grad;
            const Tensor& av = nd.parents[0]->value;
            const bool need_a = nd.parents[0]->requires_grad;
            const bool need_f = nd.parents[1]->requires_grad;

            // fold the output gradient onto the source grid
            Tensor gsrc({B, C, hs, ws});
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const double* gp = g.data() + bc * Ht * Wt;
                double* op = gsrc.data() + bc * Nq;
                for (int64_t oy = 0; oy < Ht; ++oy) {
                    const double* grow = gp + oy * Wt;
                    double* orow = op + (oy / up) * ws;
                    for (int64_t ox = 0; ox < Wt; ++ox) orow[ox / up] += grow[ox];
                }
            }

            Tensor danorm({Nq, Nq});
            Tensor dm({C, Nq});
            for (int64_t b = 0; b < B; ++b) {
                CMapRM G(gsrc.data() + b * C * Nq, C, Nq);
                CMapRM A(anorm.data() + b * Nq * Nq, Nq, Nq);
                CMapRM M(m.data() + b * C * Nq, C, Nq);
                if (need_a) {
                    MapRM dA(danorm.data(), Nq, Nq);
                    dA.noalias() = G.transpose() * M; // d/danorm like attend()
                    Tensor& ag = nd.parents[0]->grad_buffer();
                    for (int64_t q = 0; q < Nq; ++q) {
                        const double* a = av.data() + (b * Nq + q) * Nq;
                        double ssum = 0.0;
                        for (int64_t k = 0; k < Nq; ++k) ssum += a[k];
                        if (ssum <= 0.0) continue;
                        const double* an = anorm.data() + (b * Nq + q) * Nq;
                        const double* dan = danorm.data() + q * Nq;
                        double dot = 0.0;
                        for (int64_t k = 0; k < Nq; ++k) dot += dan[k] * an[k];
                        double* agq = ag.data() + (b * Nq + q) * Nq;
                        for (int64_t k = 0; k < Nq; ++k) agq[k] += (dan[k] - dot) / ssum;
                    }
                }
                if (need_f) {
                    MapRM dM(dm.data(), C, Nq);
                    dM.noalias() = G * A;
                    Tensor& fg = nd.parents[1]->grad_buffer();
                    for (int64_t c = 0; c < C; ++c) {
                        double* fp = fg.data() + (b * C + c) * Ht * Wt;
                        const double* dmp = dm.data() + c * Nq;
                        for (int64_t oy = 0; oy < hs; ++oy)
                            for (int64_t ox = 0; ox < ws; ++ox) {
                                const double gv = dmp[oy * ws + ox] * inv;
                                for (int64_t dy = 0; dy < up; ++dy) {
                                    double* row = fp + (oy * up + dy) * Wt + ox * up;
                                    for (int64_t dx = 0; dx < up; ++dx) row[dx] += gv;
                                }
                            }
                    }
                }
            }
        }));
}

Var gram(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("gram: expects rank 4");
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    const double inv = 1.0 / static_cast<double>(C * HW);
    Tensor out({B, C, C});
    for (int64_t b = 0; b < B; ++b) {
        CMapRM A(xv.data() + b * C * HW, C, HW);
        MapRM G(out.data() + b * C * C, C, C);
        G.noalias() = (A * A.transpose()) * inv;
    }
    return wrap(make_node(std::move(out), {x.node_}, [B, C, HW, inv](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xv = nd.parents[0]->value;
        Tensor& xg = nd.parents[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b) {
            CMapRM Gg(g.data() + b * C * C, C, C);
            CMapRM A(xv.data() + b * C * HW, C, HW);
            MapRM dA(xg.data() + b * C * HW, C, HW);
            dA.noalias() += (Gg + Gg.transpose()) * A * inv;
        }
    }));
}

} // namespace fetnet::ad
