#include "fetnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fetnet::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->name = std::move(name);
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

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                         " vs " + b.value().shape_str());
}

void check_scalar(const Var& v, const char* op) {
    if (v.value().numel() != 1)
        throw ShapeError(std::string(op) + ": expected scalar, got " + v.value().shape_str());
}

} // namespace

Var::Var(Tensor v, bool requires_grad, std::string name) {
    node_ = std::make_shared<Node>();
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
}

Var param(Tensor v, std::string name) { return Var(std::move(v), true, std::move(name)); }

Var constant(Tensor v) { return Var(std::move(v), false); }

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1)
        throw ShapeError("backward: loss must be a defined scalar");
    if (!loss.node_->requires_grad) return;

    // Reverse topological order: every node before its parents.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> visited;
    stack.emplace_back(loss.node_.get(), 0);
    visited.insert(loss.node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());

    loss.node_->grad_buffer()[0] += 1.0;
    for (Node* n : order)
        if (n->backprop && n->grad.defined()) n->backprop(*n);
}

double item(const Var& v) {
    if (v.value().numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return v.value()[0];
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.value().shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    return wrap(make_node(std::move(out), {a.node_, b.node_}, [](Node& nd) {
        const Tensor& g = nd.grad;
        for (int s = 0; s < 2; ++s) {
            Node& p = *nd.parents[s];
            if (!p.requires_grad) continue;
            Tensor& pg = p.grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return wrap(make_node(std::move(out), {a.node_, b.node_}, [](Node& nd) {
        const Tensor& g = nd.grad;
        if (nd.parents[0]->requires_grad) {
            Tensor& pg = nd.parents[0]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& pg = nd.parents[1]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return wrap(make_node(std::move(out), {a.node_, b.node_}, [](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            Tensor& pg = nd.parents[0]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * bv[i];
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& pg = nd.parents[1]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * av[i];
        }
    }));
}

Var scale(const Var& x, double k) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * k;
    return wrap(make_node(std::move(out), {x.node_}, [k](Node& nd) {
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i] * k;
    }));
}

Var add_scalar(const Var& x, double k) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] + k;
    return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
    }));
}

Var one_minus(const Var& x) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - x.value()[i];
    return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] -= nd.grad[i];
    }));
}

Var relu(const Var& x) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
    return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i)
            if (xv[i] > 0.0) pg[i] += nd.grad[i];
    }));
}

Var leaky_relu(const Var& x, double slope) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = x.value()[i];
        out[i] = v > 0.0 ? v : slope * v;
    }
    return wrap(make_node(std::move(out), {x.node_}, [slope](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i)
            pg[i] += nd.grad[i] * (xv[i] > 0.0 ? 1.0 : slope);
    }));
}

Var sigmoid(const Var& x) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
    return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
        const Tensor& y = nd.value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i] * y[i] * (1.0 - y[i]);
    }));
}

Var square(const Var& x) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * x.value()[i];
    return wrap(make_node(std::move(out), {x.node_}, [](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += 2.0 * nd.grad[i] * xv[i];
    }));
}

Var log_clamped(const Var& x, double eps) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(x.value()[i], eps));
    return wrap(make_node(std::move(out), {x.node_}, [eps](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < nd.grad.numel(); ++i)
            if (xv[i] > eps) pg[i] += nd.grad[i] / xv[i];
    }));
}

Var stopgrad(const Var& x) { return constant(x.value()); }

Var hard_threshold(const Var& x, double theta) {
    Tensor out(x.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] > theta ? 1.0 : 0.0;
    return constant(std::move(out));
}

// ------------------------------------------------------------- broadcast ops

Var mul_map(const Var& x, const Var& m) {
    const Tensor& xv = x.value();
    const Tensor& mv = m.value();
    if (xv.rank() != 4 || mv.rank() != 4 || mv.dim(1) != 1 || mv.dim(0) != xv.dim(0) ||
        mv.dim(2) != xv.dim(2) || mv.dim(3) != xv.dim(3))
        throw ShapeError("mul_map: map must be (B,1,H,W) matching x " + xv.shape_str() +
                         ", got " + mv.shape_str());
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = xv.data() + (b * C + c) * HW;
            const double* mp = mv.data() + b * HW;
            double* op = out.data() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] * mp[i];
        }
    return wrap(make_node(std::move(out), {x.node_, m.node_}, [B, C, HW](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& mv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            Tensor& xg = nd.parents[0]->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* gp = g.data() + (b * C + c) * HW;
                    const double* mp = mv.data() + b * HW;
                    double* xgp = xg.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) xgp[i] += gp[i] * mp[i];
                }
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& mg = nd.parents[1]->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* gp = g.data() + (b * C + c) * HW;
                    const double* xp = xv.data() + (b * C + c) * HW;
                    double* mgp = mg.data() + b * HW;
                    for (int64_t i = 0; i < HW; ++i) mgp[i] += gp[i] * xp[i];
                }
        }
    }));
}

Var mul_gate(const Var& x, const Var& g) {
    const Tensor& xv = x.value();
    const Tensor& gv = g.value();
    if (xv.rank() != 4 || gv.rank() != 4 || gv.dim(0) != xv.dim(0) || gv.dim(1) != xv.dim(1) ||
        gv.dim(2) != 1 || gv.dim(3) != 1)
        throw ShapeError("mul_gate: gate must be (B,C,1,1) matching x " + xv.shape_str() +
                         ", got " + gv.shape_str());
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double k = gv[b * C + c];
            const double* xp = xv.data() + (b * C + c) * HW;
            double* op = out.data() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] * k;
        }
    return wrap(make_node(std::move(out), {x.node_, g.node_}, [B, C, HW](Node& nd) {
        const Tensor& gr = nd.grad;
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& gv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            Tensor& xg = nd.parents[0]->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double k = gv[b * C + c];
                    const double* gp = gr.data() + (b * C + c) * HW;
                    double* xgp = xg.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) xgp[i] += gp[i] * k;
                }
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& gg = nd.parents[1]->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* gp = gr.data() + (b * C + c) * HW;
                    const double* xp = xv.data() + (b * C + c) * HW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < HW; ++i) acc += gp[i] * xp[i];
                    gg[b * C + c] += acc;
                }
        }
    }));
}

Var add_bias(const Var& x, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
        throw ShapeError("add_bias: bias must be (C); x " + xv.shape_str() + ", bias " +
                         bv.shape_str());
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int64_t b2 = 0; b2 < B; ++b2)
        for (int64_t c = 0; c < C; ++c) {
            const double k = bv[c];
            const double* xp = xv.data() + (b2 * C + c) * HW;
            double* op = out.data() + (b2 * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] + k;
        }
    return wrap(make_node(std::move(out), {x.node_, b.node_}, [B, C, HW](Node& nd) {
        const Tensor& g = nd.grad;
        if (nd.parents[0]->requires_grad) {
            Tensor& xg = nd.parents[0]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) xg[i] += g[i];
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& bg = nd.parents[1]->grad_buffer();
            for (int64_t b2 = 0; b2 < B; ++b2)
                for (int64_t c = 0; c < C; ++c) {
                    const double* gp = g.data() + (b2 * C + c) * HW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < HW; ++i) acc += gp[i];
                    bg[c] += acc;
                }
        }
    }));
}

// -------------------------------------------------------------------- concat

Var concat_ch(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_ch: empty input list");
    const Tensor& first = xs[0].value();
    if (first.rank() != 4) throw ShapeError("concat_ch: expects rank-4 tensors");
    const int64_t B = first.dim(0), H = first.dim(2), W = first.dim(3);
    int64_t Ctot = 0;
    std::vector<NodePtr> parents;
    std::vector<int64_t> ch;
    for (const Var& v : xs) {
        const Tensor& t = v.value();
        if (t.rank() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat_ch: incompatible shape " + t.shape_str());
        Ctot += t.dim(1);
        ch.push_back(t.dim(1));
        parents.push_back(v.node_);
    }
    Tensor out({B, Ctot, H, W});
    const int64_t HW = H * W;
    for (int64_t b = 0; b < B; ++b) {
        int64_t coff = 0;
        for (size_t s = 0; s < xs.size(); ++s) {
            const Tensor& t = xs[s].value();
            std::copy(t.data() + b * ch[s] * HW, t.data() + (b + 1) * ch[s] * HW,
                      out.data() + (b * Ctot + coff) * HW);
            coff += ch[s];
        }
    }
    return wrap(make_node(std::move(out), std::move(parents), [B, Ctot, HW, ch](Node& nd) {
        const Tensor& g = nd.grad;
        int64_t coff = 0;
        for (size_t s = 0; s < nd.parents.size(); ++s) {
            Node& p = *nd.parents[s];
            if (p.requires_grad) {
                Tensor& pg = p.grad_buffer();
                for (int64_t b = 0; b < B; ++b) {
                    const double* gp = g.data() + (b * Ctot + coff) * HW;
                    double* pgp = pg.data() + b * ch[s] * HW;
                    for (int64_t i = 0; i < ch[s] * HW; ++i) pgp[i] += gp[i];
                }
            }
            coff += ch[s];
        }
    }));
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
    return wrap(make_node(Tensor::scalar(acc), {x.node_}, [](Node& nd) {
        const double g = nd.grad[0];
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += g;
    }));
}

Var mean(const Var& x) {
    const int64_t n = x.value().numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.value()[i];
    return wrap(make_node(Tensor::scalar(acc / static_cast<double>(n)), {x.node_}, [n](Node& nd) {
        const double g = nd.grad[0] / static_cast<double>(n);
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < n; ++i) pg[i] += g;
    }));
}

Var l1_mean(const Var& x) {
    const int64_t n = x.value().numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(x.value()[i]);
    return wrap(make_node(Tensor::scalar(acc / static_cast<double>(n)), {x.node_}, [n](Node& nd) {
        const double g = nd.grad[0] / static_cast<double>(n);
        const Tensor& xv = nd.parents[0]->value;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int64_t i = 0; i < n; ++i) {
            if (xv[i] > 0.0) pg[i] += g;
            else if (xv[i] < 0.0) pg[i] -= g;
        }
    }));
}

// ------------------------------------------------------------------- scalars

Var s_add(const Var& a, const Var& b) {
    check_scalar(a, "s_add");
    check_scalar(b, "s_add");
    return wrap(make_node(Tensor::scalar(a.value()[0] + b.value()[0]), {a.node_, b.node_},
                          [](Node& nd) {
                              for (int s = 0; s < 2; ++s)
                                  if (nd.parents[s]->requires_grad)
                                      nd.parents[s]->grad_buffer()[0] += nd.grad[0];
                          }));
}

Var s_sub(const Var& a, const Var& b) {
    check_scalar(a, "s_sub");
    check_scalar(b, "s_sub");
    return wrap(make_node(Tensor::scalar(a.value()[0] - b.value()[0]), {a.node_, b.node_},
                          [](Node& nd) {
                              if (nd.parents[0]->requires_grad)
                                  nd.parents[0]->grad_buffer()[0] += nd.grad[0];
                              if (nd.parents[1]->requires_grad)
                                  nd.parents[1]->grad_buffer()[0] -= nd.grad[0];
                          }));
}

Var s_mul(const Var& a, const Var& b) {
    check_scalar(a, "s_mul");
    check_scalar(b, "s_mul");
    return wrap(make_node(Tensor::scalar(a.value()[0] * b.value()[0]), {a.node_, b.node_},
                          [](Node& nd) {
                              const double av = nd.parents[0]->value[0];
                              const double bv = nd.parents[1]->value[0];
                              if (nd.parents[0]->requires_grad)
                                  nd.parents[0]->grad_buffer()[0] += nd.grad[0] * bv;
                              if (nd.parents[1]->requires_grad)
                                  nd.parents[1]->grad_buffer()[0] += nd.grad[0] * av;
                          }));
}

Var s_div(const Var& a, const Var& b) {
    check_scalar(a, "s_div");
    check_scalar(b, "s_div");
    return wrap(make_node(Tensor::scalar(a.value()[0] / b.value()[0]), {a.node_, b.node_},
                          [](Node& nd) {
                              const double av = nd.parents[0]->value[0];
                              const double bv = nd.parents[1]->value[0];
                              if (nd.parents[0]->requires_grad)
                                  nd.parents[0]->grad_buffer()[0] += nd.grad[0] / bv;
                              if (nd.parents[1]->requires_grad)
                                  nd.parents[1]->grad_buffer()[0] -= nd.grad[0] * av / (bv * bv);
                          }));
}

} // namespace fetnet::ad
