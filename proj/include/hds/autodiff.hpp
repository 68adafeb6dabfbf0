#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hds/kernels.hpp"
#include "hds/tensor.hpp"

namespace hds::ad {

// Reverse-mode tape. Nodes own their value, an optional gradient
// accumulator and a closure that pushes gradients to the parents.
// The tape is single-threaded per training step.

template <class T>
struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;

    void ensure_grad() {
        if (grad.data.size() != value.data.size()) grad = TensorT<T>(value.shape, T(0));
    }
    void zero_grad() {
        std::fill(grad.data.begin(), grad.data.end(), T(0));
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> leaf(TensorT<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

template <class T>
Var<T> constant(TensorT<T> v) {
    return leaf(std::move(v), false);
}

namespace detail {

template <class T>
Var<T> make_op(TensorT<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->ensure_grad();
        n->backprop = std::move(backprop);
    }
    return n;
}

// Interpret shape as [N, C, spatial...]; missing leading axes default to 1.
template <class T>
void ncs(const TensorT<T>& t, int64_t& n, int64_t& c, int64_t& sp) {
    check_shape(t.shape.size() >= 2, "expected at least 2 axes, got " + shape_str(t.shape));
    n = t.shape[0];
    c = t.shape[1];
    sp = 1;
    for (size_t i = 2; i < t.shape.size(); ++i) sp *= t.shape[i];
}

}  // namespace detail

// Backward pass from a scalar root. Iterative topological order.
template <class T>
void backward(const Var<T>& root) {
    check_shape(root->value.size() == 1, "backward requires a scalar output, got shape " +
                                             shape_str(root->value.shape));
    if (!root->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && seen.count(node)) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node<T>* next = node->parents[idx].get();
            ++idx;
            if (next->requires_grad && !seen.count(next)) stack.push_back({next, 0});
        } else {
            seen.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_shape(a->value.shape == b->value.shape,
                "add: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
    TensorT<T> out(a->value.shape);
    simd::ew_add(a->value.ptr(), b->value.ptr(), out.ptr(), out.size());
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            simd::ew_axpy(T(1), n.grad.ptr(), a->grad.ptr(), n.grad.size());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            simd::ew_axpy(T(1), n.grad.ptr(), b->grad.ptr(), n.grad.size());
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_shape(a->value.shape == b->value.shape,
                "sub: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            simd::ew_axpy(T(1), n.grad.ptr(), a->grad.ptr(), n.grad.size());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            simd::ew_axpy(T(-1), n.grad.ptr(), b->grad.ptr(), n.grad.size());
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_shape(a->value.shape == b->value.shape,
                "mul: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
    TensorT<T> out(a->value.shape);
    simd::ew_mul(a->value.ptr(), b->value.ptr(), out.ptr(), out.size());
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    check_shape(a->value.shape == b->value.shape,
                "div: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.size(); ++i)
                b->grad[i] -= n.grad[i] * a->value[i] / (b->value[i] * b->value[i]);
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
    return detail::make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
        a->ensure_grad();
        simd::ew_axpy(s, n.grad.ptr(), a->grad.ptr(), n.grad.size());
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        simd::ew_axpy(T(1), n.grad.ptr(), a->grad.ptr(), n.grad.size());
    });
}

// x * sigmoid(x)
template <class T>
Var<T> silu(const Var<T>& a) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) {
        const T x = a->value[i];
        out[i] = x / (T(1) + std::exp(-x));
    }
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.size(); ++i) {
            const T x = a->value[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            a->grad[i] += n.grad[i] * (s * (T(1) + x * (T(1) - s)));
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions. Sums run in flat memory order; this is the documented
// deterministic reduction order for checkpoint-affecting paths.

template <class T>
Var<T> sum(const Var<T>& a) {
    T acc = T(0);
    for (int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
    TensorT<T> out(Shape{1});
    out[0] = acc;
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        const T g = n.grad[0];
        for (int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a->value.size()));
}

// mean |a - b|; subgradient 0 at ties
template <class T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
    check_shape(a->value.shape == b->value.shape,
                "l1_loss: shape mismatch " + shape_str(a->value.shape) + " vs " +
                    shape_str(b->value.shape));
    T acc = T(0);
    for (int64_t i = 0; i < a->value.size(); ++i) acc += std::abs(a->value[i] - b->value[i]);
    const T inv_n = T(1) / static_cast<T>(a->value.size());
    TensorT<T> out(Shape{1});
    out[0] = acc * inv_n;
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, inv_n](Node<T>& n) {
        const T g = n.grad[0] * inv_n;
        for (int64_t i = 0; i < a->value.size(); ++i) {
            const T d = a->value[i] - b->value[i];
            const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad[i] += s;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad[i] -= s;
            }
        }
    });
}

// [N,C,spatial...] -> [N,C], summing over the spatial axes
template <class T>
Var<T> spatial_sum(const Var<T>& a) {
    int64_t n, c, sp;
    detail::ncs(a->value, n, c, sp);
    TensorT<T> out(Shape{n, c});
    for (int64_t i = 0; i < n * c; ++i) {
        T acc = T(0);
        const T* src = a->value.ptr() + i * sp;
        for (int64_t j = 0; j < sp; ++j) acc += src[j];
        out[i] = acc;
    }
    return detail::make_op<T>(std::move(out), {a}, [a, n, c, sp](Node<T>& nd) {
        a->ensure_grad();
        for (int64_t i = 0; i < n * c; ++i) {
            const T g = nd.grad[i];
            T* dst = a->grad.ptr() + i * sp;
            for (int64_t j = 0; j < sp; ++j) dst[j] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Structured ops

// Broadcast-add a per-(batch, channel) bias [N,C] over the spatial axes.
template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
    int64_t n, c, sp;
    detail::ncs(x->value, n, c, sp);
    check_shape(b->value.shape == Shape({n, c}),
                "add_channel_bias: bias shape " + shape_str(b->value.shape) +
                    " does not match [N,C] of " + shape_str(x->value.shape));
    TensorT<T> out(x->value.shape);
    for (int64_t i = 0; i < n * c; ++i) {
        const T bias = b->value[i];
        const T* src = x->value.ptr() + i * sp;
        T* dst = out.ptr() + i * sp;
        for (int64_t j = 0; j < sp; ++j) dst[j] = src[j] + bias;
    }
    return detail::make_op<T>(std::move(out), {x, b}, [x, b, n, c, sp](Node<T>& nd) {
        if (x->requires_grad) {
            x->ensure_grad();
            simd::ew_axpy(T(1), nd.grad.ptr(), x->grad.ptr(), nd.grad.size());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n * c; ++i) {
                T acc = T(0);
                const T* g = nd.grad.ptr() + i * sp;
                for (int64_t j = 0; j < sp; ++j) acc += g[j];
                b->grad[i] += acc;
            }
        }
    });
}

// x [N,F] @ w [O,F] + b [O] -> [N,O]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    check_shape(x->value.shape.size() == 2 && w->value.shape.size() == 2,
                "linear: expected 2-axis input and weight");
    const int64_t n = x->value.shape[0], f = x->value.shape[1], o = w->value.shape[0];
    check_shape(w->value.shape[1] == f, "linear: weight " + shape_str(w->value.shape) +
                                            " incompatible with input " +
                                            shape_str(x->value.shape));
    check_shape(b->value.shape == Shape({o}), "linear: bad bias shape");
    TensorT<T> out(Shape{n, o});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < o; ++j) {
            T acc = b->value[j];
            const T* xr = x->value.ptr() + i * f;
            const T* wr = w->value.ptr() + j * f;
            for (int64_t k = 0; k < f; ++k) acc += xr[k] * wr[k];
            out[i * o + j] = acc;
        }
    return detail::make_op<T>(std::move(out), {x, w, b}, [x, w, b, n, f, o](Node<T>& nd) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < o; ++j) {
                const T g = nd.grad[i * o + j];
                if (x->requires_grad) {
                    x->ensure_grad();
                    const T* wr = w->value.ptr() + j * f;
                    T* xg = x->grad.ptr() + i * f;
                    for (int64_t k = 0; k < f; ++k) xg[k] += g * wr[k];
                }
                if (w->requires_grad) {
                    w->ensure_grad();
                    const T* xr = x->value.ptr() + i * f;
                    T* wg = w->grad.ptr() + j * f;
                    for (int64_t k = 0; k < f; ++k) wg[k] += g * xr[k];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    b->grad[j] += g;
                }
            }
    });
}

// Concatenate along the channel axis.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    check_shape(!xs.empty(), "concat_channels: empty input list");
    int64_t n0, c0, sp0;
    detail::ncs(xs[0]->value, n0, c0, sp0);
    int64_t ctot = 0;
    for (auto& x : xs) {
        int64_t n, c, sp;
        detail::ncs(x->value, n, c, sp);
        check_shape(n == n0 && sp == sp0,
                    "concat_channels: incompatible shape " + shape_str(x->value.shape));
        ctot += c;
    }
    Shape oshape = xs[0]->value.shape;
    oshape[1] = ctot;
    TensorT<T> out(oshape);
    int64_t coff = 0;
    for (auto& x : xs) {
        const int64_t c = x->value.shape[1];
        for (int64_t b = 0; b < n0; ++b)
            std::copy_n(x->value.ptr() + b * c * sp0, c * sp0,
                        out.ptr() + (b * ctot + coff) * sp0);
        coff += c;
    }
    return detail::make_op<T>(std::move(out), xs, [xs, n0, sp0, ctot](Node<T>& nd) {
        int64_t coff = 0;
        for (auto& x : xs) {
            const int64_t c = x->value.shape[1];
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t b = 0; b < n0; ++b) {
                    const T* g = nd.grad.ptr() + (b * ctot + coff) * sp0;
                    T* xg = x->grad.ptr() + b * c * sp0;
                    for (int64_t i = 0; i < c * sp0; ++i) xg[i] += g[i];
                }
            }
            coff += c;
        }
    });
}

// ---------------------------------------------------------------------------
// conv3d: cross-correlation over [N,C,D,H,W] with symmetric zero padding.

template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1,
              int64_t padding = 0) {
    check_shape(x->value.shape.size() == 5, "conv3d: input must be [N,C,D,H,W], got " +
                                                shape_str(x->value.shape));
    check_shape(w->value.shape.size() == 5, "conv3d: kernel must be [Co,Ci,kd,kh,kw], got " +
                                                shape_str(w->value.shape));
    check_shape(stride >= 1, "conv3d: stride must be >= 1");
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    check_shape(ws[1] == xs[1], "conv3d: channel mismatch, input " + shape_str(xs) +
                                    " vs kernel " + shape_str(ws));
    simd::Conv3dDims d;
    d.n = xs[0];
    d.cin = xs[1];
    d.cout = ws[0];
    d.kd = ws[2];
    d.kh = ws[3];
    d.kw = ws[4];
    d.dp = xs[2] + 2 * padding;
    d.hp = xs[3] + 2 * padding;
    d.wp = xs[4] + 2 * padding;
    check_shape(d.kd <= d.dp && d.kh <= d.hp && d.kw <= d.wp,
                "conv3d: kernel " + shape_str(ws) + " exceeds padded input " + shape_str(xs));
    d.od = (d.dp - d.kd) / stride + 1;
    d.oh = (d.hp - d.kh) / stride + 1;
    d.ow = (d.wp - d.kw) / stride + 1;
    d.stride = stride;
    if (b) check_shape(b->value.shape == Shape({d.cout}), "conv3d: bad bias shape");

    // zero-padded copy; borders contribute exact zeros on every backend
    auto pad_input = [&](const TensorT<T>& src) {
        TensorT<T> xp(Shape{d.n, d.cin, d.dp, d.hp, d.wp});
        for (int64_t nn = 0; nn < d.n; ++nn)
            for (int64_t c = 0; c < d.cin; ++c)
                for (int64_t z = 0; z < xs[2]; ++z)
                    for (int64_t yy = 0; yy < xs[3]; ++yy) {
                        const T* srow = src.ptr() +
                                        (((nn * d.cin + c) * xs[2] + z) * xs[3] + yy) * xs[4];
                        T* drow = xp.ptr() +
                                  (((nn * d.cin + c) * d.dp + z + padding) * d.hp + yy + padding) *
                                      d.wp +
                                  padding;
                        std::copy_n(srow, xs[4], drow);
                    }
        return xp;
    };

    TensorT<T> xp = pad_input(x->value);
    TensorT<T> out(Shape{d.n, d.cout, d.od, d.oh, d.ow});
    simd::conv3d_forward(xp.ptr(), w->value.ptr(), b ? b->value.ptr() : nullptr, out.ptr(), d);

    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    auto xp_shared = std::make_shared<TensorT<T>>(std::move(xp));
    Shape in_shape = xs;
    return detail::make_op<T>(
        std::move(out), std::move(parents),
        [x, w, b, d, xp_shared, in_shape, padding](Node<T>& nd) {
            if (w->requires_grad) {
                w->ensure_grad();
                simd::conv3d_backward_weight(xp_shared->ptr(), nd.grad.ptr(), w->grad.ptr(), d);
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                const int64_t ovol = d.od * d.oh * d.ow;
                for (int64_t nn = 0; nn < d.n; ++nn)
                    for (int64_t co = 0; co < d.cout; ++co) {
                        T acc = T(0);
                        const T* g = nd.grad.ptr() + (nn * d.cout + co) * ovol;
                        for (int64_t i = 0; i < ovol; ++i) acc += g[i];
                        b->grad[co] += acc;
                    }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                TensorT<T> gxp(Shape{d.n, d.cin, d.dp, d.hp, d.wp});
                simd::conv3d_backward_input(nd.grad.ptr(), w->value.ptr(), gxp.ptr(), d);
                for (int64_t nn = 0; nn < d.n; ++nn)
                    for (int64_t c = 0; c < d.cin; ++c)
                        for (int64_t z = 0; z < in_shape[2]; ++z)
                            for (int64_t yy = 0; yy < in_shape[3]; ++yy) {
                                const T* srow =
                                    gxp.ptr() +
                                    (((nn * d.cin + c) * d.dp + z + padding) * d.hp + yy +
                                     padding) *
                                        d.wp +
                                    padding;
                                T* drow = x->grad.ptr() +
                                          (((nn * d.cin + c) * in_shape[2] + z) * in_shape[3] +
                                           yy) *
                                              in_shape[4];
                                for (int64_t xx = 0; xx < in_shape[4]; ++xx) drow[xx] += srow[xx];
                            }
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis, max-subtracted.

template <class T>
Var<T> channel_softmax(const Var<T>& x) {
    int64_t n, k, sp;
    detail::ncs(x->value, n, k, sp);
    check_shape(k >= 1, "channel_softmax: need K >= 1 channels");
    TensorT<T> out(x->value.shape);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t u = 0; u < sp; ++u) {
            const int64_t base = b * k * sp + u;
            T mx = x->value[base];
            for (int64_t c = 1; c < k; ++c) mx = std::max(mx, x->value[base + c * sp]);
            T denom = T(0);
            for (int64_t c = 0; c < k; ++c) {
                const T e = std::exp(x->value[base + c * sp] - mx);
                out[base + c * sp] = e;
                denom += e;
            }
            for (int64_t c = 0; c < k; ++c) out[base + c * sp] /= denom;
        }
    return detail::make_op<T>(std::move(out), {x}, [x, n, k, sp](Node<T>& nd) {
        x->ensure_grad();
        const TensorT<T>& s = nd.value;
        for (int64_t b = 0; b < n; ++b)
            for (int64_t u = 0; u < sp; ++u) {
                const int64_t base = b * k * sp + u;
                T dot = T(0);
                for (int64_t c = 0; c < k; ++c) dot += nd.grad[base + c * sp] * s[base + c * sp];
                for (int64_t c = 0; c < k; ++c)
                    x->grad[base + c * sp] +=
                        s[base + c * sp] * (nd.grad[base + c * sp] - dot);
            }
    });
}

// ---------------------------------------------------------------------------
// Group normalization over (channels-in-group, spatial) per sample.

template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups,
                  T eps = T(1e-5)) {
    int64_t n, c, sp;
    detail::ncs(x->value, n, c, sp);
    check_shape(c % groups == 0, "group_norm: channels " + std::to_string(c) +
                                     " not divisible by groups " + std::to_string(groups));
    check_shape(gamma->value.shape == Shape({c}) && beta->value.shape == Shape({c}),
                "group_norm: affine params must be [C]");
    const int64_t cg = c / groups;
    const int64_t m = cg * sp;
    TensorT<T> out(x->value.shape);
    TensorT<T> xhat(x->value.shape);
    std::vector<T> inv_std(static_cast<size_t>(n * groups));
    for (int64_t b = 0; b < n; ++b)
        for (int64_t g = 0; g < groups; ++g) {
            const int64_t base = (b * c + g * cg) * sp;
            T mu = T(0);
            for (int64_t i = 0; i < m; ++i) mu += x->value[base + i];
            mu /= static_cast<T>(m);
            T var = T(0);
            for (int64_t i = 0; i < m; ++i) {
                const T dxx = x->value[base + i] - mu;
                var += dxx * dxx;
            }
            var /= static_cast<T>(m);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(b * groups + g)] = is;
            for (int64_t i = 0; i < m; ++i) {
                const T xh = (x->value[base + i] - mu) * is;
                xhat[base + i] = xh;
                const int64_t ch = g * cg + i / sp;
                out[base + i] = xh * gamma->value[ch] + beta->value[ch];
            }
        }
    auto xhat_shared = std::make_shared<TensorT<T>>(std::move(xhat));
    auto is_shared = std::make_shared<std::vector<T>>(std::move(inv_std));
    return detail::make_op<T>(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, n, c, sp, cg, m, groups, xhat_shared, is_shared](Node<T>& nd) {
            const TensorT<T>& xh = *xhat_shared;
            if (gamma->requires_grad || beta->requires_grad) {
                gamma->ensure_grad();
                beta->ensure_grad();
                for (int64_t b = 0; b < n; ++b)
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const int64_t base = (b * c + ch) * sp;
                        T gg = T(0), gb = T(0);
                        for (int64_t i = 0; i < sp; ++i) {
                            gg += nd.grad[base + i] * xh[base + i];
                            gb += nd.grad[base + i];
                        }
                        gamma->grad[ch] += gg;
                        beta->grad[ch] += gb;
                    }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t b = 0; b < n; ++b)
                    for (int64_t g = 0; g < groups; ++g) {
                        const int64_t base = (b * c + g * cg) * sp;
                        const T is = (*is_shared)[static_cast<size_t>(b * groups + g)];
                        T sum_d = T(0), sum_dx = T(0);
                        for (int64_t i = 0; i < m; ++i) {
                            const int64_t ch = g * cg + i / sp;
                            const T dy = nd.grad[base + i] * gamma->value[ch];
                            sum_d += dy;
                            sum_dx += dy * xh[base + i];
                        }
                        const T inv_m = T(1) / static_cast<T>(m);
                        for (int64_t i = 0; i < m; ++i) {
                            const int64_t ch = g * cg + i / sp;
                            const T dy = nd.grad[base + i] * gamma->value[ch];
                            x->grad[base + i] +=
                                is * (dy - inv_m * sum_d - xh[base + i] * inv_m * sum_dx);
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Trilinear upsampling, align-corners=false, clamp-to-edge sampling.

template <class T>
Var<T> trilinear_upsample(const Var<T>& x, int64_t td, int64_t th, int64_t tw) {
    check_shape(x->value.shape.size() == 5, "trilinear_upsample: input must be [N,C,D,H,W]");
    const auto& xs = x->value.shape;
    check_shape(td >= xs[2] && th >= xs[3] && tw >= xs[4],
                "trilinear_upsample: target extents must be >= input extents");
    const int64_t n = xs[0], c = xs[1], id = xs[2], ih = xs[3], iw = xs[4];
    struct AxisW {
        int64_t lo, hi;
        T w1;  // weight of hi; lo gets 1-w1
    };
    auto axis_weights = [](int64_t in, int64_t out) {
        std::vector<AxisW> ws(static_cast<size_t>(out));
        const double s = static_cast<double>(in) / static_cast<double>(out);
        for (int64_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * s - 0.5;
            if (src < 0) src = 0;
            int64_t lo = static_cast<int64_t>(src);
            if (lo > in - 1) lo = in - 1;
            int64_t hi = std::min(lo + 1, in - 1);
            ws[static_cast<size_t>(i)] = {lo, hi, static_cast<T>(src - static_cast<double>(lo))};
        }
        return ws;
    };
    const auto wd = axis_weights(id, td), wh = axis_weights(ih, th), ww = axis_weights(iw, tw);
    TensorT<T> out(Shape{n, c, td, th, tw});
    for (int64_t b = 0; b < n * c; ++b) {
        const T* src = x->value.ptr() + b * id * ih * iw;
        T* dst = out.ptr() + b * td * th * tw;
        for (int64_t z = 0; z < td; ++z)
            for (int64_t y = 0; y < th; ++y)
                for (int64_t xx = 0; xx < tw; ++xx) {
                    const auto& az = wd[static_cast<size_t>(z)];
                    const auto& ay = wh[static_cast<size_t>(y)];
                    const auto& ax = ww[static_cast<size_t>(xx)];
                    T acc = T(0);
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const T wz = dz ? az.w1 : T(1) - az.w1;
                                const T wy = dy ? ay.w1 : T(1) - ay.w1;
                                const T wx = dx ? ax.w1 : T(1) - ax.w1;
                                const int64_t zi = dz ? az.hi : az.lo;
                                const int64_t yi = dy ? ay.hi : ay.lo;
                                const int64_t xi = dx ? ax.hi : ax.lo;
                                acc += wz * wy * wx * src[(zi * ih + yi) * iw + xi];
                            }
                    dst[(z * th + y) * tw + xx] = acc;
                }
    }
    return detail::make_op<T>(std::move(out), {x},
                              [x, n, c, id, ih, iw, td, th, tw, wd, wh, ww](Node<T>& nd) {
                                  x->ensure_grad();
                                  for (int64_t b = 0; b < n * c; ++b) {
                                      T* gsrc = x->grad.ptr() + b * id * ih * iw;
                                      const T* g = nd.grad.ptr() + b * td * th * tw;
                                      for (int64_t z = 0; z < td; ++z)
                                          for (int64_t y = 0; y < th; ++y)
                                              for (int64_t xx = 0; xx < tw; ++xx) {
                                                  const auto& az = wd[static_cast<size_t>(z)];
                                                  const auto& ay = wh[static_cast<size_t>(y)];
                                                  const auto& ax = ww[static_cast<size_t>(xx)];
                                                  const T gv = g[(z * th + y) * tw + xx];
                                                  for (int dz = 0; dz < 2; ++dz)
                                                      for (int dy = 0; dy < 2; ++dy)
                                                          for (int dx = 0; dx < 2; ++dx) {
                                                              const T wz =
                                                                  dz ? az.w1 : T(1) - az.w1;
                                                              const T wy =
                                                                  dy ? ay.w1 : T(1) - ay.w1;
                                                              const T wx =
                                                                  dx ? ax.w1 : T(1) - ax.w1;
                                                              const int64_t zi =
                                                                  dz ? az.hi : az.lo;
                                                              const int64_t yi =
                                                                  dy ? ay.hi : ay.lo;
                                                              const int64_t xi =
                                                                  dx ? ax.hi : ax.lo;
                                                              gsrc[(zi * ih + yi) * iw + xi] +=
                                                                  wz * wy * wx * gv;
                                                          }
                                              }
                                  }
                              });
}

}  // namespace hds::ad
