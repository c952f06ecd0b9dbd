#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "xp/tensor.hpp"

namespace xp {

namespace detail {

struct BroadcastPlan {
    Shape out;
    // element strides into each input for every output axis; 0 where broadcast
    std::vector<std::size_t> sa, sb;
};

inline BroadcastPlan broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan p;
    std::size_t nd = std::max(a.size(), b.size());
    p.out.resize(nd);
    Shape ea(nd, 1), eb(nd, 1);
    std::copy(a.begin(), a.end(), ea.begin() + (nd - a.size()));
    std::copy(b.begin(), b.end(), eb.begin() + (nd - b.size()));
    for (std::size_t i = 0; i < nd; ++i) {
        if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
            throw std::invalid_argument(std::string("xp: ") + op + ": cannot broadcast " +
                                        shape_str(a) + " with " + shape_str(b));
        p.out[i] = std::max(ea[i], eb[i]);
    }
    auto stra = row_major_strides(ea), strb = row_major_strides(eb);
    p.sa.resize(nd);
    p.sb.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        p.sa[i] = ea[i] == 1 ? 0 : stra[i];
        p.sb[i] = eb[i] == 1 ? 0 : strb[i];
    }
    return p;
}

// Odometer walk over an output shape tracking offsets into two operands.
template <class F>
void bcast_apply(const BroadcastPlan& p, F&& f) {
    std::size_t n = numel(p.out), nd = p.out.size();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (std::size_t ax = nd; ax-- > 0;) {
            ++idx[ax];
            oa += p.sa[ax];
            ob += p.sb[ax];
            if (idx[ax] < p.out[ax]) break;
            oa -= p.sa[ax] * p.out[ax];
            ob -= p.sb[ax] * p.out[ax];
            idx[ax] = 0;
        }
    }
}

// C(m,n) += A(m,k) * B(k,n)
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double a = A[i * k + kk];
            const double* br = B + kk * n;
            double* cr = C + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += a * br[j];
        }
}

// C(m,n) += A(m,k) * B(n,k)^T
inline void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double* ar = A + i * k;
            const double* br = B + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += ar[kk] * br[kk];
            C[i * n + j] += s;
        }
}

// C(k,n) += A(m,k)^T * B(m,n)
inline void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double a = A[i * k + kk];
            const double* br = B + i * n;
            double* cr = C + kk * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += a * br[j];
        }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Sub, Mul };

inline Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
    BroadcastPlan p = broadcast_shapes(name, a.shape(), b.shape());
    std::vector<double> out(numel(p.out));
    const auto& av = a.data();
    const auto& bv = b.data();
    switch (kind) {
        case BinKind::Add:
            bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = av[oa] + bv[ob]; });
            break;
        case BinKind::Sub:
            bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = av[oa] - bv[ob]; });
            break;
        case BinKind::Mul:
            bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = av[oa] * bv[ob]; });
            break;
    }
    return make_result(name, p.out, std::move(out), {a, b}, [&](TensorNode* n) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        n->backward_fn = [n, an, bn, p, kind]() {
            const auto& g = n->grad;
            if (an->requires_grad) {
                std::vector<double> ga(an->size(), 0.0);
                if (kind == BinKind::Mul) {
                    bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                        ga[oa] += g[i] * bn->value[ob];
                    });
                } else {
                    bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t) { ga[oa] += g[i]; });
                }
                an->accumulate(ga.data(), ga.size());
            }
            if (bn->requires_grad) {
                std::vector<double> gb(bn->size(), 0.0);
                switch (kind) {
                    case BinKind::Add:
                        bcast_apply(p, [&](std::size_t i, std::size_t, std::size_t ob) { gb[ob] += g[i]; });
                        break;
                    case BinKind::Sub:
                        bcast_apply(p, [&](std::size_t i, std::size_t, std::size_t ob) { gb[ob] -= g[i]; });
                        break;
                    case BinKind::Mul:
                        bcast_apply(p, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                            gb[ob] += g[i] * an->value[oa];
                        });
                        break;
                }
                bn->accumulate(gb.data(), gb.size());
            }
        };
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op("add", detail::BinKind::Add, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op("sub", detail::BinKind::Sub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op("mul", detail::BinKind::Mul, a, b);
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return make_result("scalar_mul", a.shape(), std::move(out), {a}, [&](TensorNode* n) {
        TensorNode* an = a.node().get();
        n->backward_fn = [n, an, c]() {
            std::vector<double> ga(n->grad.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = n->grad[i] * c;
            an->accumulate(ga.data(), ga.size());
        };
    });
}

inline Tensor scalar_add(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    return make_result("scalar_add", a.shape(), std::move(out), {a}, [&](TensorNode* n) {
        TensorNode* an = a.node().get();
        n->backward_fn = [n, an]() { an->accumulate(n->grad.data(), n->grad.size()); };
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class FwdF, class BwdF>
Tensor unary_op(const char* name, const Tensor& a, FwdF fwd, BwdF dydx) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    return make_result(name, a.shape(), std::move(out), {a}, [&](TensorNode* n) {
        TensorNode* an = a.node().get();
        n->backward_fn = [n, an, dydx]() {
            std::vector<double> ga(n->grad.size());
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] = n->grad[i] * dydx(an->value[i], n->value[i]);
            an->accumulate(ga.data(), ga.size());
        };
    });
}

}  // namespace detail

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

// |x| with subgradient 0 at the kink.
inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor relu_t(const Tensor& a) {
    return detail::unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// sqrt with d/dx defined as 0 at x == 0, so all-zero L2 groups get zero gradient.
inline Tensor sqrt_t(const Tensor& a) {
    for (double v : a.data())
        if (v < 0.0) throw std::invalid_argument("xp: sqrt of negative value");
    return detail::unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y == 0.0 ? 0.0 : 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// Batched matmul: a (..., m, k) x b (..., k, n). Leading batch dims must match
// exactly, or either operand may be rank-2 and broadcasts across the other's
// batch. Accumulation order over k is ascending everywhere, so algebraically
// equal routes produce bitwise-equal results.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw std::invalid_argument("xp: matmul requires rank >= 2, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    Shape ba(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    std::size_t m = a.shape()[a.ndim() - 2], k = a.shape()[a.ndim() - 1];
    std::size_t k2 = b.shape()[b.ndim() - 2], n = b.shape()[b.ndim() - 1];
    if (k != k2)
        throw std::invalid_argument("xp: matmul inner dimensions differ: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    bool bcast_a = ba.empty() && !bb.empty();
    bool bcast_b = bb.empty() && !ba.empty();
    if (!bcast_a && !bcast_b && ba != bb)
        throw std::invalid_argument("xp: matmul batch dimensions differ: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    Shape batch = bcast_a ? bb : ba;
    std::size_t nb = numel(batch);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(nb * m * n, 0.0);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    for (std::size_t i = 0; i < nb; ++i)
        detail::gemm_nn(ap + (bcast_a ? 0 : i * m * k), bp + (bcast_b ? 0 : i * k * n),
                        out.data() + i * m * n, m, k, n);
    return make_result("matmul", out_shape, std::move(out), {a, b}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        node->backward_fn = [node, an, bn, nb, m, k, n, bcast_a, bcast_b]() {
            const double* g = node->grad.data();
            if (an->requires_grad) {
                std::vector<double> ga(an->size(), 0.0);
                for (std::size_t i = 0; i < nb; ++i)
                    detail::gemm_nt(g + i * m * n, bn->value.data() + (bcast_b ? 0 : i * k * n),
                                    ga.data() + (bcast_a ? 0 : i * m * k), m, n, k);
                an->accumulate(ga.data(), ga.size());
            }
            if (bn->requires_grad) {
                std::vector<double> gb(bn->size(), 0.0);
                for (std::size_t i = 0; i < nb; ++i)
                    detail::gemm_tn(an->value.data() + (bcast_a ? 0 : i * m * k), g + i * m * n,
                                    gb.data() + (bcast_b ? 0 : i * k * n), m, k, n);
                bn->accumulate(gb.data(), gb.size());
            }
        };
    });
}

// y = x W^T + b with x (..., in), W (out, in), b (out) or undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor()) {
    if (x.ndim() < 1 || w.ndim() != 2)
        throw std::invalid_argument("xp: linear expects x (..., in), W (out, in); got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    std::size_t in = x.shape().back(), out_dim = w.shape()[0];
    if (w.shape()[1] != in)
        throw std::invalid_argument("xp: linear input dim mismatch: " + shape_str(x.shape()) +
                                    " vs W " + shape_str(w.shape()));
    if (b.defined() && (b.ndim() != 1 || b.shape()[0] != out_dim))
        throw std::invalid_argument("xp: linear bias shape " + shape_str(b.shape()) +
                                    " does not match out dim " + std::to_string(out_dim));
    std::size_t rows = x.size() / in;
    std::vector<double> out(rows * out_dim, 0.0);
    detail::gemm_nt(x.data().data(), w.data().data(), out.data(), rows, in, out_dim);
    if (b.defined()) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += b.data()[j];
    }
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    std::vector<Tensor> inputs = {x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result("linear", out_shape, std::move(out), inputs, [&](TensorNode* node) {
        TensorNode* xn = x.node().get();
        TensorNode* wn = w.node().get();
        TensorNode* bn = b.defined() ? b.node().get() : nullptr;
        node->backward_fn = [node, xn, wn, bn, rows, in, out_dim]() {
            const double* g = node->grad.data();
            if (xn->requires_grad) {
                std::vector<double> gx(rows * in, 0.0);
                detail::gemm_nn(g, wn->value.data(), gx.data(), rows, out_dim, in);
                xn->accumulate(gx.data(), gx.size());
            }
            if (wn->requires_grad) {
                std::vector<double> gw(out_dim * in, 0.0);
                detail::gemm_tn(g, xn->value.data(), gw.data(), rows, out_dim, in);
                wn->accumulate(gw.data(), gw.size());
            }
            if (bn && bn->requires_grad) {
                std::vector<double> gb(out_dim, 0.0);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                bn->accumulate(gb.data(), gb.size());
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy / layer norm
// ---------------------------------------------------------------------------

inline Tensor softmax_lastdim(const Tensor& a) {
    if (a.ndim() < 1) throw std::invalid_argument("xp: softmax needs rank >= 1");
    std::size_t d = a.shape().back(), rows = a.size() / d;
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data().data() + r * d;
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = std::exp(row[j] - mx);
            sum += out[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= sum;
    }
    return make_result("softmax", a.shape(), std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        node->backward_fn = [node, an, rows, d]() {
            std::vector<double> ga(node->grad.size());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = node->value.data() + r * d;
                const double* g = node->grad.data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) ga[r * d + j] = (g[j] - dot) * y[j];
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

// Mean cross-entropy over the batch, integer labels, log-sum-exp stabilized.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        throw std::invalid_argument("xp: cross_entropy expects logits (batch, classes), got " +
                                    shape_str(logits.shape()));
    std::size_t bsz = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != bsz)
        throw std::invalid_argument("xp: cross_entropy got " + std::to_string(labels.size()) +
                                    " labels for batch " + std::to_string(bsz));
    std::vector<double> probs(bsz * c);
    double loss = 0.0;
    for (std::size_t b = 0; b < bsz; ++b) {
        int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("xp: label " + std::to_string(y) + " out of range [0, " +
                                        std::to_string(c) + ")");
        const double* row = logits.data().data() + b * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[b * c + j] = std::exp(row[j] - mx);
            sum += probs[b * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[b * c + j] /= sum;
        loss += std::log(sum) + mx - row[y];
    }
    loss /= static_cast<double>(bsz);
    return make_result("cross_entropy", Shape{}, {loss}, {logits}, [&](TensorNode* node) {
        TensorNode* ln = logits.node().get();
        auto lbl = labels;
        auto p = std::move(probs);
        node->backward_fn = [node, ln, lbl, p, bsz, c]() {
            double go = node->grad[0] / static_cast<double>(bsz);
            std::vector<double> g(bsz * c);
            for (std::size_t b = 0; b < bsz; ++b)
                for (std::size_t j = 0; j < c; ++j)
                    g[b * c + j] =
                        go * (p[b * c + j] - (static_cast<std::size_t>(lbl[b]) == j ? 1.0 : 0.0));
            ln->accumulate(g.data(), g.size());
        };
    });
}

// Last-axis layer norm with learnable gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    std::size_t d = x.shape().back(), rows = x.size() / d;
    if (gain.size() != d || bias.size() != d)
        throw std::invalid_argument("xp: layer_norm gain/bias must have " + std::to_string(d) +
                                    " entries");
    std::vector<double> out(x.size());
    std::vector<double> rstd(rows), mean(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        double rs = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = (row[j] - mu) * rs * gain.data()[j] + bias.data()[j];
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                       [&](TensorNode* node) {
        TensorNode* xn = x.node().get();
        TensorNode* gn = gain.node().get();
        TensorNode* bn = bias.node().get();
        auto mu = std::move(mean);
        auto rs = std::move(rstd);
        node->backward_fn = [node, xn, gn, bn, mu, rs, rows, d]() {
            const double* g = node->grad.data();
            std::vector<double> gx(xn->requires_grad ? rows * d : 0, 0.0);
            std::vector<double> gg(d, 0.0), gb(d, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = xn->value.data() + r * d;
                const double* gr = g + r * d;
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (xr[j] - mu[r]) * rs[r];
                    double dxhat = gr[j] * gn->value[j];
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                    gg[j] += gr[j] * xhat;
                    gb[j] += gr[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                if (xn->requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) {
                        double xhat = (xr[j] - mu[r]) * rs[r];
                        double dxhat = gr[j] * gn->value[j];
                        gx[r * d + j] = (dxhat - m1 - xhat * m2) * rs[r];
                    }
                }
            }
            if (xn->requires_grad) xn->accumulate(gx.data(), gx.size());
            if (gn->requires_grad) gn->accumulate(gg.data(), gg.size());
            if (bn->requires_grad) bn->accumulate(gb.data(), gb.size());
        };
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor reduce_axes(const char* name, const Tensor& a, std::vector<std::size_t> axes,
                          double scale) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t ax : axes)
        if (ax >= a.ndim())
            throw std::invalid_argument(std::string("xp: ") + name + ": axis out of range for " +
                                        shape_str(a.shape()));
    Shape out_shape;
    std::vector<std::size_t> out_stride_for_axis(a.ndim(), 0);
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (!std::binary_search(axes.begin(), axes.end(), i)) out_shape.push_back(a.shape()[i]);
    auto ost = row_major_strides(out_shape);
    std::size_t oi = 0;
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (!std::binary_search(axes.begin(), axes.end(), i)) out_stride_for_axis[i] = ost[oi++];
    std::vector<double> out(numel(out_shape), 0.0);
    auto ist = row_major_strides(a.shape());
    std::size_t n = a.size(), nd = a.ndim();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[off] += a.data()[i];
        for (std::size_t ax = nd; ax-- > 0;) {
            ++idx[ax];
            off += out_stride_for_axis[ax];
            if (idx[ax] < a.shape()[ax]) break;
            off -= out_stride_for_axis[ax] * a.shape()[ax];
            idx[ax] = 0;
        }
    }
    if (scale != 1.0)
        for (double& v : out) v *= scale;
    (void)ist;
    return make_result(name, out_shape, std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        Shape ashape = a.shape();
        node->backward_fn = [node, an, ashape, out_stride_for_axis, scale]() {
            std::size_t n2 = an->size(), nd2 = ashape.size();
            std::vector<double> ga(n2);
            std::vector<std::size_t> idx2(nd2, 0);
            std::size_t off2 = 0;
            for (std::size_t i = 0; i < n2; ++i) {
                ga[i] = node->grad[off2] * scale;
                for (std::size_t ax = nd2; ax-- > 0;) {
                    ++idx2[ax];
                    off2 += out_stride_for_axis[ax];
                    if (idx2[ax] < ashape[ax]) break;
                    off2 -= out_stride_for_axis[ax] * ashape[ax];
                    idx2[ax] = 0;
                }
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

}  // namespace detail

inline Tensor sum_axes(const Tensor& a, std::vector<std::size_t> axes) {
    return detail::reduce_axes("sum_axes", a, std::move(axes), 1.0);
}

inline Tensor mean_axes(const Tensor& a, std::vector<std::size_t> axes) {
    std::size_t red = 1;
    for (std::size_t ax : axes) red *= a.shape().at(ax);
    return detail::reduce_axes("mean_axes", a, std::move(axes), 1.0 / static_cast<double>(red));
}

inline Tensor reduce_sum(const Tensor& a) {
    std::vector<std::size_t> axes(a.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return detail::reduce_axes("sum", a, std::move(axes), 1.0);
}

inline Tensor reduce_mean(const Tensor& a) {
    std::vector<std::size_t> axes(a.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return detail::reduce_axes("mean", a, std::move(axes), 1.0 / static_cast<double>(a.size()));
}

inline Tensor l1_norm(const Tensor& a) { return reduce_sum(abs_t(a)); }

// ---------------------------------------------------------------------------
// Indexing / structure ops
// ---------------------------------------------------------------------------

// Per-sample class-slice gather: a (C, rest...) + labels (B) -> (B, rest...).
// Adjoint is scatter-add back into the class axis.
inline Tensor gather_class(const Tensor& a, const std::vector<int>& labels) {
    if (a.ndim() < 1) throw std::invalid_argument("xp: gather_class needs a class axis");
    std::size_t c = a.shape()[0], slice = a.size() / std::max<std::size_t>(c, 1);
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("xp: gather_class index " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(c) + ")");
    std::size_t bsz = labels.size();
    Shape out_shape = a.shape();
    out_shape[0] = bsz;
    std::vector<double> out(bsz * slice);
    for (std::size_t b = 0; b < bsz; ++b)
        std::copy_n(a.data().data() + static_cast<std::size_t>(labels[b]) * slice, slice,
                    out.data() + b * slice);
    return make_result("gather_class", out_shape, std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        auto lbl = labels;
        node->backward_fn = [node, an, lbl, slice]() {
            std::vector<double> ga(an->size(), 0.0);
            for (std::size_t b = 0; b < lbl.size(); ++b) {
                const double* g = node->grad.data() + b * slice;
                double* dst = ga.data() + static_cast<std::size_t>(lbl[b]) * slice;
                for (std::size_t i = 0; i < slice; ++i) dst[i] += g[i];
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

// Discrete second difference along axis 0 with replicate padding; output shape
// equals input shape and the map is linear, so the adjoint is its transpose.
inline Tensor second_difference(const Tensor& a) {
    if (a.ndim() < 1) throw std::invalid_argument("xp: second_difference needs rank >= 1");
    std::size_t c = a.shape()[0], slice = a.size() / std::max<std::size_t>(c, 1);
    std::vector<double> out(a.size());
    auto clampi = [c](std::size_t i, long dlt) {
        long j = static_cast<long>(i) + dlt;
        if (j < 0) j = 0;
        if (j >= static_cast<long>(c)) j = static_cast<long>(c) - 1;
        return static_cast<std::size_t>(j);
    };
    for (std::size_t i = 0; i < c; ++i) {
        const double* lo = a.data().data() + clampi(i, -1) * slice;
        const double* mid = a.data().data() + i * slice;
        const double* hi = a.data().data() + clampi(i, +1) * slice;
        double* o = out.data() + i * slice;
        for (std::size_t j = 0; j < slice; ++j) o[j] = lo[j] - 2.0 * mid[j] + hi[j];
    }
    return make_result("second_difference", a.shape(), std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        node->backward_fn = [node, an, c, slice, clampi]() {
            std::vector<double> ga(an->size(), 0.0);
            for (std::size_t i = 0; i < c; ++i) {
                const double* g = node->grad.data() + i * slice;
                double* lo = ga.data() + clampi(i, -1) * slice;
                double* mid = ga.data() + i * slice;
                double* hi = ga.data() + clampi(i, +1) * slice;
                for (std::size_t j = 0; j < slice; ++j) {
                    lo[j] += g[j];
                    mid[j] -= 2.0 * g[j];
                    hi[j] += g[j];
                }
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("xp: reshape " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape) + " changes element count");
    std::vector<double> out = a.data();
    return make_result("reshape", std::move(shape), std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        node->backward_fn = [node, an]() { an->accumulate(node->grad.data(), node->grad.size()); };
    });
}

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
    if (perm.size() != a.ndim())
        throw std::invalid_argument("xp: permute order has wrong length for " +
                                    shape_str(a.shape()));
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw std::invalid_argument("xp: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
    auto ist = row_major_strides(a.shape());
    auto ost = row_major_strides(out_shape);
    // out index i maps to input offset via permuted strides
    std::vector<std::size_t> stride_in_out_order(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) stride_in_out_order[i] = ist[perm[i]];
    std::size_t n = a.size(), nd = perm.size();
    std::vector<double> out(n);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ioff = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a.data()[ioff];
        for (std::size_t ax = nd; ax-- > 0;) {
            ++idx[ax];
            ioff += stride_in_out_order[ax];
            if (idx[ax] < out_shape[ax]) break;
            ioff -= stride_in_out_order[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (void)ost;
    return make_result("permute", out_shape, std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        Shape oshape = out_shape;
        node->backward_fn = [node, an, oshape, stride_in_out_order]() {
            std::vector<double> ga(an->size(), 0.0);
            std::size_t n2 = node->grad.size(), nd2 = oshape.size();
            std::vector<std::size_t> idx2(nd2, 0);
            std::size_t ioff2 = 0;
            for (std::size_t i = 0; i < n2; ++i) {
                ga[ioff2] += node->grad[i];
                for (std::size_t ax = nd2; ax-- > 0;) {
                    ++idx2[ax];
                    ioff2 += stride_in_out_order[ax];
                    if (idx2[ax] < oshape[ax]) break;
                    ioff2 -= stride_in_out_order[ax] * oshape[ax];
                    idx2[ax] = 0;
                }
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

// Removes one axis by selecting a fixed index along it.
inline Tensor select(const Tensor& a, std::size_t axis, std::size_t index) {
    if (axis >= a.ndim() || index >= a.shape()[axis])
        throw std::invalid_argument("xp: select axis/index out of range for " +
                                    shape_str(a.shape()));
    Shape out_shape;
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
    std::size_t len = a.shape()[axis];
    std::vector<double> out(outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data().data() + (o * len + index) * inner, inner, out.data() + o * inner);
    return make_result("select", out_shape, std::move(out), {a}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        node->backward_fn = [node, an, outer, inner, len, index]() {
            std::vector<double> ga(an->size(), 0.0);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* g = node->grad.data() + o * inner;
                double* dst = ga.data() + (o * len + index) * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
            an->accumulate(ga.data(), ga.size());
        };
    });
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
    if (a.ndim() != b.ndim() || axis >= a.ndim())
        throw std::invalid_argument("xp: concat rank/axis mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (i != axis && a.shape()[i] != b.shape()[i])
            throw std::invalid_argument("xp: concat shapes differ off-axis: " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] += b.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
    std::size_t la = a.shape()[axis] * inner, lb = b.shape()[axis] * inner;
    std::vector<double> out(outer * (la + lb));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.data().data() + o * la, la, out.data() + o * (la + lb));
        std::copy_n(b.data().data() + o * lb, lb, out.data() + o * (la + lb) + la);
    }
    return make_result("concat", out_shape, std::move(out), {a, b}, [&](TensorNode* node) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        node->backward_fn = [node, an, bn, outer, la, lb]() {
            if (an->requires_grad) {
                std::vector<double> ga(an->size());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(node->grad.data() + o * (la + lb), la, ga.data() + o * la);
                an->accumulate(ga.data(), ga.size());
            }
            if (bn->requires_grad) {
                std::vector<double> gb(bn->size());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(node->grad.data() + o * (la + lb) + la, lb, gb.data() + o * lb);
                bn->accumulate(gb.data(), gb.size());
            }
        };
    });
}

// L2 norm of each class slice: a (C, rest...) -> (C,). Zero slices get zero
// gradient via the sqrt rule above.
inline Tensor l2_norm_per_class(const Tensor& a) {
    if (a.ndim() < 1) throw std::invalid_argument("xp: l2_norm_per_class needs a class axis");
    std::vector<std::size_t> axes;
    for (std::size_t i = 1; i < a.ndim(); ++i) axes.push_back(i);
    Tensor sq = mul(a, a);
    Tensor ssq = axes.empty() ? sq : sum_axes(sq, axes);
    return sqrt_t(ssq);
}

}  // namespace xp
