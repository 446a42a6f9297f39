#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hiwave/tensor.hpp"

// Reverse-mode rules for every operation the model needs. Broadcasting is
// deliberately minimal: same-shape, scalar-with-tensor, and suffix-shape bias
// addition. Forward passes reject domain violations instead of emitting NaN.

namespace hiwave {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

namespace detail {

inline MutMap grad_map(TensorNode& n, long rows, long cols) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return MutMap(n.grad.data(), rows, cols);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// axis in [-rank, rank)
inline int norm_axis(const Tensor& t, int axis, const char* op) {
    int r = t.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw DimensionError(std::string(op) + ": axis out of range for " + shape_str(t.shape()));
    return axis;
}

struct AxisSplit {
    long outer, n, inner;
};

inline AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    ConstMap A(a.values().data(), m, k), B(b.values().data(), k, n);
    MutMap(out.data(), m, n).noalias() = A * B;

    auto pa = a.node(), pb = b.node();
    return detail::make_result(
        {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](const TensorNode& self) {
            ConstMap G(self.grad.data(), m, n);
            if (pa->requires_grad) {
                ConstMap B(pb->value.data(), k, n);
                detail::grad_map(*pa, m, k).noalias() += G * B.transpose();
            }
            if (pb->requires_grad) {
                ConstMap A(pa->value.data(), m, k);
                detail::grad_map(*pb, k, n).noalias() += A.transpose() * G;
            }
        });
}

// Batched matmul over the leading axis with optional transposition of either
// operand's trailing two axes: out[i] = op(a[i]) * op(b[i]).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw DimensionError("bmm: expected matching 3-d batches, got " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const long batch = a.dim(0);
    const long m = trans_a ? a.dim(2) : a.dim(1);
    const long k = trans_a ? a.dim(1) : a.dim(2);
    const long kb = trans_b ? b.dim(2) : b.dim(1);
    const long n = trans_b ? b.dim(1) : b.dim(2);
    if (k != kb)
        throw DimensionError("bmm: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));

    std::vector<double> out(static_cast<std::size_t>(batch * m * n));
    const long sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2);
    for (long i = 0; i < batch; ++i) {
        ConstMap A(a.values().data() + i * sa, a.dim(1), a.dim(2));
        ConstMap B(b.values().data() + i * sb, b.dim(1), b.dim(2));
        MutMap C(out.data() + i * m * n, m, n);
        if (!trans_a && !trans_b)
            C.noalias() = A * B;
        else if (trans_a && !trans_b)
            C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
    }

    auto pa = a.node(), pb = b.node();
    return detail::make_result(
        {batch, m, n}, std::move(out), {pa, pb},
        [pa, pb, batch, m, n, sa, sb, trans_a, trans_b](const TensorNode& self) {
            for (long i = 0; i < batch; ++i) {
                ConstMap G(self.grad.data() + i * m * n, m, n);
                ConstMap A(pa->value.data() + i * sa, pa->shape[1], pa->shape[2]);
                ConstMap B(pb->value.data() + i * sb, pb->shape[1], pb->shape[2]);
                if (pa->requires_grad) {
                    if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0);
                    MutMap dA(pa->grad.data() + i * sa, pa->shape[1], pa->shape[2]);
                    if (!trans_a && !trans_b)
                        dA.noalias() += G * B.transpose();
                    else if (!trans_a && trans_b)
                        dA.noalias() += G * B;
                    else if (trans_a && !trans_b)
                        dA.noalias() += B * G.transpose();
                    else
                        dA.noalias() += B.transpose() * G.transpose();
                }
                if (pb->requires_grad) {
                    if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
                    MutMap dB(pb->grad.data() + i * sb, pb->shape[1], pb->shape[2]);
                    if (!trans_a && !trans_b)
                        dB.noalias() += A.transpose() * G;
                    else if (trans_a && !trans_b)
                        dB.noalias() += A * G;
                    else if (!trans_a && trans_b)
                        dB.noalias() += G.transpose() * A;
                    else
                        dB.noalias() += G.transpose() * A.transpose();
                }
            }
        });
}

// ---------------------------------------------------------------------------
// elementwise binary ops (same shape, or scalar on either side)
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { same, a_scalar, b_scalar };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (a.numel() == 1) return Bcast::a_scalar;
    if (b.numel() == 1) return Bcast::b_scalar;
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " (only same-shape or scalar broadcast)");
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    auto kind = detail::bcast_kind(a, b, "add");
    const Tensor& big = (kind == detail::Bcast::a_scalar) ? b : a;
    const long n = big.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (long i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            (kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)]) +
            (kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)]);

    auto pa = a.node(), pb = b.node();
    return detail::make_result(big.shape(), std::move(out), {pa, pb},
                               [pa, pb, kind, n](const TensorNode& self) {
                                   const auto& g = self.grad;
                                   if (pa->requires_grad) {
                                       if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0);
                                       if (kind == detail::Bcast::a_scalar)
                                           for (long i = 0; i < n; ++i) pa->grad[0] += g[static_cast<std::size_t>(i)];
                                       else
                                           for (long i = 0; i < n; ++i) pa->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                                   }
                                   if (pb->requires_grad) {
                                       if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
                                       if (kind == detail::Bcast::b_scalar)
                                           for (long i = 0; i < n; ++i) pb->grad[0] += g[static_cast<std::size_t>(i)];
                                       else
                                           for (long i = 0; i < n; ++i) pb->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                                   }
                               });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    auto kind = detail::bcast_kind(a, b, "sub");
    const Tensor& big = (kind == detail::Bcast::a_scalar) ? b : a;
    const long n = big.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (long i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            (kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)]) -
            (kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)]);

    auto pa = a.node(), pb = b.node();
    return detail::make_result(big.shape(), std::move(out), {pa, pb},
                               [pa, pb, kind, n](const TensorNode& self) {
                                   const auto& g = self.grad;
                                   if (pa->requires_grad) {
                                       if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0);
                                       if (kind == detail::Bcast::a_scalar)
                                           for (long i = 0; i < n; ++i) pa->grad[0] += g[static_cast<std::size_t>(i)];
                                       else
                                           for (long i = 0; i < n; ++i) pa->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                                   }
                                   if (pb->requires_grad) {
                                       if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
                                       if (kind == detail::Bcast::b_scalar)
                                           for (long i = 0; i < n; ++i) pb->grad[0] -= g[static_cast<std::size_t>(i)];
                                       else
                                           for (long i = 0; i < n; ++i) pb->grad[static_cast<std::size_t>(i)] -= g[static_cast<std::size_t>(i)];
                                   }
                               });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    auto kind = detail::bcast_kind(a, b, "mul");
    const Tensor& big = (kind == detail::Bcast::a_scalar) ? b : a;
    const long n = big.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (long i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            (kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)]) *
            (kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)]);

    auto pa = a.node(), pb = b.node();
    return detail::make_result(
        big.shape(), std::move(out), {pa, pb}, [pa, pb, kind, n](const TensorNode& self) {
            const auto& g = self.grad;
            const auto& av = pa->value;
            const auto& bv = pb->value;
            if (pa->requires_grad) {
                if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0);
                if (kind == detail::Bcast::a_scalar)
                    for (long i = 0; i < n; ++i)
                        pa->grad[0] += g[static_cast<std::size_t>(i)] * bv[static_cast<std::size_t>(i)];
                else
                    for (long i = 0; i < n; ++i)
                        pa->grad[static_cast<std::size_t>(i)] +=
                            g[static_cast<std::size_t>(i)] *
                            (kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)]);
            }
            if (pb->requires_grad) {
                if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
                if (kind == detail::Bcast::b_scalar)
                    for (long i = 0; i < n; ++i)
                        pb->grad[0] += g[static_cast<std::size_t>(i)] * av[static_cast<std::size_t>(i)];
                else
                    for (long i = 0; i < n; ++i)
                        pb->grad[static_cast<std::size_t>(i)] +=
                            g[static_cast<std::size_t>(i)] *
                            (kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)]);
            }
        });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    auto kind = detail::bcast_kind(a, b, "div");
    const Tensor& big = (kind == detail::Bcast::a_scalar) ? b : a;
    const long n = big.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (long i = 0; i < n; ++i) {
        double d = kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)];
        if (d == 0.0) throw NumericError("div: division by zero");
        out[static_cast<std::size_t>(i)] =
            (kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)]) / d;
    }

    auto pa = a.node(), pb = b.node();
    return detail::make_result(
        big.shape(), std::move(out), {pa, pb}, [pa, pb, kind, n](const TensorNode& self) {
            const auto& g = self.grad;
            const auto& av = pa->value;
            const auto& bv = pb->value;
            auto aval = [&](long i) {
                return kind == detail::Bcast::a_scalar ? av[0] : av[static_cast<std::size_t>(i)];
            };
            auto bval = [&](long i) {
                return kind == detail::Bcast::b_scalar ? bv[0] : bv[static_cast<std::size_t>(i)];
            };
            if (pa->requires_grad) {
                if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0);
                for (long i = 0; i < n; ++i) {
                    double d = g[static_cast<std::size_t>(i)] / bval(i);
                    if (kind == detail::Bcast::a_scalar)
                        pa->grad[0] += d;
                    else
                        pa->grad[static_cast<std::size_t>(i)] += d;
                }
            }
            if (pb->requires_grad) {
                if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
                for (long i = 0; i < n; ++i) {
                    double bb = bval(i);
                    double d = -g[static_cast<std::size_t>(i)] * aval(i) / (bb * bb);
                    if (kind == detail::Bcast::b_scalar)
                        pb->grad[0] += d;
                    else
                        pb->grad[static_cast<std::size_t>(i)] += d;
                }
            }
        });
}

inline Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor div(const Tensor& a, double c) { return div(a, Tensor::scalar(c)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return sub(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return div(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }

// Adds v to a along the trailing axes; v.shape must be a suffix of a.shape.
// Covers bias vectors and the positional-encoding table.
inline Tensor broadcast_add(const Tensor& a, const Tensor& v) {
    const auto& as = a.shape();
    const auto& vs = v.shape();
    if (vs.size() > as.size() || !std::equal(vs.rbegin(), vs.rend(), as.rbegin()))
        throw DimensionError("broadcast_add: " + shape_str(vs) + " is not a suffix of " +
                             shape_str(as));
    const long vn = v.numel(), n = a.numel();
    const long reps = n / vn;
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& vv = v.values();
    for (long r = 0; r < reps; ++r) {
        const double* src = av.data() + r * vn;
        double* dst = out.data() + r * vn;
        for (long i = 0; i < vn; ++i) dst[i] = src[i] + vv[static_cast<std::size_t>(i)];
    }

    auto pa = a.node(), pv = v.node();
    return detail::make_result(a.shape(), std::move(out), {pa, pv},
                               [pa, pv, n, vn, reps](const TensorNode& self) {
                                   const auto& g = self.grad;
                                   if (pa->requires_grad) pa->accum_grad(g.data(), n);
                                   if (pv->requires_grad) {
                                       if (pv->grad.empty()) pv->grad.assign(pv->value.size(), 0.0);
                                       for (long r = 0; r < reps; ++r) {
                                           const double* src = g.data() + r * vn;
                                           for (long i = 0; i < vn; ++i)
                                               pv->grad[static_cast<std::size_t>(i)] += src[i];
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& t, Fwd fwd, Bwd bwd) {
    const long n = t.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& tv = t.values();
    for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(tv[static_cast<std::size_t>(i)]);

    auto p = t.node();
    auto saved = std::make_shared<std::vector<double>>(out);  // y, for rules written in terms of output
    return make_result(t.shape(), std::move(out), {p}, [p, n, bwd, saved](const TensorNode& self) {
        if (!p->requires_grad) return;
        if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
        const auto& g = self.grad;
        for (long i = 0; i < n; ++i)
            p->grad[static_cast<std::size_t>(i)] +=
                g[static_cast<std::size_t>(i)] *
                bwd(p->value[static_cast<std::size_t>(i)], (*saved)[static_cast<std::size_t>(i)]);
    });
}

}  // namespace detail

inline Tensor abs(const Tensor& t) {
    // subgradient at 0 is 0
    return detail::unary_op(
        t, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor exp(const Tensor& t) {
    return detail::unary_op(t, [](double x) { return std::exp(x); },
                            [](double, double y) { return y; });
}

inline Tensor log(const Tensor& t) {
    for (double x : t.values())
        if (x <= 0.0) throw NumericError("log: non-positive input " + std::to_string(x));
    return detail::unary_op(t, [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}

inline Tensor gelu(const Tensor& t) {
    // exact form: 0.5 x (1 + erf(x / sqrt(2))); the derivative is computed
    // alongside the forward pass so backward is a plain multiply
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    const long n = t.numel();
    const auto& tv = t.values();
    std::vector<double> out(static_cast<std::size_t>(n));
    auto deriv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        const double x = tv[static_cast<std::size_t>(i)];
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        out[static_cast<std::size_t>(i)] = x * cdf;
        (*deriv)[static_cast<std::size_t>(i)] = cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    }
    auto p = t.node();
    return detail::make_result(t.shape(), std::move(out), {p},
                               [p, n, deriv](const TensorNode& self) {
                                   if (!p->requires_grad) return;
                                   if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                   const auto& g = self.grad;
                                   for (long i = 0; i < n; ++i)
                                       p->grad[static_cast<std::size_t>(i)] +=
                                           g[static_cast<std::size_t>(i)] * (*deriv)[static_cast<std::size_t>(i)];
                               });
}

inline Tensor clamp(const Tensor& t, double lo, double hi) {
    return detail::unary_op(
        t, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// t^e for e a scalar tensor or same-shape tensor; both sides differentiable.
// Requires t >= 0, and t > 0 wherever e <= 0.
inline Tensor pow(const Tensor& t, const Tensor& e) {
    auto kind = detail::bcast_kind(t, e, "pow");
    if (kind == detail::Bcast::a_scalar && t.numel() != e.numel())
        throw DimensionError("pow: scalar base with tensor exponent is unsupported");
    const long n = t.numel();
    const auto& tv = t.values();
    const auto& ev = e.values();
    auto eval = [&](long i) {
        return kind == detail::Bcast::b_scalar ? ev[0] : ev[static_cast<std::size_t>(i)];
    };
    std::vector<double> out(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        double x = tv[static_cast<std::size_t>(i)], p = eval(i);
        if (x < 0.0) throw NumericError("pow: negative base " + std::to_string(x));
        if (x == 0.0 && p <= 0.0) throw NumericError("pow: 0 raised to non-positive exponent");
        out[static_cast<std::size_t>(i)] = std::pow(x, p);
    }

    auto pt = t.node(), pe = e.node();
    return detail::make_result(
        t.shape(), std::move(out), {pt, pe}, [pt, pe, kind, n](const TensorNode& self) {
            const auto& g = self.grad;
            const auto& tv = pt->value;
            const auto& ev = pe->value;
            auto eval = [&](long i) {
                return kind == detail::Bcast::b_scalar ? ev[0] : ev[static_cast<std::size_t>(i)];
            };
            if (pt->requires_grad) {
                if (pt->grad.empty()) pt->grad.assign(pt->value.size(), 0.0);
                for (long i = 0; i < n; ++i) {
                    double x = tv[static_cast<std::size_t>(i)], p = eval(i);
                    double d = (x == 0.0) ? (p == 1.0 ? 1.0 : 0.0) : p * std::pow(x, p - 1.0);
                    pt->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * d;
                }
            }
            if (pe->requires_grad) {
                if (pe->grad.empty()) pe->grad.assign(pe->value.size(), 0.0);
                for (long i = 0; i < n; ++i) {
                    double x = tv[static_cast<std::size_t>(i)], p = eval(i);
                    double d = (x == 0.0) ? 0.0 : std::pow(x, p) * std::log(x);
                    if (kind == detail::Bcast::b_scalar)
                        pe->grad[0] += g[static_cast<std::size_t>(i)] * d;
                    else
                        pe->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * d;
                }
            }
        });
}

inline Tensor pow(const Tensor& t, double e) { return pow(t, Tensor::scalar(e)); }

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& t, int axis, bool keepdim = false) {
    axis = detail::norm_axis(t, axis, "sum");
    auto sp = detail::split_at(t.shape(), axis);
    Shape out_shape = t.shape();
    if (keepdim)
        out_shape[static_cast<std::size_t>(axis)] = 1;
    else
        out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};

    std::vector<double> out(static_cast<std::size_t>(sp.outer * sp.inner), 0.0);
    const auto& tv = t.values();
    for (long o = 0; o < sp.outer; ++o)
        for (long j = 0; j < sp.n; ++j)
            for (long i = 0; i < sp.inner; ++i)
                out[static_cast<std::size_t>(o * sp.inner + i)] +=
                    tv[static_cast<std::size_t>((o * sp.n + j) * sp.inner + i)];

    auto p = t.node();
    return detail::make_result(std::move(out_shape), std::move(out), {p},
                               [p, sp](const TensorNode& self) {
                                   if (!p->requires_grad) return;
                                   if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                   const auto& g = self.grad;
                                   for (long o = 0; o < sp.outer; ++o)
                                       for (long j = 0; j < sp.n; ++j)
                                           for (long i = 0; i < sp.inner; ++i)
                                               p->grad[static_cast<std::size_t>((o * sp.n + j) * sp.inner + i)] +=
                                                   g[static_cast<std::size_t>(o * sp.inner + i)];
                               });
}

inline Tensor mean(const Tensor& t, int axis, bool keepdim = false) {
    axis = detail::norm_axis(t, axis, "mean");
    const double n = static_cast<double>(t.dim(axis));
    return mul(sum(t, axis, keepdim), 1.0 / n);
}

inline Tensor sum_all(const Tensor& t) {
    const long n = t.numel();
    double acc = 0.0;
    for (double x : t.values()) acc += x;
    auto p = t.node();
    return detail::make_result({1}, {acc}, {p}, [p, n](const TensorNode& self) {
        if (!p->requires_grad) return;
        if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
        for (long i = 0; i < n; ++i) p->grad[static_cast<std::size_t>(i)] += self.grad[0];
    });
}

inline Tensor mean_all(const Tensor& t) { return mul(sum_all(t), 1.0 / static_cast<double>(t.numel())); }

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& t, Shape shape) {
    if (numel_of(shape) != t.numel())
        throw DimensionError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                             shape_str(shape));
    auto p = t.node();
    const long n = t.numel();
    std::vector<double> out = t.values();
    return detail::make_result(std::move(shape), std::move(out), {p},
                               [p, n](const TensorNode& self) {
                                   if (p->requires_grad) p->accum_grad(self.grad.data(), n);
                               });
}

namespace detail {

// Swap of two adjacent middle axes with contiguous rows, [A, B, C, D] ->
// [A, C, B, D]; covers the attention head split/merge without index math.
inline void swap_middle(const double* in, double* out, long A, long B, long C, long D,
                        bool accumulate) {
    for (long a = 0; a < A; ++a)
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c) {
                const double* src = in + ((a * B + b) * C + c) * D;
                double* dst = out + ((a * C + c) * B + b) * D;
                if (accumulate)
                    for (long d = 0; d < D; ++d) dst[d] += src[d];
                else
                    std::copy_n(src, D, dst);
            }
}

}  // namespace detail

// General axis permutation. out[perm-applied index] = in[index].
inline Tensor transpose(const Tensor& t, const std::vector<int>& perm) {
    const int r = t.rank();
    if (static_cast<int>(perm.size()) != r)
        throw DimensionError("transpose: permutation rank mismatch for " + shape_str(t.shape()));
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = t.dim(perm[static_cast<std::size_t>(i)]);

    const long n = t.numel();
    auto p = t.node();

    if (r == 4 && perm == std::vector<int>{0, 2, 1, 3}) {
        const long A = t.dim(0), B = t.dim(1), C = t.dim(2), D = t.dim(3);
        std::vector<double> out(static_cast<std::size_t>(n));
        detail::swap_middle(t.values().data(), out.data(), A, B, C, D, false);
        return detail::make_result(std::move(out_shape), std::move(out), {p},
                                   [p, A, B, C, D](const TensorNode& self) {
                                       if (!p->requires_grad) return;
                                       if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                       // inverse is the same swap with B and C exchanged
                                       detail::swap_middle(self.grad.data(), p->grad.data(), A, C,
                                                           B, D, true);
                                   });
    }

    auto in_strides = strides_of(t.shape());
    auto out_strides = strides_of(out_shape);
    // stride of output axis i in the input layout
    std::vector<long> gather(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) gather[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& tv = t.values();
    for (long flat = 0; flat < n; ++flat) {
        long src = 0, rem = flat;
        for (int i = 0; i < r; ++i) {
            long q = rem / out_strides[static_cast<std::size_t>(i)];
            rem -= q * out_strides[static_cast<std::size_t>(i)];
            src += q * gather[static_cast<std::size_t>(i)];
        }
        out[static_cast<std::size_t>(flat)] = tv[static_cast<std::size_t>(src)];
    }

    return detail::make_result(std::move(out_shape), std::move(out), {p},
                               [p, gather, out_strides, n, r](const TensorNode& self) {
                                   if (!p->requires_grad) return;
                                   if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                   for (long flat = 0; flat < n; ++flat) {
                                       long src = 0, rem = flat;
                                       for (int i = 0; i < r; ++i) {
                                           long q = rem / out_strides[static_cast<std::size_t>(i)];
                                           rem -= q * out_strides[static_cast<std::size_t>(i)];
                                           src += q * gather[static_cast<std::size_t>(i)];
                                       }
                                       p->grad[static_cast<std::size_t>(src)] += self.grad[static_cast<std::size_t>(flat)];
                                   }
                               });
}

inline Tensor transpose2d(const Tensor& t) { return transpose(t, {1, 0}); }

inline Tensor slice(const Tensor& t, int axis, long start, long len) {
    axis = detail::norm_axis(t, axis, "slice");
    if (start < 0 || len <= 0 || start + len > t.dim(axis))
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for " +
                             shape_str(t.shape()));
    auto sp = detail::split_at(t.shape(), axis);
    Shape out_shape = t.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;

    std::vector<double> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
    const auto& tv = t.values();
    for (long o = 0; o < sp.outer; ++o)
        for (long j = 0; j < len; ++j)
            std::copy_n(tv.data() + ((o * sp.n + start + j) * sp.inner), sp.inner,
                        out.data() + ((o * len + j) * sp.inner));

    auto p = t.node();
    return detail::make_result(std::move(out_shape), std::move(out), {p},
                               [p, sp, start, len](const TensorNode& self) {
                                   if (!p->requires_grad) return;
                                   if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                   for (long o = 0; o < sp.outer; ++o)
                                       for (long j = 0; j < len; ++j) {
                                           const double* g = self.grad.data() + (o * len + j) * sp.inner;
                                           double* dst = p->grad.data() + (o * sp.n + start + j) * sp.inner;
                                           for (long i = 0; i < sp.inner; ++i) dst[i] += g[i];
                                       }
                               });
}

inline Tensor concat(const std::vector<Tensor>& ts, int axis) {
    if (ts.empty()) throw DimensionError("concat: empty input list");
    axis = detail::norm_axis(ts[0], axis, "concat");
    Shape out_shape = ts[0].shape();
    long total = 0;
    for (const auto& t : ts) {
        if (t.rank() != ts[0].rank())
            throw DimensionError("concat: rank mismatch");
        for (int i = 0; i < t.rank(); ++i)
            if (i != axis && t.dim(i) != ts[0].dim(i))
                throw DimensionError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                                     shape_str(ts[0].shape()));
        total += t.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total;

    auto sp0 = detail::split_at(ts[0].shape(), axis);
    const long outer = sp0.outer, inner = sp0.inner;
    std::vector<double> out(static_cast<std::size_t>(outer * total * inner));
    std::vector<long> sizes;
    long off = 0;
    for (const auto& t : ts) {
        const long nj = t.dim(axis);
        sizes.push_back(nj);
        const auto& tv = t.values();
        for (long o = 0; o < outer; ++o)
            std::copy_n(tv.data() + o * nj * inner, nj * inner,
                        out.data() + (o * total + off) * inner);
        off += nj;
    }

    std::vector<std::shared_ptr<TensorNode>> parents;
    parents.reserve(ts.size());
    for (const auto& t : ts) parents.push_back(t.node());
    auto parents_copy = parents;
    return detail::make_result(
        std::move(out_shape), std::move(out), std::move(parents),
        [parents_copy, sizes, outer, inner, total](const TensorNode& self) {
            long off = 0;
            for (std::size_t k = 0; k < parents_copy.size(); ++k) {
                auto& p = *parents_copy[k];
                const long nj = sizes[k];
                if (p.requires_grad) {
                    if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
                    for (long o = 0; o < outer; ++o) {
                        const double* g = self.grad.data() + (o * total + off) * inner;
                        double* dst = p.grad.data() + o * nj * inner;
                        for (long i = 0; i < nj * inner; ++i) dst[i] += g[i];
                    }
                }
                off += nj;
            }
        });
}

// Repeats t n times along a new leading axis; backward sums over it.
inline Tensor tile(const Tensor& t, long n) {
    Shape out_shape;
    out_shape.push_back(n);
    out_shape.insert(out_shape.end(), t.shape().begin(), t.shape().end());
    const long m = t.numel();
    std::vector<double> out(static_cast<std::size_t>(n * m));
    for (long i = 0; i < n; ++i) std::copy_n(t.values().data(), m, out.data() + i * m);

    auto p = t.node();
    return detail::make_result(std::move(out_shape), std::move(out), {p},
                               [p, n, m](const TensorNode& self) {
                                   if (!p->requires_grad) return;
                                   if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
                                   for (long i = 0; i < n; ++i)
                                       for (long j = 0; j < m; ++j)
                                           p->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i * m + j)];
                               });
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& t, int axis) {
    axis = detail::norm_axis(t, axis, "softmax");
    auto sp = detail::split_at(t.shape(), axis);
    const auto& tv = t.values();
    std::vector<double> out(tv.size());
    for (long o = 0; o < sp.outer; ++o)
        for (long i = 0; i < sp.inner; ++i) {
            const long base = o * sp.n * sp.inner + i;
            double mx = tv[static_cast<std::size_t>(base)];
            for (long j = 1; j < sp.n; ++j)
                mx = std::max(mx, tv[static_cast<std::size_t>(base + j * sp.inner)]);
            double z = 0.0;
            for (long j = 0; j < sp.n; ++j) {
                double e = std::exp(tv[static_cast<std::size_t>(base + j * sp.inner)] - mx);
                out[static_cast<std::size_t>(base + j * sp.inner)] = e;
                z += e;
            }
            for (long j = 0; j < sp.n; ++j) out[static_cast<std::size_t>(base + j * sp.inner)] /= z;
        }

    auto p = t.node();
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_result(t.shape(), std::move(out), {p}, [p, sp, y](const TensorNode& self) {
        if (!p->requires_grad) return;
        if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
        const auto& g = self.grad;
        for (long o = 0; o < sp.outer; ++o)
            for (long i = 0; i < sp.inner; ++i) {
                const long base = o * sp.n * sp.inner + i;
                double dot = 0.0;
                for (long j = 0; j < sp.n; ++j) {
                    const auto k = static_cast<std::size_t>(base + j * sp.inner);
                    dot += g[k] * (*y)[k];
                }
                for (long j = 0; j < sp.n; ++j) {
                    const auto k = static_cast<std::size_t>(base + j * sp.inner);
                    p->grad[k] += (g[k] - dot) * (*y)[k];
                }
            }
    });
}

// Normalizes over the last axis, then applies elementwise affine gain/bias.
inline Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const long d = t.dim(t.rank() - 1);
    if (gain.numel() != d || bias.numel() != d)
        throw DimensionError("layer_norm: affine params must have length " + std::to_string(d));
    const long rows = t.numel() / d;
    const auto& tv = t.values();
    std::vector<double> out(tv.size());
    auto xhat = std::make_shared<std::vector<double>>(tv.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (long r = 0; r < rows; ++r) {
        const double* x = tv.data() + r * d;
        double mu = 0.0;
        for (long j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (long j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (long j = 0; j < d; ++j) {
            double xh = (x[j] - mu) * is;
            (*xhat)[static_cast<std::size_t>(r * d + j)] = xh;
            out[static_cast<std::size_t>(r * d + j)] = xh * gain.values()[static_cast<std::size_t>(j)] +
                                                       bias.values()[static_cast<std::size_t>(j)];
        }
    }

    auto pt = t.node(), pg = gain.node(), pb = bias.node();
    return detail::make_result(
        t.shape(), std::move(out), {pt, pg, pb},
        [pt, pg, pb, rows, d, xhat, inv_std](const TensorNode& self) {
            const auto& g = self.grad;
            if (pg->requires_grad && pg->grad.empty()) pg->grad.assign(pg->value.size(), 0.0);
            if (pb->requires_grad && pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0);
            if (pt->requires_grad && pt->grad.empty()) pt->grad.assign(pt->value.size(), 0.0);
            for (long r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (pg->requires_grad)
                    for (long j = 0; j < d; ++j) pg->grad[static_cast<std::size_t>(j)] += gr[j] * xh[j];
                if (pb->requires_grad)
                    for (long j = 0; j < d; ++j) pb->grad[static_cast<std::size_t>(j)] += gr[j];
                if (pt->requires_grad) {
                    // dx = inv_std * (dxh - mean(dxh) - xh * mean(dxh * xh))
                    double m1 = 0.0, m2 = 0.0;
                    const double is = (*inv_std)[static_cast<std::size_t>(r)];
                    for (long j = 0; j < d; ++j) {
                        double dxh = gr[j] * pg->value[static_cast<std::size_t>(j)];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (long j = 0; j < d; ++j) {
                        double dxh = gr[j] * pg->value[static_cast<std::size_t>(j)];
                        pt->grad[static_cast<std::size_t>(r * d + j)] += is * (dxh - m1 - xh[j] * m2);
                    }
                }
            }
        });
}

}  // namespace hiwave
