#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "hvsr/error.hpp"
#include "hvsr/kernels.hpp"
#include "hvsr/tensor.hpp"

namespace hvsr {

namespace detail {

template <typename T>
inline void vadd(const T* a, const T* b, T* o, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().add(a, b, o, n);
    } else {
        for (int64_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
    }
}

template <typename T>
inline void vadd_inplace(T* a, const T* b, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().add_inplace(a, b, n);
    } else {
        for (int64_t i = 0; i < n; ++i) a[i] += b[i];
    }
}

template <typename T>
inline void vaxpy(T alpha, const T* x, T* y, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().axpy(alpha, x, y, n);
    } else {
        for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
    }
}

template <typename T>
inline void vmul(const T* a, const T* b, T* o, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().mul(a, b, o, n);
    } else {
        for (int64_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
    }
}

template <typename T>
inline void vscale(const T* a, T alpha, T* o, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().scale(a, alpha, o, n);
    } else {
        for (int64_t i = 0; i < n; ++i) o[i] = alpha * a[i];
    }
}

template <typename T>
inline void vfma_scalar(const T* h, const T* g, T alpha, T* o, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::active().fma_scalar(h, g, alpha, o, n);
    } else {
        for (int64_t i = 0; i < n; ++i) o[i] = h[i] + alpha * g[i];
    }
}

template <typename T>
inline double vdot(const T* a, const T* b, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename T>
inline T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline T softplus(T x) {
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Reflected (no edge repeat) source index for convolution padding. Constant
// inputs stay constant through every layer, so patchwise inference on flat
// regions is seam-free.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

// im2col for stride-1 same convolution: (C,H,W) -> (C*kh*kw, H*W).
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int pad, T* col) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    int sy = reflect_index(y + ky - pad, H);
                    const T* src = x + (static_cast<int64_t>(c) * H + sy) * W;
                    T* dst = row + static_cast<int64_t>(y) * W;
                    for (int xx = 0; xx < W; ++xx) dst[xx] = src[reflect_index(xx + kx - pad, W)];
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int pad, T* x) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    int sy = reflect_index(y + ky - pad, H);
                    T* dst = x + (static_cast<int64_t>(c) * H + sy) * W;
                    const T* src = row + static_cast<int64_t>(y) * W;
                    for (int xx = 0; xx < W; ++xx) dst[reflect_index(xx + kx - pad, W)] += src[xx];
                }
            }
        }
    }
}

}  // namespace detail

// Reverse-mode tape over dense tensors. One Graph instance per forward pass;
// ops append nodes, backward() walks the tape in reverse.
template <typename T>
class Graph {
  public:
    using Var = int;

    struct Node {
        Shape shape;
        std::vector<T> val;
        std::vector<T> grad;
        bool requires_grad = false;
        bool touched = false;  // received a nonzero upstream gradient
        std::function<void(Graph&, int)> backward;
    };

    Graph() { nodes_.reserve(1024); }

    int size() const { return static_cast<int>(nodes_.size()); }

    const Shape& shape(Var v) const { return nodes_[static_cast<size_t>(v)].shape; }
    const std::vector<T>& val(Var v) const { return nodes_[static_cast<size_t>(v)].val; }
    std::vector<T>& mutable_val(Var v) { return nodes_[static_cast<size_t>(v)].val; }
    const std::vector<T>& grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v)].requires_grad; }

    T scalar(Var v) const {
        if (nodes_[static_cast<size_t>(v)].val.size() != 1) throw ContractError("scalar() on non-scalar node");
        return nodes_[static_cast<size_t>(v)].val[0];
    }

    Var leaf(const Tensor<T>& t, bool needs_grad) {
        Node n;
        n.shape = t.shape;
        n.val = t.v;
        n.requires_grad = needs_grad;
        if (needs_grad) n.grad.assign(t.v.size(), T(0));
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    Var constant(Shape s, T fill = T(0)) {
        Node n;
        n.shape = std::move(s);
        n.val.assign(static_cast<size_t>(shape_numel(n.shape)), fill);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    Var constant_like(Var v, T fill = T(0)) { return constant(shape(v), fill); }

    // --- elementwise -------------------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        Var out = alloc(shape(a), requires_grad(a) || requires_grad(b));
        detail::vadd(val(a).data(), val(b).data(), node(out).val.data(), numel(out));
        if (node(out).requires_grad) {
            node(out).backward = [a, b](Graph& g, int self) {
                const auto& d = g.grad(self);
                g.accumulate(a, d.data());
                g.accumulate(b, d.data());
            };
        }
        return out;
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        Var out = alloc(shape(a), requires_grad(a) || requires_grad(b));
        const auto& av = val(a);
        const auto& bv = val(b);
        auto& ov = node(out).val;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
        if (node(out).requires_grad) {
            node(out).backward = [a, b](Graph& g, int self) {
                const auto& d = g.grad(self);
                g.accumulate(a, d.data());
                g.accumulate_scaled(b, d.data(), T(-1));
            };
        }
        return out;
    }

    Var mul(Var a, Var b) {
        check_same_shape(a, b, "mul");
        Var out = alloc(shape(a), requires_grad(a) || requires_grad(b));
        detail::vmul(val(a).data(), val(b).data(), node(out).val.data(), numel(out));
        if (node(out).requires_grad) {
            node(out).backward = [a, b](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> tmp(d.size());
                detail::vmul(d.data(), g.val(b).data(), tmp.data(), static_cast<int64_t>(d.size()));
                g.accumulate(a, tmp.data());
                detail::vmul(d.data(), g.val(a).data(), tmp.data(), static_cast<int64_t>(d.size()));
                g.accumulate(b, tmp.data());
            };
        }
        return out;
    }

    Var scale(Var a, T c) {
        Var out = alloc(shape(a), requires_grad(a));
        detail::vscale(val(a).data(), c, node(out).val.data(), numel(out));
        if (node(out).requires_grad) {
            node(out).backward = [a, c](Graph& g, int self) {
                g.accumulate_scaled(a, g.grad(self).data(), c);
            };
        }
        return out;
    }

    // out = h + alpha * g with a scalar (shape {1}) gate variable.
    Var add_gated(Var h, Var gv, Var alpha) {
        check_same_shape(h, gv, "add_gated");
        if (numel(alpha) != 1) throw ContractError("gate must be a scalar tensor");
        T a0 = val(alpha)[0];
        Var out = alloc(shape(h), requires_grad(h) || requires_grad(gv) || requires_grad(alpha));
        detail::vfma_scalar(val(h).data(), val(gv).data(), a0, node(out).val.data(), numel(out));
        if (node(out).requires_grad) {
            node(out).backward = [h, gv, alpha, a0](Graph& g, int self) {
                const auto& d = g.grad(self);
                g.accumulate(h, d.data());
                g.accumulate_scaled(gv, d.data(), a0);
                T dg = static_cast<T>(detail::vdot(d.data(), g.val(gv).data(), static_cast<int64_t>(d.size())));
                g.accumulate_elem(alpha, 0, dg);
            };
        }
        return out;
    }

    Var gelu(Var x) {
        Var out = alloc(shape(x), requires_grad(x));
        const auto& xv = val(x);
        auto& ov = node(out).val;
        for (size_t i = 0; i < ov.size(); ++i) {
            T cdf = T(0.5) * std::erfc(-xv[i] * T(M_SQRT1_2));
            ov[i] = xv[i] * cdf;
        }
        if (node(out).requires_grad) {
            node(out).backward = [x](Graph& g, int self) {
                const auto& d = g.grad(self);
                const auto& xv = g.val(x);
                std::vector<T> dx(d.size());
                const T inv_sqrt2pi = T(0.3989422804014326779);
                for (size_t i = 0; i < d.size(); ++i) {
                    T cdf = T(0.5) * std::erfc(-xv[i] * T(M_SQRT1_2));
                    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
                    dx[i] = d[i] * (cdf + xv[i] * pdf);
                }
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    Var clamp(Var x, T lo, T hi) {
        Var out = alloc(shape(x), requires_grad(x));
        const auto& xv = val(x);
        auto& ov = node(out).val;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(hi, std::max(lo, xv[i]));
        if (node(out).requires_grad) {
            node(out).backward = [x, lo, hi](Graph& g, int self) {
                const auto& d = g.grad(self);
                const auto& xv = g.val(x);
                std::vector<T> dx(d.size());
                for (size_t i = 0; i < d.size(); ++i) dx[i] = (xv[i] >= lo && xv[i] <= hi) ? d[i] : T(0);
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    // --- shape ops ---------------------------------------------------------

    // Repeat a (C,H,W) tensor across a new leading batch dimension.
    Var tile_batch(Var x, int n) {
        if (shape(x).size() != 3) throw ContractError("tile_batch expects (C,H,W)");
        Shape os = {n, shape(x)[0], shape(x)[1], shape(x)[2]};
        Var out = alloc(os, requires_grad(x));
        int64_t chw = numel(x);
        for (int i = 0; i < n; ++i)
            std::memcpy(node(out).val.data() + i * chw, val(x).data(), sizeof(T) * static_cast<size_t>(chw));
        if (node(out).requires_grad) {
            node(out).backward = [x, n, chw](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> dx(static_cast<size_t>(chw), T(0));
                for (int i = 0; i < n; ++i)
                    detail::vadd_inplace(dx.data(), d.data() + i * chw, chw);
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    Var concat_ch(Var a, Var b) {
        const Shape& sa = shape(a);
        const Shape& sb = shape(b);
        if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
            throw ContractError("concat_ch shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
        Shape os = {sa[0], sa[1] + sb[1], sa[2], sa[3]};
        Var out = alloc(os, requires_grad(a) || requires_grad(b));
        int64_t hw = static_cast<int64_t>(sa[2]) * sa[3];
        int64_t ac = sa[1] * hw, bc = sb[1] * hw;
        for (int n = 0; n < sa[0]; ++n) {
            std::memcpy(node(out).val.data() + n * (ac + bc), val(a).data() + n * ac, sizeof(T) * static_cast<size_t>(ac));
            std::memcpy(node(out).val.data() + n * (ac + bc) + ac, val(b).data() + n * bc, sizeof(T) * static_cast<size_t>(bc));
        }
        if (node(out).requires_grad) {
            int N = sa[0];
            node(out).backward = [a, b, N, ac, bc](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> da(static_cast<size_t>(N * ac)), db(static_cast<size_t>(N * bc));
                for (int n = 0; n < N; ++n) {
                    std::memcpy(da.data() + n * ac, d.data() + n * (ac + bc), sizeof(T) * static_cast<size_t>(ac));
                    std::memcpy(db.data() + n * bc, d.data() + n * (ac + bc) + ac, sizeof(T) * static_cast<size_t>(bc));
                }
                g.accumulate(a, da.data());
                g.accumulate(b, db.data());
            };
        }
        return out;
    }

    Var slice_ch(Var x, int c0, int c1) {
        const Shape& s = shape(x);
        if (s.size() != 4 || c0 < 0 || c1 > s[1] || c0 >= c1) throw ContractError("slice_ch out of range");
        Shape os = {s[0], c1 - c0, s[2], s[3]};
        Var out = alloc(os, requires_grad(x));
        int64_t hw = static_cast<int64_t>(s[2]) * s[3];
        int64_t in_c = s[1] * hw, out_c = (c1 - c0) * hw;
        for (int n = 0; n < s[0]; ++n)
            std::memcpy(node(out).val.data() + n * out_c, val(x).data() + n * in_c + c0 * hw,
                        sizeof(T) * static_cast<size_t>(out_c));
        if (node(out).requires_grad) {
            int N = s[0];
            node(out).backward = [x, N, in_c, out_c, c0, hw](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> dx(static_cast<size_t>(N * in_c), T(0));
                for (int n = 0; n < N; ++n)
                    std::memcpy(dx.data() + n * in_c + c0 * hw, d.data() + n * out_c,
                                sizeof(T) * static_cast<size_t>(out_c));
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    // --- conv / resample ---------------------------------------------------

    // Stride-1 "same" convolution, NCHW. w: (Cout, Cin, k, k); bias optional (-1).
    Var conv2d(Var x, Var w, Var bias) {
        const Shape& xs = shape(x);
        const Shape& ws = shape(w);
        if (xs.size() != 4 || ws.size() != 4) throw ContractError("conv2d expects 4-d tensors");
        if (xs[1] != ws[1])
            throw ArgumentError("conv2d channel mismatch: input " + shape_str(xs) + " weight " + shape_str(ws));
        int N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
        int Cout = ws[0], k = ws[2];
        if (ws[2] != ws[3] || (k != 1 && k != 3)) throw ContractError("conv2d supports 1x1 and 3x3 kernels");
        int pad = k / 2;
        bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
        Var out = alloc({N, Cout, H, W}, rg);

        const int64_t hw = static_cast<int64_t>(H) * W;
        const int ckk = Cin * k * k;
        std::vector<T> col;
        for (int n = 0; n < N; ++n) {
            const T* xin = val(x).data() + static_cast<int64_t>(n) * Cin * hw;
            const T* colp = xin;
            if (k != 1) {
                col.resize(static_cast<size_t>(ckk) * hw);
                detail::im2col(xin, Cin, H, W, k, k, pad, col.data());
                colp = col.data();
            }
            T* y = node(out).val.data() + static_cast<int64_t>(n) * Cout * hw;
            kernels::gemm_nn(Cout, static_cast<int>(hw), ckk, val(w).data(), ckk, colp, static_cast<int>(hw), y,
                             static_cast<int>(hw));
            if (bias >= 0) {
                const auto& bv = val(bias);
                for (int c = 0; c < Cout; ++c) {
                    T b = bv[static_cast<size_t>(c)];
                    T* row = y + static_cast<int64_t>(c) * hw;
                    for (int64_t i = 0; i < hw; ++i) row[i] += b;
                }
            }
        }
        if (rg) {
            node(out).backward = [x, w, bias, N, Cin, H, W, Cout, k, pad, hw, ckk](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> col, dcol, dx, dw;
                bool need_dx = g.requires_grad(x);
                bool need_dw = g.requires_grad(w);
                if (need_dw) dw.assign(static_cast<size_t>(Cout) * ckk, T(0));
                if (need_dx) dx.assign(g.val(x).size(), T(0));
                for (int n = 0; n < N; ++n) {
                    const T* dy = d.data() + static_cast<int64_t>(n) * Cout * hw;
                    const T* xin = g.val(x).data() + static_cast<int64_t>(n) * Cin * hw;
                    if (need_dw) {
                        const T* colp = xin;
                        if (k != 1) {
                            col.resize(static_cast<size_t>(ckk) * hw);
                            detail::im2col(xin, Cin, H, W, k, k, pad, col.data());
                            colp = col.data();
                        }
                        kernels::gemm_nt(Cout, ckk, static_cast<int>(hw), dy, static_cast<int>(hw), colp,
                                         static_cast<int>(hw), dw.data(), ckk);
                    }
                    if (need_dx) {
                        if (k == 1) {
                            kernels::gemm_tn(ckk, static_cast<int>(hw), Cout, g.val(w).data(), ckk, dy,
                                             static_cast<int>(hw), dx.data() + static_cast<int64_t>(n) * Cin * hw,
                                             static_cast<int>(hw));
                        } else {
                            dcol.assign(static_cast<size_t>(ckk) * hw, T(0));
                            kernels::gemm_tn(ckk, static_cast<int>(hw), Cout, g.val(w).data(), ckk, dy,
                                             static_cast<int>(hw), dcol.data(), static_cast<int>(hw));
                            detail::col2im_add(dcol.data(), Cin, H, W, k, k, pad,
                                               dx.data() + static_cast<int64_t>(n) * Cin * hw);
                        }
                    }
                }
                if (need_dw) g.accumulate(w, dw.data());
                if (need_dx) g.accumulate(x, dx.data());
                if (bias >= 0 && g.requires_grad(bias)) {
                    std::vector<T> db(static_cast<size_t>(Cout), T(0));
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < Cout; ++c) {
                            const T* row = d.data() + (static_cast<int64_t>(n) * Cout + c) * hw;
                            double acc = 0.0;
                            for (int64_t i = 0; i < hw; ++i) acc += row[i];
                            db[static_cast<size_t>(c)] += static_cast<T>(acc);
                        }
                    g.accumulate(bias, db.data());
                }
            };
        }
        return out;
    }

    Var avg_pool(Var x, int k) {
        const Shape& s = shape(x);
        if (s.size() != 4 || s[2] % k != 0 || s[3] % k != 0) throw ContractError("avg_pool shape not divisible");
        int N = s[0], C = s[1], H = s[2] / k, W = s[3] / k;
        Var out = alloc({N, C, H, W}, requires_grad(x));
        const T inv = T(1) / static_cast<T>(k * k);
        for (int nc = 0; nc < N * C; ++nc) {
            const T* in = val(x).data() + static_cast<int64_t>(nc) * s[2] * s[3];
            T* o = node(out).val.data() + static_cast<int64_t>(nc) * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    T acc = T(0);
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) acc += in[(y * k + dy) * s[3] + (xx * k + dx)];
                    o[y * W + xx] = acc * inv;
                }
        }
        if (node(out).requires_grad) {
            int inH = s[2], inW = s[3], NC = N * C;
            node(out).backward = [x, k, inH, inW, NC, H, W, inv](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> dx(g.val(x).size(), T(0));
                for (int nc = 0; nc < NC; ++nc) {
                    const T* din = d.data() + static_cast<int64_t>(nc) * H * W;
                    T* o = dx.data() + static_cast<int64_t>(nc) * inH * inW;
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx) {
                            T v = din[y * W + xx] * inv;
                            for (int dy = 0; dy < k; ++dy)
                                for (int dxx = 0; dxx < k; ++dxx) o[(y * k + dy) * inW + (xx * k + dxx)] += v;
                        }
                }
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    Var upsample_nearest(Var x, int k) {
        const Shape& s = shape(x);
        if (s.size() != 4) throw ContractError("upsample expects 4-d");
        int N = s[0], C = s[1], H = s[2], W = s[3];
        Var out = alloc({N, C, H * k, W * k}, requires_grad(x));
        for (int nc = 0; nc < N * C; ++nc) {
            const T* in = val(x).data() + static_cast<int64_t>(nc) * H * W;
            T* o = node(out).val.data() + static_cast<int64_t>(nc) * H * k * W * k;
            for (int y = 0; y < H * k; ++y)
                for (int xx = 0; xx < W * k; ++xx) o[y * W * k + xx] = in[(y / k) * W + (xx / k)];
        }
        if (node(out).requires_grad) {
            int NC = N * C;
            node(out).backward = [x, k, NC, H, W](Graph& g, int self) {
                const auto& d = g.grad(self);
                std::vector<T> dx(g.val(x).size(), T(0));
                for (int nc = 0; nc < NC; ++nc) {
                    const T* din = d.data() + static_cast<int64_t>(nc) * H * k * W * k;
                    T* o = dx.data() + static_cast<int64_t>(nc) * H * W;
                    for (int y = 0; y < H * k; ++y)
                        for (int xx = 0; xx < W * k; ++xx) o[(y / k) * W + (xx / k)] += din[y * W * k + xx];
                }
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    // --- stochastic / loss ops ----------------------------------------------

    // z = mean + exp(logstd) * temp * eps. eps is a constant node.
    Var reparam(Var mean, Var logstd, Var eps, T temp) {
        check_same_shape(mean, logstd, "reparam");
        check_same_shape(mean, eps, "reparam(eps)");
        Var out = alloc(shape(mean), requires_grad(mean) || requires_grad(logstd));
        const auto& mv = val(mean);
        const auto& lv = val(logstd);
        const auto& ev = val(eps);
        auto& ov = node(out).val;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = mv[i] + std::exp(lv[i]) * temp * ev[i];
        if (node(out).requires_grad) {
            node(out).backward = [mean, logstd](Graph& g, int self) {
                const auto& d = g.grad(self);
                const auto& zv = g.val(self);
                const auto& mv = g.val(mean);
                g.accumulate(mean, d.data());
                std::vector<T> dl(d.size());
                for (size_t i = 0; i < d.size(); ++i) dl[i] = d[i] * (zv[i] - mv[i]);
                g.accumulate(logstd, dl.data());
            };
        }
        return out;
    }

    // Elementwise KL(N(qm, e^qls) || N(pm, e^pls)).
    Var gaussian_kl(Var qm, Var qls, Var pm, Var pls) {
        check_same_shape(qm, qls, "gaussian_kl");
        check_same_shape(qm, pm, "gaussian_kl");
        check_same_shape(qm, pls, "gaussian_kl");
        bool rg = requires_grad(qm) || requires_grad(qls) || requires_grad(pm) || requires_grad(pls);
        Var out = alloc(shape(qm), rg);
        const auto& a = val(qm);
        const auto& b = val(qls);
        const auto& c = val(pm);
        const auto& e = val(pls);
        auto& ov = node(out).val;
        for (size_t i = 0; i < ov.size(); ++i) {
            T inv_p2 = std::exp(T(-2) * e[i]);
            T dm = a[i] - c[i];
            ov[i] = (e[i] - b[i]) + T(0.5) * (std::exp(T(2) * b[i]) + dm * dm) * inv_p2 - T(0.5);
        }
        if (rg) {
            node(out).backward = [qm, qls, pm, pls](Graph& g, int self) {
                const auto& d = g.grad(self);
                const auto& a = g.val(qm);
                const auto& b = g.val(qls);
                const auto& c = g.val(pm);
                const auto& e = g.val(pls);
                size_t n = d.size();
                std::vector<T> dqm(n), dqls(n), dpm(n), dpls(n);
                for (size_t i = 0; i < n; ++i) {
                    T inv_p2 = std::exp(T(-2) * e[i]);
                    T q2 = std::exp(T(2) * b[i]);
                    T dm = a[i] - c[i];
                    dqm[i] = d[i] * dm * inv_p2;
                    dpm[i] = -dqm[i];
                    dqls[i] = d[i] * (q2 * inv_p2 - T(1));
                    dpls[i] = d[i] * (T(1) - (q2 + dm * dm) * inv_p2);
                }
                g.accumulate(qm, dqm.data());
                g.accumulate(qls, dqls.data());
                g.accumulate(pm, dpm.data());
                g.accumulate(pls, dpls.data());
            };
        }
        return out;
    }

    Var sum(Var x) {
        Var out = alloc({1}, requires_grad(x));
        double acc = 0.0;
        const auto& xv = val(x);
        for (size_t i = 0; i < xv.size(); ++i) acc += xv[i];
        node(out).val[0] = static_cast<T>(acc);
        if (node(out).requires_grad) {
            node(out).backward = [x](Graph& g, int self) {
                T d = g.grad(self)[0];
                std::vector<T> dx(g.val(x).size(), d);
                g.accumulate(x, dx.data());
            };
        }
        return out;
    }

    // --- backward machinery --------------------------------------------------

    void backward(Var root) {
        Node& r = node(root);
        if (r.val.size() != 1) throw ContractError("backward() root must be scalar");
        if (!r.requires_grad) throw ContractError("backward() root does not require grad");
        r.grad.assign(1, T(1));
        r.touched = true;
        for (int i = root; i >= 0; --i) {
            Node& n = node(i);
            if (n.touched && n.backward) n.backward(*this, i);
        }
    }

    void accumulate(Var v, const T* d) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        detail::vadd_inplace(n.grad.data(), d, static_cast<int64_t>(n.grad.size()));
        n.touched = true;
    }

    void accumulate_scaled(Var v, const T* d, T c) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        detail::vaxpy(c, d, n.grad.data(), static_cast<int64_t>(n.grad.size()));
        n.touched = true;
    }

    void accumulate_elem(Var v, int64_t idx, T d) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        n.grad[static_cast<size_t>(idx)] += d;
        n.touched = true;
    }

    int64_t numel(Var v) const { return static_cast<int64_t>(nodes_[static_cast<size_t>(v)].val.size()); }

    Var alloc(Shape s, bool rg) {
        Node n;
        n.shape = std::move(s);
        n.val.assign(static_cast<size_t>(shape_numel(n.shape)), T(0));
        n.requires_grad = rg;
        if (rg) n.grad.assign(n.val.size(), T(0));
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    Node& node(Var v) { return nodes_[static_cast<size_t>(v)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v)]; }

  private:
    void check_same_shape(Var a, Var b, const char* what) const {
        if (shape(a) != shape(b))
            throw ArgumentError(std::string(what) + ": shape mismatch " + shape_str(shape(a)) + " vs " +
                                shape_str(shape(b)));
    }

    std::vector<Node> nodes_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace hvsr
