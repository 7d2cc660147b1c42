#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hvsr/error.hpp"
#include "hvsr/graph.hpp"
#include "hvsr/rng.hpp"

namespace hvsr {

// Discretized mixture of logistics over 8-bit RGB pixels, PixelCNN++-style:
// one mixture indicator per pixel shared by the three sub-pixels, linear
// coefficients coupling G to R and B to R,G, and CDF-difference bin
// probabilities over width-1/127.5 bins in [-1,1] space with open bins at
// 0 and 255.
//
// Parameter tensor layout per pixel, n_mix = M components, 10*M channels:
//   [0,    M)  mixture logits
//   [M,   4M)  means,      index M + m*3 + c
//   [4M,  7M)  log-scales, index 4M + m*3 + c (clamped at >= -7)
//   [7M, 10M)  coefficients (tanh), index 7M + m*3 + {rg, rb, gb}

namespace dmol {

constexpr double kLogScaleMin = -7.0;
constexpr double kHalfBin = 1.0 / 255.0;  // half bin width in [-1,1] space

template <typename T>
inline T to_normalized(int v) {
    return static_cast<T>(v) / T(127.5) - T(1);
}

// The exact CDF difference telescopes to a normalized distribution; the
// pdf*width fallback only guards against log(0) where the difference
// underflows the working precision.
template <typename T>
constexpr T delta_floor() {
    return std::is_same_v<T, float> ? T(1e-5) : T(1e-12);
}

// log P(bin of v) for one logistic component with (already adjusted) mean
// and clamped log-scale.
template <typename T>
T channel_bin_logprob(int v, T mean, T logscale) {
    T x = to_normalized<T>(v);
    T inv = std::exp(-logscale);
    T centered = x - mean;
    T plus_in = (centered + T(kHalfBin)) * inv;
    T min_in = (centered - T(kHalfBin)) * inv;
    if (v == 0) return -detail::softplus(-plus_in);
    if (v == 255) return -detail::softplus(min_in);
    T delta = detail::sigmoid(plus_in) - detail::sigmoid(min_in);
    if (delta > delta_floor<T>()) return std::log(delta);
    // Tiny CDF difference deep in a tail: fall back to pdf * bin width.
    T mid = centered * inv;
    return mid - logscale - T(2) * detail::softplus(mid) + std::log(T(2) * T(kHalfBin));
}

template <typename T>
struct PixelView {
    const T* base;   // params + pixel offset
    int64_t stride;  // H*W
    int n_mix;

    T logit(int m) const { return base[static_cast<int64_t>(m) * stride]; }
    T mean(int m, int c) const { return base[(static_cast<int64_t>(n_mix) + m * 3 + c) * stride]; }
    T logscale_raw(int m, int c) const { return base[(static_cast<int64_t>(4 * n_mix) + m * 3 + c) * stride]; }
    T coeff_raw(int m, int k) const { return base[(static_cast<int64_t>(7 * n_mix) + m * 3 + k) * stride]; }
};

// Per-mixture adjusted means for the observed pixel (coefficients applied
// against the observed normalized R and G).
template <typename T>
inline void adjusted_means(const PixelView<T>& p, int m, const T xn[3], T mu[3], T coeff[3]) {
    coeff[0] = std::tanh(p.coeff_raw(m, 0));
    coeff[1] = std::tanh(p.coeff_raw(m, 1));
    coeff[2] = std::tanh(p.coeff_raw(m, 2));
    mu[0] = p.mean(m, 0);
    mu[1] = p.mean(m, 1) + coeff[0] * xn[0];
    mu[2] = p.mean(m, 2) + coeff[1] * xn[0] + coeff[2] * xn[1];
}

// Joint log-probability of one pixel.
template <typename T>
T pixel_logprob(const PixelView<T>& p, const uint8_t rgb[3]) {
    const int M = p.n_mix;
    T xn[3] = {to_normalized<T>(rgb[0]), to_normalized<T>(rgb[1]), to_normalized<T>(rgb[2])};
    T max_arg = -std::numeric_limits<T>::infinity();
    std::vector<T> args(static_cast<size_t>(M));
    T lse_logits = T(0);
    {
        T mx = p.logit(0);
        for (int m = 1; m < M; ++m) mx = std::max(mx, p.logit(m));
        T s = T(0);
        for (int m = 0; m < M; ++m) s += std::exp(p.logit(m) - mx);
        lse_logits = mx + std::log(s);
    }
    for (int m = 0; m < M; ++m) {
        T mu[3], coeff[3];
        adjusted_means(p, m, xn, mu, coeff);
        T lm = p.logit(m) - lse_logits;
        for (int c = 0; c < 3; ++c) {
            T ls = std::max(p.logscale_raw(m, c), T(kLogScaleMin));
            lm += channel_bin_logprob<T>(rgb[c], mu[c], ls);
        }
        args[static_cast<size_t>(m)] = lm;
        max_arg = std::max(max_arg, lm);
    }
    T s = T(0);
    for (int m = 0; m < M; ++m) s += std::exp(args[static_cast<size_t>(m)] - max_arg);
    return max_arg + std::log(s);
}

// Mixture log-probability of a single sub-pixel bin, conditioning the
// channel means on the observed values of the other channels. Each of the
// three per-channel distributions is properly normalized over its 256 bins.
template <typename T>
T channel_logprob(const PixelView<T>& p, const uint8_t rgb[3], int channel, int v) {
    const int M = p.n_mix;
    T xn[3] = {to_normalized<T>(rgb[0]), to_normalized<T>(rgb[1]), to_normalized<T>(rgb[2])};
    T lse_logits;
    {
        T mx = p.logit(0);
        for (int m = 1; m < M; ++m) mx = std::max(mx, p.logit(m));
        T s = T(0);
        for (int m = 0; m < M; ++m) s += std::exp(p.logit(m) - mx);
        lse_logits = mx + std::log(s);
    }
    T max_arg = -std::numeric_limits<T>::infinity();
    std::vector<T> args(static_cast<size_t>(M));
    for (int m = 0; m < M; ++m) {
        T mu[3], coeff[3];
        adjusted_means(p, m, xn, mu, coeff);
        T ls = std::max(p.logscale_raw(m, channel), T(kLogScaleMin));
        T a = (p.logit(m) - lse_logits) + channel_bin_logprob<T>(v, mu[channel], ls);
        args[static_cast<size_t>(m)] = a;
        max_arg = std::max(max_arg, a);
    }
    T s = T(0);
    for (int m = 0; m < M; ++m) s += std::exp(args[static_cast<size_t>(m)] - max_arg);
    return max_arg + std::log(s);
}

// Sum of pixel log-probabilities over an image. img is HWC, 8-bit; params
// is one (10M, H, W) slab.
template <typename T>
T image_logprob(const uint8_t* img_hwc, int H, int W, const T* params, int n_mix) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    double total = 0.0;
    for (int64_t pix = 0; pix < hw; ++pix) {
        PixelView<T> p{params + pix, hw, n_mix};
        total += static_cast<double>(pixel_logprob(p, img_hwc + pix * 3));
    }
    return static_cast<T>(total);
}

// Accumulates d(sum log-prob)/d(params) * upstream into dparams.
template <typename T>
void image_logprob_backward(const uint8_t* img_hwc, int H, int W, const T* params, int n_mix, T upstream,
                            T* dparams) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int M = n_mix;
    std::vector<T> args(static_cast<size_t>(M));
    std::vector<T> pi(static_cast<size_t>(M));
    for (int64_t pix = 0; pix < hw; ++pix) {
        PixelView<T> p{params + pix, hw, n_mix};
        const uint8_t* rgb = img_hwc + pix * 3;
        T* dbase = dparams + pix;
        auto dref = [&](int64_t ch) -> T& { return dbase[ch * hw]; };

        T xn[3] = {to_normalized<T>(rgb[0]), to_normalized<T>(rgb[1]), to_normalized<T>(rgb[2])};
        T mx = p.logit(0);
        for (int m = 1; m < M; ++m) mx = std::max(mx, p.logit(m));
        T s = T(0);
        for (int m = 0; m < M; ++m) s += std::exp(p.logit(m) - mx);
        T lse_logits = mx + std::log(s);
        for (int m = 0; m < M; ++m) pi[static_cast<size_t>(m)] = std::exp(p.logit(m) - lse_logits);

        T max_arg = -std::numeric_limits<T>::infinity();
        for (int m = 0; m < M; ++m) {
            T mu[3], coeff[3];
            adjusted_means(p, m, xn, mu, coeff);
            T lm = p.logit(m) - lse_logits;
            for (int c = 0; c < 3; ++c) {
                T ls = std::max(p.logscale_raw(m, c), T(kLogScaleMin));
                lm += channel_bin_logprob<T>(rgb[c], mu[c], ls);
            }
            args[static_cast<size_t>(m)] = lm;
            max_arg = std::max(max_arg, lm);
        }
        T se = T(0);
        for (int m = 0; m < M; ++m) se += std::exp(args[static_cast<size_t>(m)] - max_arg);
        for (int m = 0; m < M; ++m) {
            T resp = std::exp(args[static_cast<size_t>(m)] - max_arg) / se;  // posterior weight
            dref(m) += upstream * (resp - pi[static_cast<size_t>(m)]);

            T mu[3], coeff[3];
            adjusted_means(p, m, xn, mu, coeff);
            T dmu_t[3] = {T(0), T(0), T(0)};
            for (int c = 0; c < 3; ++c) {
                T ls_raw = p.logscale_raw(m, c);
                T ls = std::max(ls_raw, T(kLogScaleMin));
                T x = xn[c];
                T inv = std::exp(-ls);
                T centered = x - mu[c];
                T plus_in = (centered + T(kHalfBin)) * inv;
                T min_in = (centered - T(kHalfBin)) * inv;
                int v = rgb[c];
                T dL = upstream * resp;
                T dplus = T(0), dmin = T(0), dls = T(0), dcentered = T(0);
                if (v == 0) {
                    dplus = dL * detail::sigmoid(-plus_in);
                } else if (v == 255) {
                    dmin = -dL * detail::sigmoid(min_in);
                } else {
                    T sp = detail::sigmoid(plus_in);
                    T sm = detail::sigmoid(min_in);
                    T delta = sp - sm;
                    if (delta > delta_floor<T>()) {
                        dplus = dL * sp * (T(1) - sp) / delta;
                        dmin = -dL * sm * (T(1) - sm) / delta;
                    } else {
                        T mid = centered * inv;
                        T dmid = dL * (T(1) - T(2) * detail::sigmoid(mid));
                        dcentered += dmid * inv;
                        dls += dmid * (-mid) - dL;
                    }
                }
                dcentered += (dplus + dmin) * inv;
                dls += dplus * (-plus_in) + dmin * (-min_in);
                if (ls_raw >= T(kLogScaleMin)) dref(4 * M + m * 3 + c) += dls;
                dmu_t[c] -= dcentered;
            }
            // mean adjustments: mu1 += k0*x0, mu2 += k1*x0 + k2*x1
            dref(M + m * 3 + 0) += dmu_t[0];
            dref(M + m * 3 + 1) += dmu_t[1];
            dref(M + m * 3 + 2) += dmu_t[2];
            T dk[3] = {dmu_t[1] * xn[0], dmu_t[2] * xn[0], dmu_t[2] * xn[1]};
            for (int k = 0; k < 3; ++k) {
                T c = coeff[k];
                dref(7 * M + m * 3 + k) += dk[k] * (T(1) - c * c);
            }
        }
    }
}

// Deterministic mean decode. Writes normalized CHW floats in [-1,1]:
// the mixture mean per channel, conditioning each channel on the already
// decoded means of the previous ones.
template <typename T>
void mean_decode(const T* params, int n_mix, int H, int W, T* out_chw) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int M = n_mix;
    std::vector<T> pi(static_cast<size_t>(M));
    for (int64_t pix = 0; pix < hw; ++pix) {
        PixelView<T> p{params + pix, hw, n_mix};
        T mx = p.logit(0);
        for (int m = 1; m < M; ++m) mx = std::max(mx, p.logit(m));
        T s = T(0);
        for (int m = 0; m < M; ++m) s += std::exp(p.logit(m) - mx);
        for (int m = 0; m < M; ++m) pi[static_cast<size_t>(m)] = std::exp(p.logit(m) - mx) / s;

        T r = T(0);
        for (int m = 0; m < M; ++m) r += pi[static_cast<size_t>(m)] * p.mean(m, 0);
        r = std::min(T(1), std::max(T(-1), r));
        T g = T(0);
        for (int m = 0; m < M; ++m)
            g += pi[static_cast<size_t>(m)] * (p.mean(m, 1) + std::tanh(p.coeff_raw(m, 0)) * r);
        g = std::min(T(1), std::max(T(-1), g));
        T b = T(0);
        for (int m = 0; m < M; ++m)
            b += pi[static_cast<size_t>(m)] *
                 (p.mean(m, 2) + std::tanh(p.coeff_raw(m, 1)) * r + std::tanh(p.coeff_raw(m, 2)) * g);
        b = std::min(T(1), std::max(T(-1), b));
        out_chw[pix] = r;
        out_chw[hw + pix] = g;
        out_chw[2 * hw + pix] = b;
    }
}

// Stochastic decode: samples the mixture indicator and per-channel logistic
// noise. Kept behind a flag; the default decode is the mean.
template <typename T>
void sample_decode(const T* params, int n_mix, int H, int W, Rng& rng, T* out_chw) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int M = n_mix;
    std::vector<T> pi(static_cast<size_t>(M));
    for (int64_t pix = 0; pix < hw; ++pix) {
        PixelView<T> p{params + pix, hw, n_mix};
        T mx = p.logit(0);
        for (int m = 1; m < M; ++m) mx = std::max(mx, p.logit(m));
        T s = T(0);
        for (int m = 0; m < M; ++m) s += std::exp(p.logit(m) - mx);
        for (int m = 0; m < M; ++m) pi[static_cast<size_t>(m)] = std::exp(p.logit(m) - mx) / s;
        double u = rng.uniform();
        int pick = M - 1;
        double acc = 0.0;
        for (int m = 0; m < M; ++m) {
            acc += pi[static_cast<size_t>(m)];
            if (u < acc) {
                pick = m;
                break;
            }
        }
        T vals[3];
        for (int c = 0; c < 3; ++c) {
            T ls = std::max(p.logscale_raw(pick, c), T(kLogScaleMin));
            double uu = std::min(1.0 - 1e-5, std::max(1e-5, rng.uniform()));
            T noise = static_cast<T>(std::log(uu) - std::log1p(-uu));
            T mu = p.mean(pick, c);
            if (c == 1) mu += std::tanh(p.coeff_raw(pick, 0)) * vals[0];
            if (c == 2) mu += std::tanh(p.coeff_raw(pick, 1)) * vals[0] + std::tanh(p.coeff_raw(pick, 2)) * vals[1];
            vals[c] = std::min(T(1), std::max(T(-1), mu + std::exp(ls) * noise));
        }
        out_chw[pix] = vals[0];
        out_chw[hw + pix] = vals[1];
        out_chw[2 * hw + pix] = vals[2];
    }
}

}  // namespace dmol

// Graph op: negative sum log-likelihood of a batch of images under the
// mixture parameters (N, 10M, H, W). Images are raw 8-bit HWC planes.
template <typename T>
typename Graph<T>::Var dmol_nll(Graph<T>& g, const std::vector<const uint8_t*>& imgs_hwc, int H, int W,
                                typename Graph<T>::Var params, int n_mix) {
    const Shape& s = g.shape(params);
    if (s.size() != 4 || s[1] != 10 * n_mix || s[2] != H || s[3] != W)
        throw ContractError("dmol_nll: params shape " + shape_str(s) + " does not match 10*M x H x W");
    if (static_cast<size_t>(s[0]) != imgs_hwc.size()) throw ContractError("dmol_nll: batch size mismatch");
    for (T v : g.val(params))
        if (!std::isfinite(v)) throw NumericError("dmol_nll: non-finite mixture parameters");
    int N = s[0];
    const int64_t slab = static_cast<int64_t>(10 * n_mix) * H * W;
    typename Graph<T>::Var out = g.alloc({1}, g.requires_grad(params));
    double total = 0.0;
    for (int n = 0; n < N; ++n)
        total += static_cast<double>(dmol::image_logprob(imgs_hwc[static_cast<size_t>(n)], H, W,
                                                         g.val(params).data() + n * slab, n_mix));
    g.mutable_val(out)[0] = static_cast<T>(-total);
    if (g.requires_grad(params)) {
        auto imgs = imgs_hwc;
        g.node(out).backward = [imgs, H, W, params, n_mix, N, slab](Graph<T>& gr, int self) {
            T d = gr.grad(self)[0];
            std::vector<T> dp(gr.val(params).size(), T(0));
            for (int n = 0; n < N; ++n)
                dmol::image_logprob_backward(imgs[static_cast<size_t>(n)], H, W,
                                             gr.val(params).data() + n * slab, n_mix, -d, dp.data() + n * slab);
            gr.accumulate(params, dp.data());
        };
    }
    return out;
}

}  // namespace hvsr
