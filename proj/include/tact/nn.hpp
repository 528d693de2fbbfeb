#ifndef TACT_NN_HPP
#define TACT_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <omp.h>

#include "tact/gemm.hpp"
#include "tact/rng.hpp"
#include "tact/tensor.hpp"

// Differentiable kernels. Forward functions return the output; backward
// functions take the upstream gradient and write input gradients
// (overwriting) and parameter gradients (accumulating). Everything is
// templated on the scalar type: training runs in float, gradient checks in
// double.

namespace tact::nn {

// ---------------------------------------------------------------- helpers

template <Real T>
inline void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw shape_error("add: shape " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t n = a.numel();
    T* __restrict__ pa = a.ptr();
    const T* __restrict__ pb = b.ptr();
    for (std::size_t i = 0; i < n; ++i) pa[i] += pb[i];
}

template <Real T>
inline T uniform01(std::uint64_t seed, std::uint64_t index) {
    return static_cast<T>((mix_seed(seed ^ (index * 0x9e3779b97f4a7c15ULL)) >> 11) *
                          (1.0 / 9007199254740992.0));
}

// ---------------------------------------------------------------- linear

// y[..., d_out] = x[..., d_in] * w[d_out, d_in]^T + b
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> b) {
    if (x.ndim() < 1 || w.ndim() != 2)
        throw shape_error("linear: need x[...,d_in], w[d_out,d_in]");
    const std::size_t d_in = x.shape.back();
    const std::size_t d_out = w.shape[0];
    if (w.shape[1] != d_in)
        throw shape_error("linear: trailing dim " + std::to_string(d_in) + " != weight d_in " +
                          std::to_string(w.shape[1]));
    if (b && b->numel() != d_out) throw shape_error("linear: bias size != d_out");

    const std::size_t rows = x.numel() / d_in;
    std::vector<std::size_t> out_shape = x.shape;
    out_shape.back() = d_out;
    Tensor<T> y(out_shape);

    // transpose w once so the hot GEMM path is row-major nn
    std::vector<T> wt(d_in * d_out);
    for (std::size_t o = 0; o < d_out; ++o)
        for (std::size_t i = 0; i < d_in; ++i) wt[i * d_out + o] = w.data[o * d_in + i];
    gemm_nn(rows, d_out, d_in, x.ptr(), d_in, wt.data(), d_out, y.ptr(), d_out);

    if (b) {
        T* __restrict__ py = y.ptr();
        const T* __restrict__ pb = b->ptr();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < d_out; ++o) py[r * d_out + o] += pb[o];
    }
    return y;
}

template <Real T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx,
                     Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t d_in = x.shape.back();
    const std::size_t d_out = w.shape[0];
    const std::size_t rows = x.numel() / d_in;
    if (gout.numel() != rows * d_out) throw shape_error("linear_backward: gout shape mismatch");

    if (gx) {
        gx->shape = x.shape;
        gx->data.resize(x.numel());
        gemm_nn(rows, d_in, d_out, gout.ptr(), d_out, w.ptr(), d_in, gx->ptr(), d_in);
    }
    if (gw) gemm_tn(d_out, d_in, rows, gout.ptr(), d_out, x.ptr(), d_in, gw->ptr(), d_in, true);
    if (gb) {
        T* __restrict__ pg = gb->ptr();
        const T* __restrict__ po = gout.ptr();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < d_out; ++o) pg[o] += po[r * d_out + o];
    }
}

// ---------------------------------------------------------------- conv2d

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, int stride, int padding) {
    return (in + 2 * static_cast<std::size_t>(padding) - k) / static_cast<std::size_t>(stride) + 1;
}

namespace detail {

// col[C*k*k, Ho*Wo] ("kp") or col[Ho*Wo, C*k*k] ("pk") for one image
template <Real T, bool PositionsMajor>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, int stride,
            int padding, std::size_t Ho, std::size_t Wo, T* col) {
    const std::size_t P = Ho * Wo;
    const std::size_t CKK = C * k * k;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t row = (c * k + ky) * k + kx;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - padding;
                    const bool y_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(H);
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - padding;
                        T v = T(0);
                        if (y_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(W))
                            v = x[(c * H + iy) * W + ix];
                        const std::size_t p = oy * Wo + ox;
                        if constexpr (PositionsMajor)
                            col[p * CKK + row] = v;
                        else
                            col[row * P + p] = v;
                    }
                }
            }
        }
    }
}

template <Real T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, int stride,
            int padding, std::size_t Ho, std::size_t Wo, T* x) {
    const std::size_t P = Ho * Wo;
    std::fill(x, x + C * H * W, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t row = (c * k + ky) * k + kx;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - padding;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - padding;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        x[(c * H + iy) * W + ix] += col[row * P + oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x: [C,H,W] or [B,C,H,W]; w: [Co,Ci,k,k]. Odd k required.
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> bias, int stride,
                 int padding) {
    if (w.ndim() != 4 || w.shape[2] != w.shape[3])
        throw shape_error("conv2d: kernel must be [C_out,C_in,k,k]");
    const std::size_t k = w.shape[2];
    if (k % 2 == 0) throw shape_error("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (stride < 1 || padding < 0) throw shape_error("conv2d: bad stride/padding");

    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3) throw shape_error("conv2d: input must be [C,H,W] or [B,C,H,W]");
    const std::size_t B = batched ? x.shape[0] : 1;
    const std::size_t Ci = x.shape[batched ? 1 : 0];
    const std::size_t H = x.shape[batched ? 2 : 1];
    const std::size_t W = x.shape[batched ? 3 : 2];
    const std::size_t Co = w.shape[0];
    if (Ci != w.shape[1])
        throw shape_error("conv2d: input channels " + std::to_string(Ci) + " != kernel C_in " +
                          std::to_string(w.shape[1]));
    if (H + 2 * padding < k || W + 2 * padding < k)
        throw shape_error("conv2d: spatial dims too small for kernel");
    if (bias && bias->numel() != Co) throw shape_error("conv2d: bias size != C_out");

    const std::size_t Ho = conv_out_dim(H, k, stride, padding);
    const std::size_t Wo = conv_out_dim(W, k, stride, padding);
    const std::size_t P = Ho * Wo;
    const std::size_t CKK = Ci * k * k;

    Tensor<T> y(batched ? std::vector<std::size_t>{B, Co, Ho, Wo}
                        : std::vector<std::size_t>{Co, Ho, Wo});

    const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel
    {
        std::vector<T> col(CKK * P);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < nb; ++b) {
            const T* xb = x.ptr() + static_cast<std::size_t>(b) * Ci * H * W;
            T* yb = y.ptr() + static_cast<std::size_t>(b) * Co * P;
            detail::im2col<T, false>(xb, Ci, H, W, k, stride, padding, Ho, Wo, col.data());
            gemm_nn(Co, P, CKK, w.ptr(), CKK, col.data(), P, yb, P);
            if (bias) {
                const T* pb = bias->ptr();
                for (std::size_t co = 0; co < Co; ++co)
                    for (std::size_t p = 0; p < P; ++p) yb[co * P + p] += pb[co];
            }
        }
    }
    return y;
}

// gx overwritten when non-null; gw/gb accumulated when non-null.
template <Real T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const bool batched = x.ndim() == 4;
    const std::size_t B = batched ? x.shape[0] : 1;
    const std::size_t Ci = x.shape[batched ? 1 : 0];
    const std::size_t H = x.shape[batched ? 2 : 1];
    const std::size_t W = x.shape[batched ? 3 : 2];
    const std::size_t Co = w.shape[0];
    const std::size_t k = w.shape[2];
    const std::size_t Ho = conv_out_dim(H, k, stride, padding);
    const std::size_t Wo = conv_out_dim(W, k, stride, padding);
    const std::size_t P = Ho * Wo;
    const std::size_t CKK = Ci * k * k;
    if (gout.numel() != B * Co * P) throw shape_error("conv2d_backward: gout shape mismatch");

    if (gx) {
        gx->shape = x.shape;
        gx->data.resize(x.numel());
        const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel
        {
            std::vector<T> dcol(CKK * P);
#pragma omp for schedule(static)
            for (std::ptrdiff_t b = 0; b < nb; ++b) {
                const T* gob = gout.ptr() + static_cast<std::size_t>(b) * Co * P;
                T* gxb = gx->ptr() + static_cast<std::size_t>(b) * Ci * H * W;
                gemm_tn(CKK, P, Co, w.ptr(), CKK, gob, P, dcol.data(), P);
                detail::col2im(dcol.data(), Ci, H, W, k, stride, padding, Ho, Wo, gxb);
            }
        }
    }

    if (gw || gb) {
        // Per-thread partials, combined in thread order. Bit-exact for a
        // fixed OMP thread count.
        int nthreads = 1;
#pragma omp parallel
        {
#pragma omp single
            nthreads = omp_get_num_threads();
        }
        std::vector<std::vector<T>> wparts(nthreads), bparts(nthreads);
        const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel
        {
            const int tid = omp_get_thread_num();
            std::vector<T> colpk(P * CKK);
            std::vector<T>& wpart = wparts[tid];
            std::vector<T>& bpart = bparts[tid];
            if (gw) wpart.assign(Co * CKK, T(0));
            if (gb) bpart.assign(Co, T(0));
#pragma omp for schedule(static)
            for (std::ptrdiff_t b = 0; b < nb; ++b) {
                const T* xb = x.ptr() + static_cast<std::size_t>(b) * Ci * H * W;
                const T* gob = gout.ptr() + static_cast<std::size_t>(b) * Co * P;
                if (gw) {
                    detail::im2col<T, true>(xb, Ci, H, W, k, stride, padding, Ho, Wo,
                                            colpk.data());
                    gemm_nn(Co, CKK, P, gob, P, colpk.data(), CKK, wpart.data(), CKK, true);
                }
                if (gb)
                    for (std::size_t co = 0; co < Co; ++co) {
                        T s = 0;
                        const T* row = gob + co * P;
                        for (std::size_t p = 0; p < P; ++p) s += row[p];
                        bpart[co] += s;
                    }
            }
        }
        for (int t = 0; t < nthreads; ++t) {
            if (gw && !wparts[t].empty())
                for (std::size_t i = 0; i < Co * CKK; ++i) gw->data[i] += wparts[t][i];
            if (gb && !bparts[t].empty())
                for (std::size_t i = 0; i < Co; ++i) gb->data[i] += bparts[t][i];
        }
    }
}

// ---------------------------------------------------------------- relu

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    const std::size_t n = x.numel();
    const T* __restrict__ px = x.ptr();
    T* __restrict__ py = y.ptr();
    for (std::size_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
    return y;
}

// gradient at exactly 0 is defined as 0
template <Real T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gout) {
    Tensor<T> gx(x.shape);
    const std::size_t n = x.numel();
    const T* __restrict__ px = x.ptr();
    const T* __restrict__ pg = gout.ptr();
    T* __restrict__ po = gx.ptr();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? pg[i] : T(0);
    return gx;
}

// ---------------------------------------------------------------- dropout

// Eval mode is the identity. Training zeroes elements with probability p and
// scales survivors by 1/(1-p). Deterministic per (seed, element index).
template <Real T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::uint64_t seed,
                  std::vector<std::uint8_t>* mask_out = nullptr) {
    if (p < 0.0 || p >= 1.0)
        throw format_error("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) {
        if (mask_out) mask_out->assign(x.numel(), 1);
        return x;
    }
    Tensor<T> y(x.shape);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    const std::size_t n = x.numel();
    if (mask_out) mask_out->assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool keep = uniform01<double>(seed, i) >= p;
        y.data[i] = keep ? x.data[i] * scale : T(0);
        if (mask_out && keep) (*mask_out)[i] = 1;
    }
    return y;
}

template <Real T>
Tensor<T> dropout_backward(const Tensor<T>& gout, double p, const std::vector<std::uint8_t>& mask) {
    Tensor<T> gx(gout.shape);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < gout.numel(); ++i)
        gx.data[i] = mask[i] ? gout.data[i] * scale : T(0);
    return gx;
}

// ---------------------------------------------------------------- softmax

// Row softmax over the last dimension, max-subtracted for stability.
template <Real T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t d = x.shape.back();
    const std::size_t rows = x.numel() / d;
    Tensor<T> y(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* px = x.ptr() + r * d;
        T* py = y.ptr() + r * d;
        T mx = px[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, px[i]);
        T sum = 0;
        for (std::size_t i = 0; i < d; ++i) {
            py[i] = std::exp(px[i] - mx);
            sum += py[i];
        }
        const T inv = T(1) / sum;
        for (std::size_t i = 0; i < d; ++i) py[i] *= inv;
    }
    return y;
}

template <Real T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& gout) {
    const std::size_t d = y.shape.back();
    const std::size_t rows = y.numel() / d;
    Tensor<T> gx(y.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* py = y.ptr() + r * d;
        const T* pg = gout.ptr() + r * d;
        T* po = gx.ptr() + r * d;
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += pg[i] * py[i];
        for (std::size_t i = 0; i < d; ++i) po[i] = py[i] * (pg[i] - dot);
    }
    return gx;
}

// ------------------------------------------------------------ cross entropy

template <Real T>
T log_sum_exp(const Tensor<T>& logits) {
    T mx = logits.data[0];
    for (const T& v : logits.data) mx = std::max(mx, v);
    T s = 0;
    for (const T& v : logits.data) s += std::exp(v - mx);
    return mx + std::log(s);
}

template <Real T>
T cross_entropy(const Tensor<T>& logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.numel())
        throw format_error("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                           std::to_string(logits.numel()) + ")");
    return log_sum_exp(logits) - logits.data[static_cast<std::size_t>(label)];
}

template <Real T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, int label) {
    Tensor<T> g = softmax(logits);
    g.data[static_cast<std::size_t>(label)] -= T(1);
    return g;
}

// ---------------------------------------------------------------- layernorm

template <Real T>
struct LayerNormCtx {
    Tensor<T> x_hat;
    std::vector<T> inv_std;
};

template <Real T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    LayerNormCtx<T>* ctx) {
    const std::size_t d = x.shape.back();
    if (gamma.numel() != d || beta.numel() != d) throw shape_error("layernorm: param size != d");
    const std::size_t rows = x.numel() / d;
    Tensor<T> y(x.shape);
    if (ctx) {
        ctx->x_hat = Tensor<T>(x.shape);
        ctx->inv_std.assign(rows, T(0));
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const T* px = x.ptr() + r * d;
        T* py = y.ptr() + r * d;
        T mean = 0;
        for (std::size_t i = 0; i < d; ++i) mean += px[i];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (px[i] - mean) * (px[i] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const T xh = (px[i] - mean) * inv;
            py[i] = gamma.data[i] * xh + beta.data[i];
            if (ctx) ctx->x_hat.ptr()[r * d + i] = xh;
        }
        if (ctx) ctx->inv_std[r] = inv;
    }
    return y;
}

template <Real T>
Tensor<T> layernorm_backward(const LayerNormCtx<T>& ctx, const Tensor<T>& gamma,
                             const Tensor<T>& gout, Tensor<T>* ggamma, Tensor<T>* gbeta) {
    const std::size_t d = gamma.numel();
    const std::size_t rows = gout.numel() / d;
    Tensor<T> gx(gout.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* pg = gout.ptr() + r * d;
        const T* xh = ctx.x_hat.ptr() + r * d;
        T* po = gx.ptr() + r * d;
        T sum_g = 0, sum_gx = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const T dxh = pg[i] * gamma.data[i];
            sum_g += dxh;
            sum_gx += dxh * xh[i];
        }
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t i = 0; i < d; ++i) {
            const T dxh = pg[i] * gamma.data[i];
            po[i] = ctx.inv_std[r] * (dxh - sum_g * inv_d - xh[i] * sum_gx * inv_d);
        }
        if (ggamma)
            for (std::size_t i = 0; i < d; ++i) ggamma->data[i] += pg[i] * xh[i];
        if (gbeta)
            for (std::size_t i = 0; i < d; ++i) gbeta->data[i] += pg[i];
    }
    return gx;
}

// ------------------------------------------------------ positional encoding

// Sinusoidal encoding added in place over x[N, d_model].
template <Real T>
void add_positional_encoding(Tensor<T>& x) {
    const std::size_t d = x.shape.back();
    const std::size_t n = x.numel() / d;
    for (std::size_t t = 0; t < n; ++t) {
        T* row = x.ptr() + t * d;
        for (std::size_t i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            row[i] += static_cast<T>(std::sin(static_cast<double>(t) * freq));
            if (i + 1 < d) row[i + 1] += static_cast<T>(std::cos(static_cast<double>(t) * freq));
        }
    }
}

// ----------------------------------------------------------- reductions

// [B,C,H,W] -> [B,C]
template <Real T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4) throw shape_error("global_avg_pool: need [B,C,H,W]");
    const std::size_t B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
    Tensor<T> y({B, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = x.ptr() + (b * C + c) * HW;
            T s = 0;
            for (std::size_t i = 0; i < HW; ++i) s += p[i];
            y.data[b * C + c] = s / static_cast<T>(HW);
        }
    return y;
}

template <Real T>
Tensor<T> global_avg_pool_backward(const std::vector<std::size_t>& x_shape,
                                   const Tensor<T>& gout) {
    const std::size_t B = x_shape[0], C = x_shape[1], HW = x_shape[2] * x_shape[3];
    Tensor<T> gx(x_shape);
    const T inv = T(1) / static_cast<T>(HW);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = gout.data[b * C + c] * inv;
            T* p = gx.ptr() + (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] = g;
        }
    return gx;
}

// [N,D] -> [D]
template <Real T>
Tensor<T> mean_over_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw shape_error("mean_over_rows: need [N,D]");
    const std::size_t n = x.shape[0], d = x.shape[1];
    Tensor<T> y({d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) y.data[i] += x.data[r * d + i];
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < d; ++i) y.data[i] *= inv;
    return y;
}

template <Real T>
Tensor<T> mean_over_rows_backward(std::size_t n, const Tensor<T>& gout) {
    const std::size_t d = gout.numel();
    Tensor<T> gx({n, d});
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) gx.data[r * d + i] = gout.data[i] * inv;
    return gx;
}

}  // namespace tact::nn

#endif
