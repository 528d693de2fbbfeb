#ifndef TACT_REFERENCE_HPP
#define TACT_REFERENCE_HPP

#include <cmath>
#include <type_traits>
#include <vector>

#include "tact/flow.hpp"
#include "tact/tensor.hpp"

// Serial reference implementations: direct nested loops, no GEMM, no OpenMP.
// Kept as the oracle the parallel kernels are tested against and as the
// baseline for the benchmark tool.

namespace tact::ref {

// naive matrix product, C[M,N] = A[M,K] B[K,N]
template <Real T>
void matmul(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            T s = 0;
            for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
            C[i * N + j] = s;
        }
}

// x [C,H,W] or [B,C,H,W]; w [Co,Ci,k,k]
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> bias, int stride,
                 int padding) {
    const bool batched = x.ndim() == 4;
    const std::size_t B = batched ? x.shape[0] : 1;
    const std::size_t Ci = x.shape[batched ? 1 : 0];
    const std::size_t H = x.shape[batched ? 2 : 1];
    const std::size_t W = x.shape[batched ? 3 : 2];
    const std::size_t Co = w.shape[0];
    const std::size_t k = w.shape[2];
    const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - k) / stride + 1;

    Tensor<T> y(batched ? std::vector<std::size_t>{B, Co, Ho, Wo}
                        : std::vector<std::size_t>{Co, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    T s = bias ? bias->data[co] : T(0);
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * stride + ky) - padding;
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) - padding;
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix < 0 ||
                                    ix >= static_cast<std::ptrdiff_t>(W))
                                    continue;
                                s += x.data[((b * Ci + ci) * H + iy) * W + ix] *
                                     w.data[((co * Ci + ci) * k + ky) * k + kx];
                            }
                    y.data[((b * Co + co) * Ho + oy) * Wo + ox] = s;
                }
    return y;
}

// per-element dot products, y[..., d_out]
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> bias) {
    const std::size_t d_in = x.shape.back();
    const std::size_t d_out = w.shape[0];
    const std::size_t rows = x.numel() / d_in;
    std::vector<std::size_t> shape = x.shape;
    shape.back() = d_out;
    Tensor<T> y(shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < d_out; ++o) {
            T s = bias ? bias->data[o] : T(0);
            for (std::size_t i = 0; i < d_in; ++i)
                s += x.data[r * d_in + i] * w.data[o * d_in + i];
            y.data[r * d_out + o] = s;
        }
    return y;
}

template <Real T>
void channel_stats(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
    const std::size_t B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
    mean.assign(C, 0.0);
    var.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double m = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) m += x.data[(b * C + c) * HW + i];
        m /= static_cast<double>(B * HW);
        double v = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
                const double d = x.data[(b * C + c) * HW + i] - m;
                v += d * d;
            }
        mean[c] = m;
        var[c] = v / static_cast<double>(B * HW);
    }
}

template <Real T>
T log_sum_exp(const Tensor<T>& logits) {
    T mx = logits.data[0];
    for (const T& v : logits.data) mx = std::max(mx, v);
    T s = 0;
    for (const T& v : logits.data) s += std::exp(v - mx);
    return mx + std::log(s);
}

// Step-by-step multi-head self-attention: QK^T/sqrt(d_k), row softmax,
// weighted V, concat, output projection. Weight matrices act as x W^T + b.
template <Real T>
Tensor<T> multi_head_attention(const Tensor<T>& x, std::size_t nhead, const Tensor<T>& wq,
                               const Tensor<T>& bq, const Tensor<T>& wk, const Tensor<T>& bk,
                               const Tensor<T>& wv, const Tensor<T>& bv, const Tensor<T>& wo,
                               const Tensor<T>& bo, Tensor<T>* attn_out = nullptr) {
    const std::size_t N = x.shape[0], D = x.shape[1], dk = D / nhead;
    Tensor<T> q = linear(x, wq, &bq), k = linear(x, wk, &bk), v = linear(x, wv, &bv);
    Tensor<T> concat({N, D});
    if (attn_out) *attn_out = Tensor<T>({nhead, N, N});
    for (std::size_t h = 0; h < nhead; ++h) {
        for (std::size_t i = 0; i < N; ++i) {
            std::vector<double> scores(N);
            double mx = -1e300;
            for (std::size_t j = 0; j < N; ++j) {
                double s = 0;
                for (std::size_t a = 0; a < dk; ++a)
                    s += static_cast<double>(q.data[i * D + h * dk + a]) *
                         static_cast<double>(k.data[j * D + h * dk + a]);
                scores[j] = s / std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, scores[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < N; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                z += scores[j];
            }
            for (std::size_t j = 0; j < N; ++j) scores[j] /= z;
            if (attn_out)
                for (std::size_t j = 0; j < N; ++j)
                    attn_out->data[(h * N + i) * N + j] = static_cast<T>(scores[j]);
            for (std::size_t a = 0; a < dk; ++a) {
                double s = 0;
                for (std::size_t j = 0; j < N; ++j)
                    s += scores[j] * static_cast<double>(v.data[j * D + h * dk + a]);
                concat.data[i * D + h * dk + a] = static_cast<T>(s);
            }
        }
    }
    return linear(concat, wo, &bo);
}

// block-average pooling oracle for flow fields
flow::PooledFlow block_average_pool(const flow::FlowField& field, std::size_t factor);

// Direct per-pixel weighted-least-squares polynomial fit with a Gaussian
// applicability window and replicate border; solves the full 6x6 system at
// every pixel in double precision.
flow::PolyExpansion poly_expansion_wls(const flow::Frame& frame, int n, double sigma);

}  // namespace tact::ref

#endif
