#ifndef TACT_LAYERS_HPP
#define TACT_LAYERS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "tact/nn.hpp"
#include "tact/rng.hpp"
#include "tact/tensor.hpp"

// Stateful modules composing the nn kernels. Each module owns its parameters
// and gradients, caches what its backward pass needs, and registers itself
// with a ParamRegistry for the optimizer and checkpoint I/O.

namespace tact::nn {

template <Real T>
struct ParamEntry {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;  // null for non-trainable buffers (BN stats)
};

template <Real T>
struct ParamRegistry {
    std::vector<ParamEntry<T>> entries;

    void add(std::string name, Tensor<T>* value, Tensor<T>* grad) {
        entries.push_back({std::move(name), value, grad});
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries)
            if (e.grad) n += e.value->numel();
        return n;
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.value->numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries)
            if (e.grad) e.grad->zero();
    }

    const ParamEntry<T>* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

// Per-forward context threaded through the model: training flag plus the seed
// that dropout layers derive their masks from.
struct StepContext {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

template <Real T>
void he_uniform_init(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : w.data) v = static_cast<T>(u(rng));
}

// ---------------------------------------------------------------- Linear

template <Real T>
struct Linear {
    Tensor<T> w, b, gw, gb;
    Tensor<T> cached_x;

    Linear() = default;
    Linear(std::size_t d_out, std::size_t d_in, std::mt19937_64& rng)
        : w({d_out, d_in}), b({d_out}), gw({d_out, d_in}), gb({d_out}) {
        he_uniform_init(w, d_in, rng);
    }

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".w", &w, &gw);
        r.add(prefix + ".b", &b, &gb);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        cached_x = x;
        return linear(x, w, &b);
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gx;
        linear_backward(cached_x, w, gout, &gx, &gw, &gb);
        return gx;
    }
};

// ---------------------------------------------------------------- Conv2d

template <Real T>
struct Conv2d {
    Tensor<T> w, b, gw, gb;
    int stride = 1, padding = 1;
    Tensor<T> cached_x;

    Conv2d() = default;
    Conv2d(std::size_t c_out, std::size_t c_in, std::size_t k, int stride_, int padding_,
           std::mt19937_64& rng)
        : w({c_out, c_in, k, k}), b({c_out}), gw({c_out, c_in, k, k}), gb({c_out}),
          stride(stride_), padding(padding_) {
        he_uniform_init(w, c_in * k * k, rng);
    }

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".w", &w, &gw);
        r.add(prefix + ".b", &b, &gb);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        cached_x = x;
        return conv2d(x, w, &b, stride, padding);
    }

    Tensor<T> backward(const Tensor<T>& gout, bool need_gx = true) {
        Tensor<T> gx;
        conv2d_backward(cached_x, w, stride, padding, gout, need_gx ? &gx : nullptr, &gw, &gb);
        return gx;
    }
};

// ------------------------------------------------------------- BatchNorm2d

// Normalizes per channel over (batch, H, W). Training mode uses batch
// statistics and updates running stats; eval mode uses running stats.
template <Real T>
struct BatchNorm2d {
    Tensor<T> gamma, beta, ggamma, gbeta;
    Tensor<T> running_mean, running_var;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);

    Tensor<T> cached_xhat;
    std::vector<T> cached_inv_std;
    std::vector<std::size_t> cached_shape;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels)
        : gamma({channels}, T(1)), beta({channels}), ggamma({channels}), gbeta({channels}),
          running_mean({channels}), running_var({channels}, T(1)) {}

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".gamma", &gamma, &ggamma);
        r.add(prefix + ".beta", &beta, &gbeta);
        r.add(prefix + ".running_mean", &running_mean, nullptr);
        r.add(prefix + ".running_var", &running_var, nullptr);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (x.ndim() != 4) throw shape_error("batchnorm2d: need [B,C,H,W]");
        const std::size_t B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
        if (C != gamma.numel())
            throw shape_error("batchnorm2d: channel count " + std::to_string(C) +
                              " != statistics size " + std::to_string(gamma.numel()));
        if (B == 0) throw shape_error("batchnorm2d: zero batch size");
        const std::size_t n = B * HW;
        Tensor<T> y(x.shape);
        if (training) {
            cached_xhat = Tensor<T>(x.shape);
            cached_inv_std.assign(C, T(0));
            cached_shape = x.shape;
            for (std::size_t c = 0; c < C; ++c) {
                double mean = 0;
                for (std::size_t b = 0; b < B; ++b) {
                    const T* p = x.ptr() + (b * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) mean += p[i];
                }
                mean /= static_cast<double>(n);
                double var = 0;
                for (std::size_t b = 0; b < B; ++b) {
                    const T* p = x.ptr() + (b * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        const double d = p[i] - mean;
                        var += d * d;
                    }
                }
                var /= static_cast<double>(n);
                const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                cached_inv_std[c] = inv;
                for (std::size_t b = 0; b < B; ++b) {
                    const T* p = x.ptr() + (b * C + c) * HW;
                    T* ph = cached_xhat.ptr() + (b * C + c) * HW;
                    T* py = y.ptr() + (b * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        ph[i] = (p[i] - static_cast<T>(mean)) * inv;
                        py[i] = gamma.data[c] * ph[i] + beta.data[c];
                    }
                }
                const double unbiased = n > 1 ? var * n / (n - 1.0) : var;
                running_mean.data[c] =
                    (T(1) - momentum) * running_mean.data[c] + momentum * static_cast<T>(mean);
                running_var.data[c] =
                    (T(1) - momentum) * running_var.data[c] + momentum * static_cast<T>(unbiased);
            }
        } else {
            for (std::size_t c = 0; c < C; ++c) {
                const T inv = T(1) / std::sqrt(running_var.data[c] + eps);
                const T mu = running_mean.data[c];
                for (std::size_t b = 0; b < B; ++b) {
                    const T* p = x.ptr() + (b * C + c) * HW;
                    T* py = y.ptr() + (b * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                        py[i] = gamma.data[c] * (p[i] - mu) * inv + beta.data[c];
                }
            }
        }
        return y;
    }

    // training-mode backward
    Tensor<T> backward(const Tensor<T>& gout) {
        const std::size_t B = cached_shape[0], C = cached_shape[1],
                          HW = cached_shape[2] * cached_shape[3];
        const std::size_t n = B * HW;
        Tensor<T> gx(cached_shape);
        for (std::size_t c = 0; c < C; ++c) {
            double sum_g = 0, sum_gx = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* pg = gout.ptr() + (b * C + c) * HW;
                const T* ph = cached_xhat.ptr() + (b * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    sum_g += pg[i];
                    sum_gx += pg[i] * ph[i];
                }
            }
            ggamma.data[c] += static_cast<T>(sum_gx);
            gbeta.data[c] += static_cast<T>(sum_g);
            const T g = gamma.data[c];
            const T inv = cached_inv_std[c];
            const T mean_g = static_cast<T>(sum_g / n);
            const T mean_gx = static_cast<T>(sum_gx / n);
            for (std::size_t b = 0; b < B; ++b) {
                const T* pg = gout.ptr() + (b * C + c) * HW;
                const T* ph = cached_xhat.ptr() + (b * C + c) * HW;
                T* po = gx.ptr() + (b * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i)
                    po[i] = g * inv * (pg[i] - mean_g - ph[i] * mean_gx);
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------- Dropout

template <Real T>
struct DropoutLayer {
    double p = 0.0;
    std::uint64_t layer_salt = 0;  // distinguishes instances under one seed
    std::vector<std::uint8_t> cached_mask;
    bool cached_training = false;

    Tensor<T> forward(const Tensor<T>& x, const StepContext& ctx) {
        cached_training = ctx.training;
        return dropout(x, p, ctx.training, derive_seed(ctx.dropout_seed, layer_salt),
                       &cached_mask);
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!cached_training || p == 0.0) return gout;
        return dropout_backward(gout, p, cached_mask);
    }
};

// -------------------------------------------------------------- LayerNorm

template <Real T>
struct LayerNorm {
    Tensor<T> gamma, beta, ggamma, gbeta;
    T eps = static_cast<T>(1e-5);
    LayerNormCtx<T> ctx;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d)
        : gamma({d}, T(1)), beta({d}), ggamma({d}), gbeta({d}) {}

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".gamma", &gamma, &ggamma);
        r.add(prefix + ".beta", &beta, &gbeta);
    }

    Tensor<T> forward(const Tensor<T>& x) { return layernorm(x, gamma, beta, eps, &ctx); }

    Tensor<T> backward(const Tensor<T>& gout) {
        return layernorm_backward(ctx, gamma, gout, &ggamma, &gbeta);
    }
};

// ---------------------------------------------------- MultiHeadAttention

// Self-attention over x[N, d_model] with nhead heads.
template <Real T>
struct MultiHeadAttention {
    std::size_t d_model = 0, nhead = 0, d_k = 0;
    Linear<T> wq, wk, wv, wo;

    Tensor<T> cached_q, cached_k, cached_v;  // [N, d_model]
    Tensor<T> cached_attn;                   // [nhead, N, N]
    Tensor<T> cached_concat;                 // [N, d_model]

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t d_model_, std::size_t nhead_, std::mt19937_64& rng)
        : d_model(d_model_), nhead(nhead_) {
        if (nhead == 0 || d_model % nhead != 0)
            throw shape_error("multi_head_attention: d_model " + std::to_string(d_model) +
                              " not divisible by nhead " + std::to_string(nhead_));
        d_k = d_model / nhead;
        wq = Linear<T>(d_model, d_model, rng);
        wk = Linear<T>(d_model, d_model, rng);
        wv = Linear<T>(d_model, d_model, rng);
        wo = Linear<T>(d_model, d_model, rng);
    }

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        wq.reg(r, prefix + ".wq");
        wk.reg(r, prefix + ".wk");
        wv.reg(r, prefix + ".wv");
        wo.reg(r, prefix + ".wo");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 2 || x.shape[1] != d_model)
            throw shape_error("multi_head_attention: need [N," + std::to_string(d_model) + "]");
        const std::size_t N = x.shape[0];
        cached_q = wq.forward(x);
        cached_k = wk.forward(x);
        cached_v = wv.forward(x);
        cached_attn = Tensor<T>({nhead, N, N});
        cached_concat = Tensor<T>({N, d_model});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k)));

        for (std::size_t h = 0; h < nhead; ++h) {
            // scores = Qh Kh^T / sqrt(d_k) ; heads are column slices
            Tensor<T> scores({N, N});
            gemm_nt(N, N, d_k, cached_q.ptr() + h * d_k, d_model, cached_k.ptr() + h * d_k,
                    d_model, scores.ptr(), N);
            for (auto& v : scores.data) v *= scale;
            Tensor<T> attn = softmax(scores);
            std::copy(attn.data.begin(), attn.data.end(), cached_attn.ptr() + h * N * N);
            // concat slice = attn @ Vh
            gemm_nn(N, d_k, N, attn.ptr(), N, cached_v.ptr() + h * d_k, d_model,
                    cached_concat.ptr() + h * d_k, d_model);
        }
        return wo.forward(cached_concat);
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const std::size_t N = cached_q.shape[0];
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k)));
        Tensor<T> gconcat = wo.backward(gout);
        Tensor<T> gq({N, d_model}), gk({N, d_model}), gv({N, d_model});

        for (std::size_t h = 0; h < nhead; ++h) {
            const T* attn = cached_attn.ptr() + h * N * N;
            // dAttn = gconcat_h @ Vh^T
            Tensor<T> dattn({N, N});
            gemm_nt(N, N, d_k, gconcat.ptr() + h * d_k, d_model, cached_v.ptr() + h * d_k,
                    d_model, dattn.ptr(), N);
            // dVh = attn^T @ gconcat_h
            {
                Tensor<T> dv({N, d_k});
                gemm_tn(N, d_k, N, attn, N, gconcat.ptr() + h * d_k, d_model, dv.ptr(), d_k);
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < d_k; ++j)
                        gv.ptr()[i * d_model + h * d_k + j] = dv.ptr()[i * d_k + j];
            }
            // softmax backward per row, then scale
            Tensor<T> dscores({N, N});
            for (std::size_t r = 0; r < N; ++r) {
                const T* a = attn + r * N;
                const T* dg = dattn.ptr() + r * N;
                T* ds = dscores.ptr() + r * N;
                T dot = 0;
                for (std::size_t j = 0; j < N; ++j) dot += dg[j] * a[j];
                for (std::size_t j = 0; j < N; ++j) ds[j] = a[j] * (dg[j] - dot) * scale;
            }
            // dQh = dscores @ Kh ; dKh = dscores^T @ Qh
            {
                Tensor<T> dq({N, d_k});
                gemm_nn(N, d_k, N, dscores.ptr(), N, cached_k.ptr() + h * d_k, d_model, dq.ptr(),
                        d_k);
                Tensor<T> dk({N, d_k});
                gemm_tn(N, d_k, N, dscores.ptr(), N, cached_q.ptr() + h * d_k, d_model, dk.ptr(),
                        d_k);
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < d_k; ++j) {
                        gq.ptr()[i * d_model + h * d_k + j] = dq.ptr()[i * d_k + j];
                        gk.ptr()[i * d_model + h * d_k + j] = dk.ptr()[i * d_k + j];
                    }
            }
        }
        Tensor<T> gx = wq.backward(gq);
        add_inplace(gx, wk.backward(gk));
        add_inplace(gx, wv.backward(gv));
        return gx;
    }
};

// ----------------------------------------------------- TransformerEncoder

// Pre-normalization ordering: x + MHA(LN(x)), then x + FFN(LN(x)).
template <Real T>
struct EncoderLayer {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> mha;
    Linear<T> ff1, ff2;
    Tensor<T> cached_ff_pre;  // input of relu in the FFN

    EncoderLayer() = default;
    EncoderLayer(std::size_t d_model, std::size_t nhead, std::size_t d_ff, std::mt19937_64& rng)
        : ln1(d_model), ln2(d_model), mha(d_model, nhead, rng) {
        ff1 = Linear<T>(d_ff, d_model, rng);
        ff2 = Linear<T>(d_model, d_ff, rng);
    }

    void reg(ParamRegistry<T>& r, const std::string& prefix) {
        ln1.reg(r, prefix + ".ln1");
        mha.reg(r, prefix + ".mha");
        ln2.reg(r, prefix + ".ln2");
        ff1.reg(r, prefix + ".ff1");
        ff2.reg(r, prefix + ".ff2");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> h = x;
        add_inplace(h, mha.forward(ln1.forward(x)));
        cached_ff_pre = ff1.forward(ln2.forward(h));
        Tensor<T> ff = ff2.forward(relu(cached_ff_pre));
        add_inplace(ff, h);
        return ff;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        // FFN branch
        Tensor<T> g_ff2 = ff2.backward(gout);
        Tensor<T> g_ff1 = ff1.backward(relu_backward(cached_ff_pre, g_ff2));
        Tensor<T> gh = ln2.backward(g_ff1);
        add_inplace(gh, gout);  // residual
        // attention branch
        Tensor<T> g_mha = mha.backward(gh);
        Tensor<T> gx = ln1.backward(g_mha);
        add_inplace(gx, gh);  // residual
        return gx;
    }
};

}  // namespace tact::nn

#endif
