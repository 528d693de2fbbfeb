// Benchmark comparing the OpenMP kernels against the serial reference
// implementations. Build in Release; run with no arguments.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include <omp.h>

#include "tact/flow.hpp"
#include "tact/gemm.hpp"
#include "tact/layers.hpp"
#include "tact/nn.hpp"
#include "tact/reference.hpp"
#include "tact/rng.hpp"
#include "tact/sim.hpp"
#include "tact/tensor.hpp"

using namespace tact;

namespace {

double now_s() {
    using clk = std::chrono::steady_clock;
    return std::chrono::duration<double>(clk::now().time_since_epoch()).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

void randomize(TensorF& t, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : t.data) v = u(rng);
}

void row(const char* name, double serial_s, double omp_s, double flops = 0) {
    if (flops > 0)
        std::printf("  %-34s %9.2f ms %9.2f ms  %5.1fx  %7.2f GFLOP/s\n", name,
                    serial_s * 1e3, omp_s * 1e3, serial_s / omp_s, flops / omp_s / 1e9);
    else
        std::printf("  %-34s %9.2f ms %9.2f ms  %5.1fx\n", name, serial_s * 1e3, omp_s * 1e3,
                    serial_s / omp_s);
}

void bench_gemm(std::size_t M, std::size_t N, std::size_t K, const char* tag) {
    TensorF a({M, K}), b({K, N}), c({M, N});
    randomize(a, 1);
    randomize(b, 2);
    const double flops = 2.0 * M * N * K;
    const int reps = std::max(1, static_cast<int>(2e8 / flops));
    const double t_ref = time_best_of(3, [&] {
        for (int r = 0; r < reps; ++r)
            ref::matmul(M, N, K, a.ptr(), b.ptr(), c.ptr());
    }) / reps;
    const double t_omp = time_best_of(5, [&] {
        for (int r = 0; r < reps; ++r)
            gemm_nn(M, N, K, a.ptr(), K, b.ptr(), N, c.ptr(), N);
    }) / reps;
    row(tag, t_ref, t_omp, flops);
}

void bench_conv() {
    TensorF x({8, 2, 96, 128}), w({16, 2, 3, 3}), b({16});
    randomize(x, 3);
    randomize(w, 4);
    randomize(b, 5);
    const double flops = 2.0 * 8 * 16 * 48 * 64 * 2 * 9;
    const double t_ref = time_best_of(2, [&] { ref::conv2d(x, w, &b, 2, 1); });
    const double t_omp = time_best_of(5, [&] { nn::conv2d(x, w, &b, 2, 1); });
    row("conv2d 8x2x96x128 -> 16ch s2", t_ref, t_omp, flops);
}

void bench_linear() {
    TensorF x({160, 160}), w({2048, 160}), b({2048});
    randomize(x, 6);
    randomize(w, 7);
    randomize(b, 8);
    const double flops = 2.0 * 160 * 2048 * 160;
    const double t_ref = time_best_of(2, [&] { ref::linear(x, w, &b); });
    const double t_omp = time_best_of(5, [&] { nn::linear(x, w, &b); });
    row("linear [160,160] -> [160,2048]", t_ref, t_omp, flops);
}

void bench_attention() {
    auto rng = make_rng(9);
    nn::MultiHeadAttention<float> mha(160, 8, rng);
    TensorF x({160, 160});
    randomize(x, 10);
    const double t_ref = time_best_of(2, [&] {
        ref::multi_head_attention(x, 8, mha.wq.w, mha.wq.b, mha.wk.w, mha.wk.b, mha.wv.w,
                                  mha.wv.b, mha.wo.w, mha.wo.b);
    });
    const double t_omp = time_best_of(5, [&] { mha.forward(x); });
    row("multi-head attention N=160", t_ref, t_omp);
}

void bench_poly() {
    const flow::Frame f = sim::render_pattern(11, 192, 256);
    const double t_ref = time_best_of(1, [&] { ref::poly_expansion_wls(f, 5, 1.2); });
    const double t_omp = time_best_of(3, [&] { flow::polynomial_expansion(f, 5, 1.2); });
    row("polynomial expansion 192x256", t_ref, t_omp);
}

void bench_pool() {
    flow::FlowField fl(768, 1024);
    auto rng = make_rng(12);
    std::uniform_real_distribution<float> u(-3.f, 3.f);
    for (auto& v : fl.u) v = u(rng);
    for (auto& v : fl.v) v = u(rng);
    const double t_ref = time_best_of(3, [&] { ref::block_average_pool(fl, 8); });
    const double t_omp = time_best_of(5, [&] { flow::pool_flow(fl, 8); });
    row("pool_flow 768x1024 /8", t_ref, t_omp);
}

void bench_farneback() {
    const flow::Frame a = sim::render_pattern(13, 192, 256);
    flow::Frame b(192, 256);
    for (std::size_t y = 0; y < 192; ++y)
        for (std::size_t x = 0; x < 256; ++x)
            b.at(y, x) = flow::bilinear_sample(a, x - 1.5, y + 0.5);
    const double t = time_best_of(3, [&] { flow::farneback_flow(a, b); });
    std::printf("  %-34s %21.2f ms\n", "farneback 192x256 (no serial ref)", t * 1e3);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%36s %12s %12s %7s\n", "", "serial ref", "openmp", "speedup");
    std::printf("[gemm vs naive matmul]\n");
    bench_gemm(16, 3072, 18, "gemm (conv1 shape)");
    bench_gemm(160, 2048, 160, "gemm (ffn shape)");
    bench_gemm(512, 512, 512, "gemm 512^3");
    std::printf("[kernels vs serial reference]\n");
    bench_conv();
    bench_linear();
    bench_attention();
    bench_poly();
    bench_pool();
    std::printf("[pipeline]\n");
    bench_farneback();
    return 0;
}
