#include <doctest.h>

#include <cmath>

#include "tact/adam.hpp"
#include "tact/gradcheck.hpp"
#include "tact/layers.hpp"
#include "tact/nn.hpp"
#include "tact/reference.hpp"

using namespace tact;
using tact::nn::GradCheckVar;

namespace {

template <Real T>
void randomize(Tensor<T>& t, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(u(rng));
}

}  // namespace

TEST_SUITE_BEGIN("nn");

// ------------------------------------------------------------------ conv2d

TEST_CASE("conv2d zero input gives zero output") {
    TensorF x({1, 3, 3});
    TensorF w({2, 1, 3, 3});
    randomize(w, 3);
    TensorF y = nn::conv2d(x, w, nullptr, 1, 1);
    for (float v : y.data) CHECK(v == 0.f);
}

TEST_CASE("conv2d identity kernel reproduces input") {
    TensorF x({1, 1, 5, 5});
    randomize(x, 4);
    TensorF w({1, 1, 3, 3});
    w.at(0, 0, 1, 1) = 1.f;
    TensorF y = nn::conv2d(x, w, nullptr, 1, 1);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d strided random case matches the serial reference") {
    TensorF x({2, 8, 8});
    randomize(x, 5);
    TensorF w({4, 2, 3, 3});
    randomize(w, 6);
    TensorF b({4});
    randomize(b, 7);
    TensorF y = nn::conv2d(x, w, &b, 2, 1);
    REQUIRE(y.shape == std::vector<std::size_t>{4, 4, 4});
    TensorF want = ref::conv2d(x, w, &b, 2, 1);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(y.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
}

TEST_CASE("conv2d rejects mismatched channels with a diagnostic") {
    TensorF x({3, 8, 8});
    TensorF w({4, 2, 3, 3});
    CHECK_THROWS_WITH_AS(nn::conv2d(x, w, nullptr, 1, 1),
                         doctest::Contains("input channels 3"), shape_error);
    TensorF even({4, 2, 4, 4});
    CHECK_THROWS_AS(nn::conv2d(x, even, nullptr, 1, 1), shape_error);
}

TEST_CASE("conv2d and linear agree with nested-loop oracles on small shapes") {
    std::uint64_t seed = 100;
    for (std::size_t ci : {1u, 2u, 3u})
        for (std::size_t hw : {3u, 5u, 8u})
            for (std::size_t co : {1u, 4u})
                for (std::size_t k : {1u, 3u})
                    for (int stride : {1, 2})
                        for (int pad : {0, 1}) {
                            if (hw + 2 * pad < k) continue;
                            TensorF x({ci, hw, hw});
                            randomize(x, seed++);
                            TensorF w({co, ci, k, k});
                            randomize(w, seed++);
                            TensorF got = nn::conv2d(x, w, nullptr, stride, pad);
                            TensorF want = ref::conv2d(x, w, nullptr, stride, pad);
                            REQUIRE(got.shape == want.shape);
                            for (std::size_t i = 0; i < got.numel(); ++i)
                                CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
                        }
    for (std::size_t rows : {1u, 2u, 8u})
        for (std::size_t din : {1u, 4u, 8u})
            for (std::size_t dout : {1u, 3u, 8u}) {
                TensorF x({rows, din});
                randomize(x, seed++);
                TensorF w({dout, din});
                randomize(w, seed++);
                TensorF b({dout});
                randomize(b, seed++);
                TensorF got = nn::linear(x, w, &b);
                TensorF want = ref::linear(x, w, &b);
                for (std::size_t i = 0; i < got.numel(); ++i)
                    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
            }
}

// ------------------------------------------------------------------ linear

TEST_CASE("linear zero weight broadcasts the bias") {
    TensorF x({3, 6});
    randomize(x, 8);
    TensorF w({24, 6});
    TensorF b({24});
    randomize(b, 9);
    TensorF y = nn::linear(x, w, &b);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t o = 0; o < 24; ++o) CHECK(y.at(r, o) == doctest::Approx(b.data[o]));
}

TEST_CASE("linear identity weight passes the input through") {
    TensorF x({4, 5});
    randomize(x, 10);
    TensorF w({5, 5});
    for (std::size_t i = 0; i < 5; ++i) w.at(i, i) = 1.f;
    TensorF b({5});
    TensorF y = nn::linear(x, w, &b);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("linear random case matches per-element dot products") {
    TensorF x({3, 6});
    randomize(x, 11);
    TensorF w({24, 6});
    randomize(w, 12);
    TensorF b({24});
    randomize(b, 13);
    TensorF y = nn::linear(x, w, &b);
    REQUIRE(y.shape == std::vector<std::size_t>{3, 24});
    TensorF want = ref::linear(x, w, &b);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(y.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
}

TEST_CASE("linear rejects dimension mismatch") {
    TensorF x({3, 7});
    TensorF w({24, 6});
    CHECK_THROWS_AS(nn::linear(x, w, nullptr), shape_error);
}

// --------------------------------------------------------------- batchnorm

TEST_CASE("batchnorm constant channel normalizes to zero") {
    nn::BatchNorm2d<float> bn(2);
    TensorF x({3, 2, 2, 2}, 4.2f);
    TensorF y = bn.forward(x, true);
    for (float v : y.data) CHECK(v == doctest::Approx(0.f).epsilon(1e-6));
}

TEST_CASE("batchnorm eval with unit running stats is the identity") {
    nn::BatchNorm2d<float> bn(3);
    TensorF x({2, 3, 2, 2});
    randomize(x, 14);
    TensorF y = bn.forward(x, false);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-5));
}

TEST_CASE("batchnorm training output has per-channel mean 0 and var 1") {
    nn::BatchNorm2d<float> bn(3);
    TensorF x({4, 3, 2, 2});
    randomize(x, 15);
    TensorF y = bn.forward(x, true);
    std::vector<double> mean, var;
    ref::channel_stats(y, mean, var);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(mean[c]) < 1e-5);
        CHECK(std::abs(var[c] - 1.0) < 1e-4);
    }
}

TEST_CASE("batchnorm rejects zero batch") {
    nn::BatchNorm2d<float> bn(2);
    TensorF x({0, 2, 2, 2});
    CHECK_THROWS_AS(bn.forward(x, true), shape_error);
}

// ----------------------------------------------------------------- dropout

TEST_CASE("dropout p=0 and eval mode are identities") {
    TensorF x({50});
    randomize(x, 16);
    TensorF a = nn::dropout(x, 0.0, true, 7);
    TensorF b = nn::dropout(x, 0.5, false, 7);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(a.data[i] == x.data[i]);
        CHECK(b.data[i] == x.data[i]);
    }
}

TEST_CASE("dropout empirical rate matches p within 0.01") {
    TensorF x({100000}, 1.f);
    TensorF y = nn::dropout(x, 0.3, true, 1234);
    std::size_t dropped = 0;
    for (float v : y.data) {
        if (v == 0.f)
            ++dropped;
        else
            CHECK(v == doctest::Approx(1.f / 0.7f));
    }
    const double rate = static_cast<double>(dropped) / 100000.0;
    CHECK(rate == doctest::Approx(0.3).epsilon(0.034));
    CHECK(std::abs(rate - 0.3) < 0.01);
}

TEST_CASE("dropout is deterministic under a fixed seed") {
    TensorF x({256});
    randomize(x, 17);
    TensorF a = nn::dropout(x, 0.4, true, 42);
    TensorF b = nn::dropout(x, 0.4, true, 42);
    CHECK(a.data == b.data);
    TensorF c = nn::dropout(x, 0.4, true, 43);
    CHECK(a.data != c.data);
}

TEST_CASE("dropout rejects p outside [0,1)") {
    TensorF x({4});
    CHECK_THROWS_AS(nn::dropout(x, 1.0, true, 1), format_error);
    CHECK_THROWS_AS(nn::dropout(x, -0.1, true, 1), format_error);
}

// --------------------------------------------------------------- attention

TEST_CASE("attention with a single position has weight exactly 1") {
    auto rng = make_rng(18);
    nn::MultiHeadAttention<float> mha(4, 2, rng);
    TensorF x({1, 4});
    randomize(x, 19);
    TensorF y = mha.forward(x);
    REQUIRE(y.shape == x.shape);
    REQUIRE(mha.cached_attn.shape == std::vector<std::size_t>{2, 1, 1});
    CHECK(mha.cached_attn.data[0] == doctest::Approx(1.f));
    CHECK(mha.cached_attn.data[1] == doctest::Approx(1.f));
}

TEST_CASE("attention over identical rows is uniform") {
    auto rng = make_rng(20);
    nn::MultiHeadAttention<float> mha(6, 3, rng);
    TensorF x({5, 6});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 6; ++c) x.at(r, c) = 0.3f * static_cast<float>(c) - 0.5f;
    mha.forward(x);
    for (float a : mha.cached_attn.data) CHECK(a == doctest::Approx(0.2f).epsilon(1e-5));
}

TEST_CASE("attention matches the step-by-step small-matrix oracle") {
    auto rng = make_rng(21);
    nn::MultiHeadAttention<float> mha(4, 2, rng);
    TensorF x({3, 4});
    randomize(x, 22);
    TensorF got = mha.forward(x);
    TensorF attn;
    TensorF want = ref::multi_head_attention(x, 2, mha.wq.w, mha.wq.b, mha.wk.w, mha.wk.b,
                                             mha.wv.w, mha.wv.b, mha.wo.w, mha.wo.b, &attn);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
    for (std::size_t i = 0; i < attn.numel(); ++i)
        CHECK(mha.cached_attn.data[i] == doctest::Approx(attn.data[i]).epsilon(1e-4));
    // rows of the attention matrix sum to 1
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 3; ++r) {
            float s = 0;
            for (std::size_t c = 0; c < 3; ++c) s += mha.cached_attn.at(h, r, c);
            CHECK(s == doctest::Approx(1.f).epsilon(1e-6));
        }
}

TEST_CASE("attention rejects indivisible head count") {
    auto rng = make_rng(23);
    CHECK_THROWS_AS(nn::MultiHeadAttention<float>(5, 2, rng), shape_error);
}

// ----------------------------------------------------- softmax and loss

TEST_CASE("softmax of uniform logits and its cross entropy") {
    TensorF logits({4});
    TensorF p = nn::softmax(logits);
    for (float v : p.data) CHECK(v == doctest::Approx(0.25f));
    CHECK(nn::cross_entropy(logits, 0) == doctest::Approx(std::log(4.f)));
}

TEST_CASE("near one-hot logits give near zero loss") {
    TensorF logits({4});
    logits.data = {10.f, 0.f, 0.f, 0.f};
    CHECK(nn::cross_entropy(logits, 0) < 1e-3f);
}

TEST_CASE("cross entropy agrees with direct log-sum-exp in double precision") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        TensorD logits({7});
        randomize(logits, 500 + s, -5.0, 5.0);
        const int label = static_cast<int>(s % 7);
        const double want = ref::log_sum_exp(logits) - logits.data[label];
        CHECK(std::abs(nn::cross_entropy(logits, label) - want) < 1e-10);
    }
}

TEST_CASE("softmax outputs are a probability vector, invariant to shifts") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        TensorF logits({6});
        randomize(logits, 600 + s, -4.0, 4.0);
        TensorF p = nn::softmax(logits);
        float sum = 0;
        std::size_t argmax = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(p.data[i] >= 0.f);
            sum += p.data[i];
            if (p.data[i] > p.data[argmax]) argmax = i;
        }
        CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));

        TensorF shifted = logits;
        for (auto& v : shifted.data) v += 3.25f;
        TensorF q = nn::softmax(shifted);
        std::size_t argmax2 = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(q.data[i] == doctest::Approx(p.data[i]).epsilon(1e-5));
            if (q.data[i] > q.data[argmax2]) argmax2 = i;
        }
        CHECK(argmax == argmax2);
    }
}

TEST_CASE("cross entropy rejects labels outside the class set") {
    TensorF logits({4});
    CHECK_THROWS_AS(nn::cross_entropy(logits, 4), format_error);
    CHECK_THROWS_AS(nn::cross_entropy(logits, -1), format_error);
}

// ----------------------------------------------------------- gradient checks

TEST_CASE("gradient check: linear at random points") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto rng = make_rng(700 + s);
        nn::Linear<double> lin(4, 3, rng);
        TensorD x({2, 3});
        randomize(x, 710 + s);
        TensorD gx;
        auto fwd = [&] { return nn::linear(x, lin.w, &lin.b); };
        auto bwd = [&](const TensorD& g) {
            lin.gw.zero();
            lin.gb.zero();
            nn::linear_backward(x, lin.w, g, &gx, &lin.gw, &lin.gb);
        };
        auto report = nn::gradient_check<double>(
            fwd, bwd,
            {{"x", &x, &gx}, {"w", &lin.w, &lin.gw}, {"b", &lin.b, &lin.gb}});
        CHECK(report.max_rel_error < 1e-7);
    }
}

TEST_CASE("gradient check: conv2d at random points") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto rng = make_rng(720 + s);
        nn::Conv2d<double> conv(3, 2, 3, 2, 1, rng);
        TensorD x({2, 2, 6, 5});
        randomize(x, 730 + s);
        TensorD gx;
        auto fwd = [&] { return nn::conv2d(x, conv.w, &conv.b, 2, 1); };
        auto bwd = [&](const TensorD& g) {
            conv.gw.zero();
            conv.gb.zero();
            nn::conv2d_backward(x, conv.w, 2, 1, g, &gx, &conv.gw, &conv.gb);
        };
        auto report = nn::gradient_check<double>(
            fwd, bwd,
            {{"x", &x, &gx}, {"w", &conv.w, &conv.gw}, {"b", &conv.b, &conv.gb}});
        CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_CASE("gradient check: relu away from the kink") {
    TensorD x({20});
    randomize(x, 750);
    for (auto& v : x.data)
        if (std::abs(v) < 1e-3) v = 0.1;
    TensorD gx;
    auto fwd = [&] { return nn::relu(x); };
    auto bwd = [&](const TensorD& g) { gx = nn::relu_backward(x, g); };
    auto report = nn::gradient_check<double>(fwd, bwd, {{"x", &x, &gx}});
    CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("gradient check: batchnorm training mode") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        nn::BatchNorm2d<double> bn(2);
        randomize(bn.gamma, 760 + s, 0.5, 1.5);
        randomize(bn.beta, 765 + s, -0.5, 0.5);
        TensorD x({3, 2, 2, 2});
        randomize(x, 770 + s);
        TensorD gx;
        auto fwd = [&] { return bn.forward(x, true); };
        auto bwd = [&](const TensorD& g) {
            bn.ggamma.zero();
            bn.gbeta.zero();
            gx = bn.backward(g);
        };
        auto report = nn::gradient_check<double>(
            fwd, bwd,
            {{"x", &x, &gx}, {"gamma", &bn.gamma, &bn.ggamma}, {"beta", &bn.beta, &bn.gbeta}});
        CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_CASE("gradient check: layernorm") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        nn::LayerNorm<double> ln(5);
        randomize(ln.gamma, 780 + s, 0.5, 1.5);
        TensorD x({3, 5});
        randomize(x, 790 + s);
        TensorD gx;
        auto fwd = [&] { return ln.forward(x); };
        auto bwd = [&](const TensorD& g) {
            ln.ggamma.zero();
            ln.gbeta.zero();
            gx = ln.backward(g);
        };
        auto report = nn::gradient_check<double>(
            fwd, bwd,
            {{"x", &x, &gx}, {"gamma", &ln.gamma, &ln.ggamma}, {"beta", &ln.beta, &ln.gbeta}});
        CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_CASE("gradient check: multi-head attention") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto rng = make_rng(800 + s);
        nn::MultiHeadAttention<double> mha(4, 2, rng);
        TensorD x({3, 4});
        randomize(x, 810 + s);
        TensorD gx;
        auto fwd = [&] { return mha.forward(x); };
        auto bwd = [&](const TensorD& g) {
            mha.wq.gw.zero();
            mha.wq.gb.zero();
            mha.wk.gw.zero();
            mha.wk.gb.zero();
            mha.wv.gw.zero();
            mha.wv.gb.zero();
            mha.wo.gw.zero();
            mha.wo.gb.zero();
            fwd();
            gx = mha.backward(g);
        };
        auto report = nn::gradient_check<double>(
            fwd, bwd,
            {{"x", &x, &gx},
             {"wq", &mha.wq.w, &mha.wq.gw},
             {"wk", &mha.wk.w, &mha.wk.gw},
             {"wv", &mha.wv.w, &mha.wv.gw},
             {"wo", &mha.wo.w, &mha.wo.gw},
             {"bo", &mha.wo.b, &mha.wo.gb}});
        CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_CASE("gradient check: full transformer encoder layer") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto rng = make_rng(830 + s);
        nn::EncoderLayer<double> enc(4, 2, 8, rng);
        nn::ParamRegistry<double> reg;
        enc.reg(reg, "enc");
        TensorD x({3, 4});
        randomize(x, 840 + s);
        TensorD gx;
        auto fwd = [&] { return enc.forward(x); };
        auto bwd = [&](const TensorD& g) {
            reg.zero_grads();
            fwd();
            gx = enc.backward(g);
        };
        std::vector<GradCheckVar<double>> vars{{"x", &x, &gx}};
        for (auto& e : reg.entries)
            if (e.grad) vars.push_back({e.name, e.value, e.grad});
        auto report = nn::gradient_check<double>(fwd, bwd, vars);
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("gradient check: softmax cross entropy composite") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        TensorD logits({4});
        randomize(logits, 850 + s, -2.0, 2.0);
        const int label = static_cast<int>(s % 4);
        TensorD glogits;
        auto fwd = [&] {
            TensorD out({1});
            out.data[0] = nn::cross_entropy(logits, label);
            return out;
        };
        auto bwd = [&](const TensorD& g) {
            glogits = nn::cross_entropy_backward(logits, label);
            for (auto& v : glogits.data) v *= g.data[0];
        };
        auto report = nn::gradient_check<double>(fwd, bwd, {{"logits", &logits, &glogits}});
        CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_SUITE_END();
