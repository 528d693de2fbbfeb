#include <doctest.h>

#include <cmath>

#include "tact/adam.hpp"
#include "tact/layers.hpp"

using namespace tact;
using nn::AdamState;
using nn::ParamRegistry;

namespace {

// one scalar parameter wired into a registry
struct Scalar {
    TensorF p{{1}}, g{{1}};
    ParamRegistry<float> reg;
    Scalar(float value) {
        p.data[0] = value;
        reg.add("w", &p, &g);
    }
};

}  // namespace

TEST_SUITE_BEGIN("adam");

TEST_CASE("zero gradient leaves parameters unchanged and decays moments") {
    Scalar s(2.5f);
    AdamState<float> st;
    st.init(s.reg);
    // seed nonzero moments via one real step
    s.g.data[0] = 1.f;
    nn::adam_step(s.reg, st);
    const float after_first = s.p.data[0];
    const float m1 = st.first_moment[0].data[0];
    s.g.data[0] = 0.f;
    nn::adam_step(s.reg, st);
    // the first-moment decays toward zero, and with g=0 the parameter still
    // moves along the remembered moment; a fresh state with g=0 must not move
    CHECK(std::abs(st.first_moment[0].data[0]) < std::abs(m1));
    CHECK(after_first != s.p.data[0]);

    Scalar fresh(2.5f);
    AdamState<float> st2;
    st2.init(fresh.reg);
    fresh.g.data[0] = 0.f;
    nn::adam_step(fresh.reg, st2);
    CHECK(fresh.p.data[0] == 2.5f);
    CHECK(st2.first_moment[0].data[0] == 0.f);
    CHECK(st2.second_moment[0].data[0] == 0.f);
}

TEST_CASE("first step from fresh state moves by exactly lr against the gradient") {
    Scalar s(1.0f);
    AdamState<float> st;
    st.init(s.reg);
    st.lr = 5e-5f;
    s.g.data[0] = 1.f;
    nn::adam_step(s.reg, st);
    // bias-corrected first step: delta = -lr * g/|g| up to eps
    CHECK(s.p.data[0] == doctest::Approx(1.0f - 5e-5f).epsilon(1e-6));
    CHECK(st.step_count == 1);
}

TEST_CASE("descent on w^2 decreases |w| monotonically after warmup") {
    Scalar s(1.0f);
    AdamState<float> st;
    st.init(s.reg);
    st.lr = 0.01f;
    float prev = 1.0f;
    for (int i = 0; i < 100; ++i) {
        s.g.data[0] = 2.f * s.p.data[0];
        nn::adam_step(s.reg, st);
        if (i >= 5) CHECK(std::abs(s.p.data[0]) < std::abs(prev));
        prev = s.p.data[0];
    }
    CHECK(std::abs(s.p.data[0]) < 0.5f);
}

TEST_CASE("NaN gradient aborts with a diagnostic") {
    Scalar s(1.0f);
    AdamState<float> st;
    st.init(s.reg);
    s.g.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(nn::adam_step(s.reg, st), doctest::Contains("w"), numeric_error);
}

TEST_CASE("reset zeroes step count and moments, keeps hyperparameters") {
    Scalar s(1.0f);
    AdamState<float> st;
    st.init(s.reg);
    st.lr = 3e-4f;
    nn::adam_reset(st);  // fresh state: already zero
    CHECK(st.step_count == 0);

    for (int i = 0; i < 37; ++i) {
        s.g.data[0] = 0.3f + 0.01f * static_cast<float>(i);
        nn::adam_step(s.reg, st);
    }
    CHECK(st.step_count == 37);
    CHECK(st.first_moment[0].data[0] != 0.f);
    nn::adam_reset(st);
    CHECK(st.step_count == 0);
    CHECK(st.first_moment[0].data[0] == 0.f);
    CHECK(st.second_moment[0].data[0] == 0.f);
    CHECK(st.lr == 3e-4f);
    CHECK(st.beta1 == 0.9f);
}

TEST_CASE("reset followed by k steps is bit-identical to a fresh run") {
    auto rng = make_rng(77);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> grads;
    for (int i = 0; i < 40 + 5; ++i) grads.push_back(u(rng));

    // run A: 40 warmup steps, reset, then 5 steps with the tail gradients
    Scalar a(0.7f);
    AdamState<float> sta;
    sta.init(a.reg);
    for (int i = 0; i < 40; ++i) {
        a.g.data[0] = grads[i];
        nn::adam_step(a.reg, sta);
    }
    nn::adam_reset(sta);
    const float start_value = a.p.data[0];
    std::vector<float> traj_a;
    for (int i = 0; i < 5; ++i) {
        a.g.data[0] = grads[40 + i];
        nn::adam_step(a.reg, sta);
        traj_a.push_back(a.p.data[0]);
    }

    // run B: fresh optimizer from the same starting value, same gradients
    Scalar b(start_value);
    AdamState<float> stb;
    stb.init(b.reg);
    std::vector<float> traj_b;
    for (int i = 0; i < 5; ++i) {
        b.g.data[0] = grads[40 + i];
        nn::adam_step(b.reg, stb);
        traj_b.push_back(b.p.data[0]);
    }
    CHECK(traj_a == traj_b);
}

TEST_SUITE_END();
