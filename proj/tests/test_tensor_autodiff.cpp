#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cth/adam.hpp"
#include "cth/tape.hpp"

#include "fd_check.hpp"

using namespace cth;
using cth::test::fill_random;
using cth::test::max_grad_rel_err;

using TapeD = Tape<double>;

TEST_CASE("conv1d: zero input yields bias per channel") {
    TapeD tape;
    auto x = tape.constant(Tensor<double>::zeros({2, 8}));
    Tensor<double> w({3, 2, 3});
    Rng rng(1);
    fill_random(w, rng);
    auto wid = tape.constant(w);
    Tensor<double> b({3});
    b[0] = 0.5;
    b[1] = -1.0;
    b[2] = 2.0;
    auto bid = tape.constant(b);
    auto y = tape.conv1d(x, wid, bid, 1, 1);
    const auto& v = tape.val(y);
    CHECK(v.shape == Shape{3, 8});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t l = 0; l < 8; ++l) CHECK(v.at(c, l) == b[c]);
}

TEST_CASE("conv1d: K=1 identity kernel reproduces the input") {
    TapeD tape;
    Tensor<double> x({3, 5});
    Rng rng(2);
    fill_random(x, rng);
    auto xid = tape.constant(x);
    Tensor<double> w({3, 3, 1});
    for (int64_t c = 0; c < 3; ++c) w.at(c, c, 0) = 1.0;
    auto y = tape.conv1d(xid, tape.constant(w), tape.constant(Tensor<double>::zeros({3})), 1, 0);
    const auto& v = tape.val(y);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(v[i] == x[i]);
}

TEST_CASE("conv1d: gradient of sum(output) matches finite differences") {
    Rng rng(3);
    Tensor<double> x({2, 8}), w({3, 2, 3}), b({3});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    auto eval = [&] {
        TapeD t;
        auto out = t.conv1d(t.constant(x), t.constant(w), t.constant(b), 1, 1);
        const auto& v = t.val(out);
        double s = 0;
        for (int64_t i = 0; i < v.numel(); ++i) s += v[i];
        return s;
    };
    TapeD t;
    auto xi = t.leaf(x, true), wi = t.leaf(w, true), bi = t.leaf(b, true);
    auto out = t.conv1d(xi, wi, bi, 1, 1);
    t.backward(out, Tensor<double>::full(t.val(out).shape, 1.0));
    CHECK(max_grad_rel_err(w, t.grad(wi), eval) < 1e-6);
    CHECK(max_grad_rel_err(x, t.grad(xi), eval) < 1e-6);
    CHECK(max_grad_rel_err(b, t.grad(bi), eval) < 1e-6);
}

TEST_CASE("conv1d: stride-2 gradient matches finite differences") {
    Rng rng(4);
    Tensor<double> x({2, 9}), w({4, 2, 3}), b({4});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    auto eval = [&] {
        TapeD t;
        auto out = t.conv1d(t.constant(x), t.constant(w), t.constant(b), 2, 1);
        return cth::test::weighted_sum(t.val(out));
    };
    TapeD t;
    auto xi = t.leaf(x, true), wi = t.leaf(w, true);
    auto out = t.conv1d(xi, wi, t.constant(b), 2, 1);
    t.backward(out, cth::test::seed_weights(t.val(out).shape));
    CHECK(max_grad_rel_err(w, t.grad(wi), eval) < 1e-6);
    CHECK(max_grad_rel_err(x, t.grad(xi), eval) < 1e-6);
}

TEST_CASE("conv1d: shape mismatch reports offending axes") {
    TapeD tape;
    auto x = tape.constant(Tensor<double>::zeros({3, 8}));
    auto w = tape.constant(Tensor<double>::zeros({4, 2, 3}));
    auto b = tape.constant(Tensor<double>::zeros({4}));
    CHECK_THROWS_WITH_AS(tape.conv1d(x, w, b, 1, 1),
                         doctest::Contains("C_in"), std::invalid_argument);
}

TEST_CASE("self_attention: single position collapses to Wo*Wv*x") {
    Rng rng(5);
    Tensor<double> x({4, 1}), wq({4, 4}), wk({4, 4}), wv({4, 4}), wo({4, 4});
    for (auto* t : {&x, &wq, &wk, &wv, &wo}) fill_random(*t, rng);
    TapeD tape;
    auto y = tape.self_attention(tape.constant(x), tape.constant(wq), tape.constant(wk),
                                 tape.constant(wv), tape.constant(wo));
    // attention over one position is the identity on V
    std::vector<double> v(4, 0.0), expect(4, 0.0);
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t j = 0; j < 4; ++j) v[c] += wv.at(c, j) * x.at(j, 0);
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t j = 0; j < 4; ++j) expect[c] += wo.at(c, j) * v[j];
    for (int64_t c = 0; c < 4; ++c) CHECK(tape.val(y).at(c, 0) == doctest::Approx(expect[c]).epsilon(1e-12));
}

TEST_CASE("self_attention: zero logits give uniform value averaging") {
    Rng rng(6);
    Tensor<double> x({3, 5});
    fill_random(x, rng);
    Tensor<double> eye({3, 3});
    for (int64_t c = 0; c < 3; ++c) eye.at(c, c) = 1.0;
    TapeD tape;
    auto y = tape.self_attention(tape.constant(x), tape.constant(Tensor<double>::zeros({3, 3})),
                                 tape.constant(Tensor<double>::zeros({3, 3})),
                                 tape.constant(eye), tape.constant(eye));
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (int64_t l = 0; l < 5; ++l) mean += x.at(c, l);
        mean /= 5.0;
        for (int64_t l = 0; l < 5; ++l)
            CHECK(tape.val(y).at(c, l) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("self_attention: gradients match finite differences") {
    Rng rng(7);
    Tensor<double> x({4, 6}), wq({4, 4}), wk({4, 4}), wv({4, 4}), wo({4, 4});
    for (auto* t : {&x, &wq, &wk, &wv, &wo}) fill_random(*t, rng, 0.5);
    auto eval = [&] {
        TapeD t;
        auto out = t.self_attention(t.constant(x), t.constant(wq), t.constant(wk), t.constant(wv),
                                    t.constant(wo));
        return cth::test::weighted_sum(t.val(out));
    };
    TapeD t;
    auto xi = t.leaf(x, true), qi = t.leaf(wq, true), ki = t.leaf(wk, true),
         vi = t.leaf(wv, true), oi = t.leaf(wo, true);
    auto out = t.self_attention(xi, qi, ki, vi, oi);
    t.backward(out, cth::test::seed_weights(t.val(out).shape));
    CHECK(max_grad_rel_err(x, t.grad(xi), eval) < 1e-6);
    CHECK(max_grad_rel_err(wq, t.grad(qi), eval) < 1e-6);
    CHECK(max_grad_rel_err(wk, t.grad(ki), eval) < 1e-6);
    CHECK(max_grad_rel_err(wv, t.grad(vi), eval) < 1e-6);
    CHECK(max_grad_rel_err(wo, t.grad(oi), eval) < 1e-6);
}

TEST_CASE("self_attention: non-square projections are rejected") {
    TapeD tape;
    auto x = tape.constant(Tensor<double>::zeros({4, 6}));
    auto bad = tape.constant(Tensor<double>::zeros({4, 3}));
    auto ok = tape.constant(Tensor<double>::zeros({4, 4}));
    CHECK_THROWS_AS(tape.self_attention(x, bad, ok, ok, ok), std::invalid_argument);
}

TEST_CASE("group_norm: constant input maps to zeros through eps") {
    TapeD tape;
    Tensor<double> gam = Tensor<double>::full({4}, 1.0);
    auto y = tape.group_norm(tape.constant(Tensor<double>::full({4, 6}, 3.25)), 2,
                             tape.constant(gam), tape.constant(Tensor<double>::zeros({4})), 1e-5);
    for (int64_t i = 0; i < 24; ++i) CHECK(tape.val(y)[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("group_norm: zero gamma yields beta broadcast") {
    Rng rng(8);
    Tensor<double> x({4, 6});
    fill_random(x, rng);
    Tensor<double> beta({4});
    for (int64_t c = 0; c < 4; ++c) beta[c] = 0.5 * static_cast<double>(c);
    TapeD tape;
    auto y = tape.group_norm(tape.constant(x), 2, tape.constant(Tensor<double>::zeros({4})),
                             tape.constant(beta), 1e-5);
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t l = 0; l < 6; ++l) CHECK(tape.val(y).at(c, l) == beta[c]);
}

TEST_CASE("group_norm: gradients match finite differences") {
    Rng rng(9);
    Tensor<double> x({4, 6}), g({4}), b({4});
    fill_random(x, rng);
    fill_random(g, rng);
    fill_random(b, rng);
    auto eval = [&] {
        TapeD t;
        auto out = t.group_norm(t.constant(x), 2, t.constant(g), t.constant(b), 1e-5);
        return cth::test::weighted_sum(t.val(out));
    };
    TapeD t;
    auto xi = t.leaf(x, true), gi = t.leaf(g, true), bi = t.leaf(b, true);
    auto out = t.group_norm(xi, 2, gi, bi, 1e-5);
    t.backward(out, cth::test::seed_weights(t.val(out).shape));
    CHECK(max_grad_rel_err(x, t.grad(xi), eval) < 1e-6);
    CHECK(max_grad_rel_err(g, t.grad(gi), eval) < 1e-6);
    CHECK(max_grad_rel_err(b, t.grad(bi), eval) < 1e-6);
}

TEST_CASE("group_norm: groups must divide channels") {
    TapeD tape;
    auto x = tape.constant(Tensor<double>::zeros({5, 4}));
    auto g = tape.constant(Tensor<double>::full({5}, 1.0));
    auto b = tape.constant(Tensor<double>::zeros({5}));
    CHECK_THROWS_AS(tape.group_norm(x, 2, g, b, 1e-5), std::invalid_argument);
}

TEST_CASE("silu, concat, linear basics") {
    TapeD tape;
    Tensor<double> z({1, 3});
    auto y = tape.silu(tape.constant(z));
    CHECK(tape.val(y)[0] == 0.0);

    auto a = tape.constant(Tensor<double>::zeros({1, 4}));
    auto b = tape.constant(Tensor<double>::full({1, 4}, 1.0));
    auto c = tape.concat_channels(a, b);
    CHECK(tape.val(c).shape == Shape{2, 4});
    for (int64_t l = 0; l < 4; ++l) {
        CHECK(tape.val(c).at(0, l) == 0.0);
        CHECK(tape.val(c).at(1, l) == 1.0);
    }

    auto bad = tape.constant(Tensor<double>::zeros({1, 5}));
    CHECK_THROWS_WITH_AS(tape.concat_channels(a, bad), doctest::Contains("length"),
                         std::invalid_argument);
}

TEST_CASE("linear + silu + film + upsample gradients match finite differences") {
    Rng rng(10);
    Tensor<double> x({2, 4}), w({6, 4}), b({6});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    auto eval = [&] {
        TapeD t;
        auto out = t.silu(t.linear(t.constant(x), t.constant(w), t.constant(b)));
        return cth::test::weighted_sum(t.val(out));
    };
    {
        TapeD t;
        auto xi = t.leaf(x, true), wi = t.leaf(w, true), bi = t.leaf(b, true);
        auto out = t.silu(t.linear(xi, wi, bi));
        t.backward(out, cth::test::seed_weights(t.val(out).shape));
        CHECK(max_grad_rel_err(x, t.grad(xi), eval) < 1e-6);
        CHECK(max_grad_rel_err(w, t.grad(wi), eval) < 1e-6);
        CHECK(max_grad_rel_err(b, t.grad(bi), eval) < 1e-6);
    }
    Tensor<double> h({2, 3, 5}), ss({2, 6});
    fill_random(h, rng);
    fill_random(ss, rng, 0.3);
    auto eval2 = [&] {
        TapeD t;
        auto out = t.upsample_nearest(t.film(t.constant(h), t.constant(ss)), 9);
        return cth::test::weighted_sum(t.val(out));
    };
    TapeD t;
    auto hi = t.leaf(h, true), si = t.leaf(ss, true);
    auto out = t.upsample_nearest(t.film(hi, si), 9);
    t.backward(out, cth::test::seed_weights(t.val(out).shape));
    CHECK(max_grad_rel_err(h, t.grad(hi), eval2) < 1e-6);
    CHECK(max_grad_rel_err(ss, t.grad(si), eval2) < 1e-6);
}

TEST_CASE("backward: identity and sum-of-squares") {
    {
        TapeD t;
        Tensor<double> x({3});
        x[0] = 1;
        x[1] = 2;
        x[2] = 3;
        auto xi = t.leaf(x, true);
        t.backward(xi, Tensor<double>::full({3}, 1.0));
        for (int64_t i = 0; i < 3; ++i) CHECK(t.grad(xi)[i] == 1.0);
    }
    {
        TapeD t;
        Tensor<double> x({3});
        x[0] = 1;
        x[1] = 2;
        x[2] = 3;
        auto xi = t.leaf(x, true);
        auto s = t.sum_all(t.square(xi));
        t.backward_scalar(s);
        CHECK(t.grad(xi)[0] == 2.0);
        CHECK(t.grad(xi)[1] == 4.0);
        CHECK(t.grad(xi)[2] == 6.0);
    }
}

TEST_CASE("backward: empty tape is a no-op; off-tape leaves get zero gradient") {
    TapeD t;
    CHECK_NOTHROW(t.backward(0, Tensor<double>::scalar(1.0)));  // empty: returns early
    auto a = t.leaf(Tensor<double>::full({2}, 1.0), true);
    auto b = t.leaf(Tensor<double>::full({2}, 1.0), true);  // not used downstream
    auto s = t.sum_all(a);
    t.backward_scalar(s);
    CHECK(t.grad(b)[0] == 0.0);
    CHECK(t.grad(b)[1] == 0.0);
    CHECK(t.grad(a)[0] == 1.0);
}

TEST_CASE("backward is linear in the seed") {
    Rng rng(11);
    Tensor<double> x({3, 4});
    fill_random(x, rng);
    auto grad_with_seed = [&](double scale) {
        TapeD t;
        auto xi = t.leaf(x, true);
        auto y = t.silu(t.square(xi));
        t.backward(y, Tensor<double>::full({3, 4}, scale));
        return t.grad(xi);
    };
    const auto g1 = grad_with_seed(1.0);
    const auto g3 = grad_with_seed(3.0);
    for (int64_t i = 0; i < g1.numel(); ++i)
        CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-15));
}

TEST_CASE("concat_channels then slice_channels recovers both inputs exactly") {
    Rng rng(12);
    Tensor<double> a({2, 3, 7}), b({2, 2, 7});
    fill_random(a, rng);
    fill_random(b, rng);
    TapeD t;
    auto c = t.concat_channels(t.constant(a), t.constant(b));
    auto sa = t.slice_channels(c, 0, 3);
    auto sb = t.slice_channels(c, 3, 5);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(t.val(sa)[i] == a[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(t.val(sb)[i] == b[i]);
}

TEST_CASE("forward evaluation is bit-deterministic") {
    Rng rng(13);
    Tensor<double> x({2, 4, 6}), w({4, 4, 3}), b({4});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    auto run = [&] {
        TapeD t;
        auto out = t.silu(t.conv1d(t.constant(x), t.constant(w), t.constant(b), 1, 1));
        return t.val(out);
    };
    const auto y1 = run(), y2 = run();
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("adam: zero gradient from a fresh state leaves parameters unchanged") {
    std::vector<Tensor<float>> p{Tensor<float>::full({3}, 2.0f)};
    std::vector<Tensor<float>> g{Tensor<float>::zeros({3})};
    AdamState<float> st = AdamState<float>::like(p);
    AdamConfig cfg;
    adam_step(p, g, {"p"}, st, cfg);
    for (int64_t i = 0; i < 3; ++i) CHECK(p[0][i] == 2.0f);
}

TEST_CASE("adam: zero gradient decays existing moments toward zero") {
    std::vector<Tensor<float>> p{Tensor<float>::full({3}, 2.0f)};
    std::vector<Tensor<float>> g{Tensor<float>::zeros({3})};
    AdamState<float> st = AdamState<float>::like(p);
    st.m[0] = Tensor<float>::full({3}, 1.0f);
    st.v[0] = Tensor<float>::full({3}, 1.0f);
    AdamConfig cfg;
    adam_step(p, g, {"p"}, st, cfg);
    for (int64_t i = 0; i < 3; ++i) {
        CHECK(st.m[0][i] == doctest::Approx(0.9f));
        CHECK(st.v[0][i] == doctest::Approx(0.999f));
    }
}

TEST_CASE("adam: first step with unit gradient moves by ~lr") {
    std::vector<Tensor<double>> p{Tensor<double>::full({1}, 0.0)};
    std::vector<Tensor<double>> g{Tensor<double>::full({1}, 1.0)};
    AdamState<double> st = AdamState<double>::like(p);
    AdamConfig cfg;
    cfg.lr = 1e-3;
    adam_step(p, g, {"p"}, st, cfg);
    // bias-corrected first step: -lr * 1 / (1 + eps)
    CHECK(p[0][0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(st.step == 1);
}

TEST_CASE("adam: minimizes (p-3)^2") {
    std::vector<Tensor<double>> p{Tensor<double>::zeros({1})};
    AdamState<double> st = AdamState<double>::like(p);
    AdamConfig cfg;
    cfg.lr = 0.01;
    for (int i = 0; i < 5000; ++i) {
        std::vector<Tensor<double>> g{Tensor<double>::full({1}, 2.0 * (p[0][0] - 3.0))};
        adam_step(p, g, {"p"}, st, cfg);
    }
    CHECK(std::abs(p[0][0] - 3.0) < 1e-3);
}

TEST_CASE("adam: non-finite gradients follow the NaN policy") {
    std::vector<Tensor<double>> p{Tensor<double>::full({1}, 1.0)};
    std::vector<Tensor<double>> g{Tensor<double>::full({1}, std::nan(""))};
    AdamState<double> st = AdamState<double>::like(p);
    AdamConfig strict;
    CHECK_THROWS_WITH_AS(adam_step(p, g, {"theta"}, st, strict), doctest::Contains("theta"),
                         std::runtime_error);
    AdamConfig lenient;
    lenient.strict_nan = false;
    CHECK_NOTHROW(adam_step(p, g, {"theta"}, st, lenient));
    CHECK(p[0][0] == 1.0);
}
