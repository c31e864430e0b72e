#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "xlstm/cell.hpp"

using xlstm::CellState;
using xlstm::StepInput;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

StepInput<double> step1(double q, double k, double v, double i, double f) {
    StepInput<double> s;
    s.q = {q};
    s.k = {k};
    s.v = {v};
    s.i_pre = i;
    s.f_pre = f;
    return s;
}

std::vector<StepInput<double>> random_sequence(std::mt19937& rng,
                                               std::size_t T, std::size_t dqk,
                                               std::size_t dhv,
                                               double gate_lo = -3.0,
                                               double gate_hi = 3.0) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::uniform_real_distribution<double> gate(gate_lo, gate_hi);
    std::vector<StepInput<double>> seq(T);
    for (auto& s : seq) {
        s.q = testing::random_vector(rng, dqk);
        s.k = testing::random_vector(rng, dqk);
        s.v = testing::random_vector(rng, dhv);
        s.i_pre = gate(rng);
        s.f_pre = gate(rng);
    }
    return seq;
}

// Naive unstabilized recurrence: C_t = sigma(f) C + exp(i) k v^T with the
// denominator floor at 1. Algebraically identical to the max-state form.
void naive_forward(const std::vector<StepInput<double>>& seq, std::size_t dqk,
                   std::size_t dhv, std::vector<double>& H) {
    std::vector<double> C(dqk * dhv, 0.0), n(dqk, 0.0);
    H.assign(seq.size() * dhv, 0.0);
    const double scale = 1.0 / std::sqrt(double(dqk));
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto& s = seq[t];
        double f = xlstm::sigmoid(s.f_pre);
        double i = std::exp(s.i_pre);
        for (std::size_t a = 0; a < dqk; ++a) {
            for (std::size_t b = 0; b < dhv; ++b)
                C[a * dhv + b] = f * C[a * dhv + b] + i * s.k[a] * s.v[b];
            n[a] = f * n[a] + i * s.k[a];
        }
        double dot = 0;
        for (std::size_t a = 0; a < dqk; ++a) dot += n[a] * s.q[a] * scale;
        double den = std::max(std::abs(dot), 1.0);
        for (std::size_t b = 0; b < dhv; ++b) {
            double num = 0;
            for (std::size_t a = 0; a < dqk; ++a)
                num += C[a * dhv + b] * s.q[a] * scale;
            H[t * dhv + b] = num / den;
        }
    }
}

}  // namespace

TEST_SUITE_BEGIN("cell");

TEST_CASE("scalar step from fresh state") {
    // q=k=1, v=2, i_pre=0, f_pre=-1e9: m=0, f~0, i=1, C=2, n=1, h=2.
    CellState<double> s(1, 1);
    std::vector<double> h;
    auto next = xlstm::cell_step(step1(1, 1, 2, 0, -1e9), s, h);
    CHECK(next.m == doctest::Approx(0.0));
    CHECK(next.C[0] == doctest::Approx(2.0));
    CHECK(next.n[0] == doctest::Approx(1.0));
    CHECK(h[0] == doctest::Approx(2.0));
}

TEST_CASE("pure retention when input closed and forget open") {
    CellState<double> s(2, 3);
    std::mt19937 rng(5);
    auto seq = random_sequence(rng, 3, 2, 3);
    std::vector<double> H;
    s = xlstm::recurrent_forward(seq, s, H);

    auto in = seq[0];
    in.i_pre = -1e9;
    in.f_pre = 1e9;
    std::vector<double> h;
    auto next = xlstm::cell_step(in, s, h);
    for (std::size_t i = 0; i < s.C.size(); ++i)
        CHECK(std::abs(next.C[i] - s.C[i]) < 1e-12);
    for (std::size_t i = 0; i < s.n.size(); ++i)
        CHECK(std::abs(next.n[i] - s.n[i]) < 1e-12);
}

TEST_CASE("max state at zero gates") {
    // m_1 = max(log sigma(0), 0) = 0 since log sigma(0) = -log 2 < 0.
    CellState<double> s(1, 1);
    std::vector<double> h;
    auto next = xlstm::cell_step(step1(1, 1, 1, 0, 0), s, h);
    CHECK(next.m == 0.0);
}

TEST_CASE("post-step invariants: m >= i_pre, denominator floor positive") {
    std::mt19937 rng(17);
    CellState<double> s(3, 4);
    std::vector<double> h;
    for (int t = 0; t < 50; ++t) {
        auto seq = random_sequence(rng, 1, 3, 4, -15.0, 15.0);
        s = xlstm::cell_step(seq[0], s, h);
        CHECK(s.m >= seq[0].i_pre);
        CHECK(std::exp(-s.m) > 0.0);
        // i_t = exp(i_pre - m_t) <= 1 whenever i_pre <= 15 post-softcap.
        CHECK(std::exp(seq[0].i_pre - s.m) <= 1.0 + 1e-15);
    }
}

TEST_CASE("reset_state zeroes and matches a fresh start") {
    std::mt19937 rng(9);
    CellState<double> s(2, 2);
    std::vector<double> H;
    s = xlstm::recurrent_forward(random_sequence(rng, 4, 2, 2), s, H);

    auto z = xlstm::reset_state(s);
    for (double v : z.C) CHECK(v == 0.0);
    for (double v : z.n) CHECK(v == 0.0);
    CHECK(z.m == 0.0);

    auto seq = random_sequence(rng, 1, 2, 2);
    std::vector<double> h_fresh, h_reset;
    auto a = xlstm::cell_step(seq[0], CellState<double>(2, 2), h_fresh);
    auto b = xlstm::cell_step(seq[0], z, h_reset);
    CHECK(h_fresh == h_reset);
    CHECK(a.C == b.C);
}

TEST_CASE("forget sentinel equals a step from fresh state") {
    std::mt19937 rng(10);
    CellState<double> dirty(2, 2);
    std::vector<double> H;
    dirty = xlstm::recurrent_forward(random_sequence(rng, 5, 2, 2), dirty, H);

    auto seq = random_sequence(rng, 1, 2, 2);
    auto with_sentinel = seq[0];
    with_sentinel.f_pre = kNegInf;

    std::vector<double> h_sent, h_fresh;
    auto a = xlstm::cell_step(with_sentinel, dirty, h_sent);

    auto fresh_in = seq[0];
    fresh_in.f_pre = kNegInf;
    auto b = xlstm::cell_step(fresh_in, CellState<double>(2, 2), h_fresh);
    for (std::size_t i = 0; i < h_sent.size(); ++i)
        CHECK(std::abs(h_sent[i] - h_fresh[i]) < 1e-12);
    for (std::size_t i = 0; i < a.C.size(); ++i)
        CHECK(std::abs(a.C[i] - b.C[i]) < 1e-12);
}

TEST_CASE("recurrent_forward of length one equals cell_step") {
    std::mt19937 rng(12);
    auto seq = random_sequence(rng, 1, 3, 2);
    CellState<double> s(3, 2);
    std::vector<double> H, h;
    auto fin = xlstm::recurrent_forward(seq, s, H);
    auto fin2 = xlstm::cell_step(seq[0], s, h);
    CHECK(H == h);
    CHECK(fin.C == fin2.C);
    CHECK(fin.m == fin2.m);
}

TEST_CASE("second step reads memory written at step one") {
    // d=1: step 2 with f open, i closed reads C_1 through q_2.
    std::vector<StepInput<double>> seq = {step1(0.3, 1.0, 2.0, 0.0, -1e9),
                                          step1(0.7, 0.0, 0.0, -1e9, 1e9)};
    CellState<double> s(1, 1);
    std::vector<double> H;
    xlstm::recurrent_forward(seq, s, H);
    // After step 1: C=2, n=1, m=0. Step 2 retains them exactly.
    double qp = 0.7;
    double expected = (2.0 * qp) / std::max(std::abs(1.0 * qp), 1.0);
    CHECK(H[1] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("state threading is split-invariant") {
    std::mt19937 rng(13);
    auto seq = random_sequence(rng, 12, 3, 4);
    CellState<double> s0(3, 4);
    std::vector<double> H_full;
    auto fin_full = xlstm::recurrent_forward(seq, s0, H_full);

    for (std::size_t split : {std::size_t(1), std::size_t(5), std::size_t(11)}) {
        std::vector<StepInput<double>> a(seq.begin(), seq.begin() + split);
        std::vector<StepInput<double>> b(seq.begin() + split, seq.end());
        std::vector<double> Ha, Hb;
        auto mid = xlstm::recurrent_forward(a, s0, Ha);
        auto fin = xlstm::recurrent_forward(b, mid, Hb);
        Ha.insert(Ha.end(), Hb.begin(), Hb.end());
        CHECK(Ha == H_full);      // bit-identical
        CHECK(fin.C == fin_full.C);
        CHECK(fin.n == fin_full.n);
        CHECK(fin.m == fin_full.m);
    }
}

TEST_CASE("empty sequence returns state unchanged") {
    CellState<double> s(2, 2);
    s.m = 1.5;
    std::vector<double> H{99.0};
    auto fin = xlstm::recurrent_forward({}, s, H);
    CHECK(H.empty());
    CHECK(fin.m == 1.5);
}

TEST_CASE("stabilized recurrence equals naive form in 64-bit") {
    std::mt19937 rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        auto seq = random_sequence(rng, 32, 3, 4, -5.0, 5.0);
        CellState<double> s(3, 4);
        std::vector<double> H_stab, H_naive;
        xlstm::recurrent_forward(seq, s, H_stab);
        naive_forward(seq, 3, 4, H_naive);
        double worst = 0;
        for (std::size_t i = 0; i < H_stab.size(); ++i)
            worst = std::max(worst, std::abs(H_stab[i] - H_naive[i]));
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("dimension mismatch is rejected") {
    CellState<double> s(2, 3);
    std::vector<double> h;
    CHECK_THROWS_AS(xlstm::cell_step(step1(1, 1, 1, 0, 0), s, h),
                    std::invalid_argument);
}

TEST_CASE("BPTT gradients match finite differences") {
    std::mt19937 rng(15);
    const std::size_t T = 6, dqk = 4, dhv = 4;
    auto seq = random_sequence(rng, T, dqk, dhv);
    CellState<double> s0(dqk, dhv);
    s0.C = testing::random_vector(rng, dqk * dhv, -0.5, 0.5);
    s0.n = testing::random_vector(rng, dqk, -0.5, 0.5);
    auto weights = testing::random_vector(rng, T * dhv);

    auto pack = [&]() {
        std::vector<double> x;
        for (const auto& st : seq) {
            x.insert(x.end(), st.q.begin(), st.q.end());
            x.insert(x.end(), st.k.begin(), st.k.end());
            x.insert(x.end(), st.v.begin(), st.v.end());
            x.push_back(st.i_pre);
            x.push_back(st.f_pre);
        }
        x.insert(x.end(), s0.C.begin(), s0.C.end());
        x.insert(x.end(), s0.n.begin(), s0.n.end());
        return x;
    };
    auto loss = [&](const std::vector<double>& x) {
        std::vector<StepInput<double>> sq(T);
        std::size_t pos = 0;
        for (auto& st : sq) {
            st.q.assign(x.begin() + pos, x.begin() + pos + dqk);
            pos += dqk;
            st.k.assign(x.begin() + pos, x.begin() + pos + dqk);
            pos += dqk;
            st.v.assign(x.begin() + pos, x.begin() + pos + dhv);
            pos += dhv;
            st.i_pre = x[pos++];
            st.f_pre = x[pos++];
        }
        CellState<double> st0(dqk, dhv);
        st0.C.assign(x.begin() + pos, x.begin() + pos + dqk * dhv);
        pos += dqk * dhv;
        st0.n.assign(x.begin() + pos, x.begin() + pos + dqk);
        std::vector<double> H;
        xlstm::recurrent_forward(sq, st0, H);
        double l = 0;
        for (std::size_t i = 0; i < H.size(); ++i) l += weights[i] * H[i];
        return l;
    };

    auto res = xlstm::recurrent_backward(seq, s0, weights);
    std::vector<double> analytic;
    for (const auto& g : res.dseq) {
        analytic.insert(analytic.end(), g.dq.begin(), g.dq.end());
        analytic.insert(analytic.end(), g.dk.begin(), g.dk.end());
        analytic.insert(analytic.end(), g.dv.begin(), g.dv.end());
        analytic.push_back(g.di_pre);
        analytic.push_back(g.df_pre);
    }
    analytic.insert(analytic.end(), res.dstate0.C.begin(),
                    res.dstate0.C.end());
    analytic.insert(analytic.end(), res.dstate0.n.begin(),
                    res.dstate0.n.end());

    auto numeric = testing::numeric_gradient(loss, pack());
    CHECK(testing::grad_mismatch(analytic, numeric) < 1e-4);
}

TEST_SUITE_END();
