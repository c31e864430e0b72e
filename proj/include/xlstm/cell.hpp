// Single-head mLSTM cell: matrix memory C, normalizer n, max state m.
// One-token recurrent step, a sequential fold over full sequences, and
// backprop-through-time. The output gate and headwise norm live in the
// layer, not here.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "xlstm/numerics.hpp"
#include "xlstm/tensor.hpp"

namespace xlstm {

// Forget-gate pre-activation sentinel forcing sigma(f) = 0 exactly
// (document-boundary state reset). Must bypass soft-capping.
template <class Real>
constexpr Real forget_reset_sentinel() {
    return -std::numeric_limits<Real>::infinity();
}

// Input-gate sentinel: the token writes nothing (padding rows).
template <class Real>
constexpr Real input_skip_sentinel() {
    return -std::numeric_limits<Real>::infinity();
}

template <class Real>
struct CellState {
    std::size_t d_qk = 0, d_hv = 0;
    std::vector<Real> C;  // d_qk x d_hv, row-major
    std::vector<Real> n;  // d_qk
    Real m = Real(0);

    CellState() = default;
    CellState(std::size_t dqk, std::size_t dhv)
        : d_qk(dqk), d_hv(dhv), C(dqk * dhv, Real(0)), n(dqk, Real(0)) {}

    void validate() const {
        if (!std::isfinite(m)) throw std::domain_error("CellState: m non-finite");
        for (Real v : C)
            if (!std::isfinite(v)) throw std::domain_error("CellState: C non-finite");
        for (Real v : n)
            if (!std::isfinite(v)) throw std::domain_error("CellState: n non-finite");
    }
};

template <class Real>
struct StepInput {
    std::vector<Real> q, k;  // d_qk
    std::vector<Real> v;     // d_hv
    Real i_pre = Real(0);    // post-softcap (caller's job), or -inf sentinel
    Real f_pre = Real(0);    // post-softcap, or -inf reset sentinel
};

template <class Real>
CellState<Real> reset_state(const CellState<Real>& state) {
    return CellState<Real>(state.d_qk, state.d_hv);
}

namespace detail {

template <class Real>
inline bool is_neg_inf(Real x) {
    return std::isinf(x) && x < Real(0);
}

}  // namespace detail

// One recurrent step. h_tilde gets the pre-gate, pre-norm cell output.
template <class Real>
CellState<Real> cell_step(const StepInput<Real>& in, const CellState<Real>& state,
                          std::vector<Real>& h_tilde) {
    const std::size_t dqk = state.d_qk, dhv = state.d_hv;
    if (in.q.size() != dqk || in.k.size() != dqk || in.v.size() != dhv)
        throw std::invalid_argument("cell_step: dimension mismatch");
    if (checked_mode()) state.validate();

    const bool reset = detail::is_neg_inf(in.f_pre);
    const bool skip_write = detail::is_neg_inf(in.i_pre);

    // m_t = max(log sigma(f) + m_{t-1}, i);  with f = -inf the memory is
    // zeroed exactly and the new state depends only on the current token.
    Real lf = reset ? Real(0) : log_sigmoid(in.f_pre);
    Real decay_log = reset ? -std::numeric_limits<Real>::infinity()
                           : lf + state.m;
    Real m_t;
    if (reset && skip_write)
        m_t = Real(0);
    else if (reset)
        m_t = in.i_pre;
    else if (skip_write)
        m_t = decay_log;
    else
        m_t = std::max(decay_log, in.i_pre);

    Real f_t = reset ? Real(0) : std::exp(decay_log - m_t);
    Real i_t = skip_write ? Real(0) : std::exp(in.i_pre - m_t);

    CellState<Real> next(dqk, dhv);
    next.m = m_t;
    for (std::size_t a = 0; a < dqk; ++a) {
        const Real ka = i_t * in.k[a];
        Real* Crow = next.C.data() + a * dhv;
        const Real* Cprev = state.C.data() + a * dhv;
        for (std::size_t b = 0; b < dhv; ++b)
            Crow[b] = f_t * Cprev[b] + ka * in.v[b];
        next.n[a] = f_t * state.n[a] + i_t * in.k[a];
    }

    // h = C^T (q/sqrt(d_qk)) / max(|n^T q'|, exp(-m))
    const Real scale = Real(1) / std::sqrt(Real(dqk));
    Real dot = Real(0);
    h_tilde.assign(dhv, Real(0));
    for (std::size_t a = 0; a < dqk; ++a) {
        Real qa = in.q[a] * scale;
        dot += next.n[a] * qa;
        const Real* Crow = next.C.data() + a * dhv;
        for (std::size_t b = 0; b < dhv; ++b) h_tilde[b] += Crow[b] * qa;
    }
    Real den = std::max(std::abs(dot), std::exp(-m_t));
    if (checked_mode() && den == Real(0))
        throw std::domain_error("cell_step: zero output denominator");
    for (std::size_t b = 0; b < dhv; ++b) h_tilde[b] /= den;
    return next;
}

// Sequential fold of cell_step; ground-truth oracle for the chunkwise mode.
// H_tilde is T x d_hv, row-major.
template <class Real>
CellState<Real> recurrent_forward(const std::vector<StepInput<Real>>& seq,
                                  const CellState<Real>& state,
                                  std::vector<Real>& H_tilde) {
    CellState<Real> s = state;
    H_tilde.assign(seq.size() * state.d_hv, Real(0));
    std::vector<Real> h;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        s = cell_step(seq[t], s, h);
        std::copy(h.begin(), h.end(), H_tilde.begin() + t * state.d_hv);
    }
    return s;
}

// -------------------------------------------------------------------------
// Backprop through time.
//
// The max state is a pure rescaling: h_tilde is algebraically independent
// of m, so m is treated as a constant on the reverse pass (exact, not an
// approximation).
// -------------------------------------------------------------------------

template <class Real>
struct StepGrad {
    std::vector<Real> dq, dk, dv;
    Real di_pre = Real(0), df_pre = Real(0);
};

template <class Real>
struct RecurrentBackwardResult {
    std::vector<StepGrad<Real>> dseq;
    CellState<Real> dstate0;  // gradient w.r.t. the initial (C, n); m ignored
};

template <class Real>
RecurrentBackwardResult<Real> recurrent_backward(
    const std::vector<StepInput<Real>>& seq, const CellState<Real>& state0,
    const std::vector<Real>& dH) {
    const std::size_t T = seq.size();
    const std::size_t dqk = state0.d_qk, dhv = state0.d_hv;
    const Real scale = Real(1) / std::sqrt(Real(dqk));

    // Re-run the forward pass keeping all states.
    std::vector<CellState<Real>> states(T + 1);
    states[0] = state0;
    std::vector<std::vector<Real>> H(T);
    for (std::size_t t = 0; t < T; ++t)
        states[t + 1] = cell_step(seq[t], states[t], H[t]);

    RecurrentBackwardResult<Real> res;
    res.dseq.resize(T);
    res.dstate0 = CellState<Real>(dqk, dhv);

    std::vector<Real> dC(dqk * dhv, Real(0));
    std::vector<Real> dn(dqk, Real(0));

    for (std::size_t tt = T; tt-- > 0;) {
        const auto& in = seq[tt];
        const auto& prev = states[tt];
        const auto& cur = states[tt + 1];
        StepGrad<Real>& g = res.dseq[tt];
        g.dq.assign(dqk, Real(0));
        g.dk.assign(dqk, Real(0));
        g.dv.assign(dhv, Real(0));

        const bool reset = detail::is_neg_inf(in.f_pre);
        const bool skip_write = detail::is_neg_inf(in.i_pre);
        const Real lf = reset ? Real(0) : log_sigmoid(in.f_pre);
        const Real f_t =
            reset ? Real(0) : std::exp(lf + prev.m - cur.m);
        const Real i_t = skip_write ? Real(0) : std::exp(in.i_pre - cur.m);

        // Recompute the output pieces.
        Real dot = Real(0);
        for (std::size_t a = 0; a < dqk; ++a)
            dot += cur.n[a] * in.q[a] * scale;
        const Real floor = std::exp(-cur.m);
        const Real den = std::max(std::abs(dot), floor);
        const bool dot_active = std::abs(dot) >= floor;

        const Real* dh = dH.data() + tt * dhv;

        // h = num / den with num = C^T q'.
        // dnum_b = dh_b / den ; dden = -sum_b h_b dh_b / den
        Real h_dot_dh = Real(0);
        for (std::size_t b = 0; b < dhv; ++b) h_dot_dh += H[tt][b] * dh[b];
        const Real dden = -h_dot_dh / den;
        const Real ddot = dot_active
                              ? dden * (dot >= Real(0) ? Real(1) : Real(-1))
                              : Real(0);

        // Accumulate into the running dC_t, dn_t.
        for (std::size_t a = 0; a < dqk; ++a) {
            const Real qa = in.q[a] * scale;
            Real* dCrow = dC.data() + a * dhv;
            const Real* Crow = cur.C.data() + a * dhv;
            Real dq_a = Real(0);
            for (std::size_t b = 0; b < dhv; ++b) {
                const Real dnum_b = dh[b] / den;
                dCrow[b] += qa * dnum_b;
                dq_a += Crow[b] * dnum_b;
            }
            dq_a += ddot * cur.n[a];
            g.dq[a] = (dq_a)*scale;
            dn[a] += ddot * qa;
        }

        // Back through C_t = f C_{t-1} + i k v^T ; n_t = f n_{t-1} + i k.
        Real df = Real(0), di = Real(0);
        for (std::size_t a = 0; a < dqk; ++a) {
            Real* dCrow = dC.data() + a * dhv;
            const Real* Cprev = prev.C.data() + a * dhv;
            Real dk_a = Real(0);
            Real kv_dot = Real(0);
            for (std::size_t b = 0; b < dhv; ++b) {
                df += Cprev[b] * dCrow[b];
                kv_dot += in.v[b] * dCrow[b];
                g.dv[b] += i_t * in.k[a] * dCrow[b];
            }
            dk_a += i_t * kv_dot;
            di += in.k[a] * kv_dot;
            df += prev.n[a] * dn[a];
            di += in.k[a] * dn[a];
            dk_a += i_t * dn[a];
            g.dk[a] = dk_a;
        }
        // Gate pre-activations (m held constant):
        // f = exp(lf + m_{t-1} - m_t) -> df_pre = df * f * (1 - sigma(f_pre))
        // i = exp(i_pre - m_t)        -> di_pre = di * i
        g.df_pre = reset ? Real(0)
                         : df * f_t * (Real(1) - sigmoid(in.f_pre));
        g.di_pre = skip_write ? Real(0) : di * i_t;

        // Propagate to step t-1.
        for (std::size_t a = 0; a < dqk; ++a) {
            Real* dCrow = dC.data() + a * dhv;
            for (std::size_t b = 0; b < dhv; ++b) dCrow[b] *= f_t;
            dn[a] *= f_t;
        }
    }

    res.dstate0.C = std::move(dC);
    res.dstate0.n = std::move(dn);
    return res;
}

}  // namespace xlstm
