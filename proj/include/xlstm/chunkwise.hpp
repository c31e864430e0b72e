// Chunkwise-parallel mLSTM over full sequences. States are materialized
// only at chunk boundaries; within a chunk the outputs combine an
// inter-chunk memory readout with a causally masked, gate-decayed
// attention-style term. Numerically equivalent to recurrent_forward.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "xlstm/cell.hpp"

namespace xlstm {

struct ChunkConfig {
    std::size_t chunk_size = 64;
};

// Multiply-accumulate counters, split by term structure: quadratic
// within-chunk work vs. boundary-state work. Reset and read them around a
// call to observe one run's cost.
struct ChunkwiseCost {
    unsigned long long intra_macs = 0;  // ~ num_chunks * chunk_size^2 * d
    unsigned long long inter_macs = 0;  // ~ num_chunks * chunk_size * d_qk * d_hv
    void reset() { intra_macs = inter_macs = 0; }
};

inline ChunkwiseCost& chunkwise_cost() {
    static ChunkwiseCost c;
    return c;
}

// Activations saved by the forward pass for the backward pass.
template <class Real>
struct ChunkwiseSaved {
    std::size_t T = 0, T_pad = 0, d_qk = 0, d_hv = 0, chunk_size = 0;
    // Padded copies of the inputs.
    std::vector<Real> Q, K, V, i_pre, f_pre;
    // Per padded position.
    std::vector<Real> lf;       // log sigma(f_pre), 0 at reset positions
    std::vector<Real> b;        // within-chunk inclusive cumsum of lf
    std::vector<Real> m_row;    // exact recurrent max state at each position
    std::vector<Real> dot;      // n^T q' term of the denominator
    std::vector<Real> den;      // max(|dot|, exp(-m_row))
    std::vector<Real> H;        // padded outputs
    std::vector<int> seg;       // resets seen up to and including position
    std::vector<char> reset, skip;
    // State before each chunk (num_chunks entries) plus the final state.
    std::vector<CellState<Real>> boundary;
};

template <class Real>
struct ChunkwiseGrads {
    std::vector<Real> dQ, dK, dV;      // T x d
    std::vector<Real> di_pre, df_pre;  // T
    CellState<Real> dstate0;           // w.r.t. initial (C, n)
};

namespace detail {

// Exact scalar max-state recurrence, identical to cell_step's rules.
template <class Real>
Real m_step(Real m_prev, Real lf, bool reset, bool skip, Real i_pre) {
    if (reset && skip) return Real(0);
    if (reset) return i_pre;
    if (skip) return lf + m_prev;
    return std::max(lf + m_prev, i_pre);
}

}  // namespace detail

// Forward pass. Q, K are T x d_qk, V is T x d_hv, gate pre-activations are
// length T (post-softcap; -inf sentinels allowed: f_pre for document resets,
// i_pre for padding/skipped writes). H_tilde gets T x d_hv.
template <class Real>
CellState<Real> chunkwise_forward(const std::vector<Real>& Q,
                                  const std::vector<Real>& K,
                                  const std::vector<Real>& V,
                                  const std::vector<Real>& i_pre,
                                  const std::vector<Real>& f_pre,
                                  const CellState<Real>& state0,
                                  const ChunkConfig& cfg,
                                  std::vector<Real>& H_tilde,
                                  ChunkwiseSaved<Real>* saved = nullptr) {
    const std::size_t dqk = state0.d_qk, dhv = state0.d_hv;
    const std::size_t T = i_pre.size();
    if (cfg.chunk_size < 1)
        throw std::invalid_argument("chunkwise: chunk_size must be >= 1");
    if (Q.size() != T * dqk || K.size() != T * dqk || V.size() != T * dhv ||
        f_pre.size() != T)
        throw std::invalid_argument("chunkwise: dimension mismatch");

    H_tilde.assign(T * dhv, Real(0));
    if (T == 0) {
        if (saved) *saved = ChunkwiseSaved<Real>{};
        return state0;
    }

    if (cfg.chunk_size == 1) {
        // Every chunk is one token: the intra term degenerates and the
        // boundary recurrence is exactly cell_step.
        const Real scale = Real(1) / std::sqrt(Real(dqk));
        CellState<Real> s = state0;
        if (saved) {
            saved->T = saved->T_pad = T;
            saved->d_qk = dqk;
            saved->d_hv = dhv;
            saved->chunk_size = 1;
            saved->Q = Q;
            saved->K = K;
            saved->V = V;
            saved->i_pre = i_pre;
            saved->f_pre = f_pre;
            saved->lf.resize(T);
            saved->b.resize(T);
            saved->m_row.resize(T);
            saved->dot.resize(T);
            saved->den.resize(T);
            saved->seg.resize(T);
            saved->reset.resize(T);
            saved->skip.resize(T);
            saved->boundary.clear();
            saved->boundary.reserve(T + 1);
        }
        std::vector<Real> h;
        for (std::size_t t = 0; t < T; ++t) {
            StepInput<Real> in;
            in.q.assign(Q.begin() + t * dqk, Q.begin() + (t + 1) * dqk);
            in.k.assign(K.begin() + t * dqk, K.begin() + (t + 1) * dqk);
            in.v.assign(V.begin() + t * dhv, V.begin() + (t + 1) * dhv);
            in.i_pre = i_pre[t];
            in.f_pre = f_pre[t];
            if (saved) saved->boundary.push_back(s);
            CellState<Real> next = cell_step(in, s, h);
            std::copy(h.begin(), h.end(), H_tilde.begin() + t * dhv);
            if (saved) {
                const bool rs = detail::is_neg_inf(f_pre[t]);
                const bool sk = detail::is_neg_inf(i_pre[t]);
                saved->reset[t] = rs ? 1 : 0;
                saved->skip[t] = sk ? 1 : 0;
                saved->lf[t] = rs ? Real(0) : log_sigmoid(f_pre[t]);
                saved->b[t] = saved->lf[t];
                saved->seg[t] = rs ? 1 : 0;
                saved->m_row[t] = next.m;
                Real dot = Real(0);
                for (std::size_t a = 0; a < dqk; ++a)
                    dot += next.n[a] * in.q[a] * scale;
                saved->dot[t] = dot;
                saved->den[t] = std::max(std::abs(dot), std::exp(-next.m));
            }
            s = std::move(next);
        }
        if (saved) {
            saved->H = H_tilde;
            saved->boundary.push_back(s);
        }
        return s;
    }

    const std::size_t L = cfg.chunk_size;
    const std::size_t num_chunks = (T + L - 1) / L;
    const std::size_t Tp = num_chunks * L;

    // Right-pad: zero q/k/v, skipped write, no decay.
    std::vector<Real> Qp(Tp * dqk, Real(0)), Kp(Tp * dqk, Real(0)),
        Vp(Tp * dhv, Real(0));
    std::vector<Real> ip(Tp, -std::numeric_limits<Real>::infinity());
    std::vector<Real> fp(Tp, std::numeric_limits<Real>::infinity());
    std::copy(Q.begin(), Q.end(), Qp.begin());
    std::copy(K.begin(), K.end(), Kp.begin());
    std::copy(V.begin(), V.end(), Vp.begin());
    std::copy(i_pre.begin(), i_pre.end(), ip.begin());
    std::copy(f_pre.begin(), f_pre.end(), fp.begin());

    std::vector<char> reset(Tp), skip(Tp);
    std::vector<Real> lf(Tp), b(Tp), m_row(Tp), dotv(Tp, Real(0)),
        denv(Tp, Real(1));
    std::vector<int> seg(Tp);
    std::vector<Real> Hp(Tp * dhv, Real(0));

    const Real scale = Real(1) / std::sqrt(Real(dqk));

    CellState<Real> s = state0;
    std::vector<CellState<Real>> boundary;
    boundary.reserve(num_chunks + 1);

    // Scratch per chunk.
    std::vector<Real> Dm(L * L), A(L * L);
    std::vector<Real> w(L);

    for (std::size_t c = 0; c < num_chunks; ++c) {
        boundary.push_back(s);
        const std::size_t t0 = c * L;
        const std::vector<Real>& C0 = s.C;
        const std::vector<Real>& n0 = s.n;
        const Real m0 = s.m;

        // Gates, segments and the exact max-state sequence.
        int segc = 0;
        Real bc = Real(0);
        Real m_prev = m0;
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t t = t0 + j;
            reset[t] = detail::is_neg_inf(fp[t]) ? 1 : 0;
            skip[t] = detail::is_neg_inf(ip[t]) ? 1 : 0;
            lf[t] = reset[t] ? Real(0) : log_sigmoid(fp[t]);
            if (reset[t]) ++segc;
            seg[t] = segc;
            bc += lf[t];
            b[t] = bc;
            m_prev = detail::m_step(m_prev, lf[t], reset[t] != 0, skip[t] != 0,
                                    ip[t]);
            m_row[t] = m_prev;
        }

        // Decay weights. Row i combines the carried-in state (only when no
        // reset happened up to i) with same-segment intra-chunk writes.
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t ti = t0 + i;
            const Real mi = m_row[ti];
            w[i] = (seg[ti] == 0) ? std::exp(b[ti] + m0 - mi) : Real(0);
            for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t tj = t0 + j;
                const bool valid = !skip[tj] && seg[tj] == seg[ti];
                Dm[i * L + j] =
                    valid ? std::exp(b[ti] - b[tj] + ip[tj] - mi) : Real(0);
            }
            for (std::size_t j = i + 1; j < L; ++j) Dm[i * L + j] = Real(0);
        }

        chunkwise_cost().intra_macs +=
            static_cast<unsigned long long>(L) * (L + 1) / 2 * (dqk + dhv + 1);
        chunkwise_cost().inter_macs +=
            static_cast<unsigned long long>(2 * L) * dqk * dhv;

        // Attention scores A_ij = k_j . (q_i / sqrt(d_qk)).
        for (std::size_t i = 0; i < L; ++i) {
            const Real* qi = Qp.data() + (t0 + i) * dqk;
            for (std::size_t j = 0; j <= i; ++j) {
                const Real* kj = Kp.data() + (t0 + j) * dqk;
                Real acc = Real(0);
                for (std::size_t a = 0; a < dqk; ++a) acc += kj[a] * qi[a];
                A[i * L + j] = acc * scale;
            }
        }

        // Outputs: numerator, denominator, combination.
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t ti = t0 + i;
            const Real* qi = Qp.data() + ti * dqk;
            Real* hi = Hp.data() + ti * dhv;

            Real dot = Real(0);
            if (w[i] != Real(0)) {
                Real nq = Real(0);
                for (std::size_t a = 0; a < dqk; ++a)
                    nq += n0[a] * qi[a] * scale;
                dot = w[i] * nq;
                for (std::size_t a = 0; a < dqk; ++a) {
                    const Real qa = w[i] * qi[a] * scale;
                    const Real* Crow = C0.data() + a * dhv;
                    for (std::size_t bb = 0; bb < dhv; ++bb)
                        hi[bb] += qa * Crow[bb];
                }
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const Real wgt = Dm[i * L + j] * A[i * L + j];
                if (wgt == Real(0)) continue;
                dot += wgt;
                const Real* vj = Vp.data() + (t0 + j) * dhv;
                for (std::size_t bb = 0; bb < dhv; ++bb)
                    hi[bb] += wgt * vj[bb];
            }
            const Real den =
                std::max(std::abs(dot), std::exp(-m_row[ti]));
            dotv[ti] = dot;
            denv[ti] = den;
            for (std::size_t bb = 0; bb < dhv; ++bb) hi[bb] /= den;
        }

        // Inter-chunk state recurrence to the chunk boundary.
        const std::size_t tl = t0 + L - 1;
        const Real m_new = m_row[tl];
        const bool carry = (seg[tl] == 0);
        const Real f_c = carry ? std::exp(b[tl] + m0 - m_new) : Real(0);
        CellState<Real> next(dqk, dhv);
        next.m = m_new;
        for (std::size_t a = 0; a < dqk; ++a) {
            Real* Crow = next.C.data() + a * dhv;
            const Real* Cprev = C0.data() + a * dhv;
            for (std::size_t bb = 0; bb < dhv; ++bb)
                Crow[bb] = f_c * Cprev[bb];
            next.n[a] = f_c * n0[a];
        }
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t tj = t0 + j;
            if (skip[tj] || seg[tj] != seg[tl]) continue;
            const Real u = std::exp(b[tl] - b[tj] + ip[tj] - m_new);
            const Real* kj = Kp.data() + tj * dqk;
            const Real* vj = Vp.data() + tj * dhv;
            for (std::size_t a = 0; a < dqk; ++a) {
                const Real uk = u * kj[a];
                Real* Crow = next.C.data() + a * dhv;
                for (std::size_t bb = 0; bb < dhv; ++bb)
                    Crow[bb] += uk * vj[bb];
                next.n[a] += uk;
            }
        }
        s = std::move(next);
    }
    boundary.push_back(s);

    std::copy(Hp.begin(), Hp.begin() + T * dhv, H_tilde.begin());

    if (saved) {
        saved->T = T;
        saved->T_pad = Tp;
        saved->d_qk = dqk;
        saved->d_hv = dhv;
        saved->chunk_size = L;
        saved->Q = std::move(Qp);
        saved->K = std::move(Kp);
        saved->V = std::move(Vp);
        saved->i_pre = std::move(ip);
        saved->f_pre = std::move(fp);
        saved->lf = std::move(lf);
        saved->b = std::move(b);
        saved->m_row = std::move(m_row);
        saved->dot = std::move(dotv);
        saved->den = std::move(denv);
        saved->H = std::move(Hp);
        saved->seg = std::move(seg);
        saved->reset = std::move(reset);
        saved->skip = std::move(skip);
        saved->boundary = std::move(boundary);
    }
    return s;
}

// Backward pass. dH is T x d_hv; optional gradient w.r.t. the final state
// (dC_final / dn_final) may be supplied for state-threading callers.
// All max states are held constant: h_tilde is algebraically independent
// of them, so this is exact.
template <class Real>
ChunkwiseGrads<Real> chunkwise_backward(const ChunkwiseSaved<Real>& sv,
                                        const std::vector<Real>& dH,
                                        const std::vector<Real>* dC_final = nullptr,
                                        const std::vector<Real>* dn_final = nullptr) {
    const std::size_t T = sv.T, Tp = sv.T_pad, dqk = sv.d_qk, dhv = sv.d_hv;
    const std::size_t L = sv.chunk_size;
    ChunkwiseGrads<Real> g;
    g.dstate0 = CellState<Real>(dqk, dhv);
    if (T == 0) return g;
    if (dH.size() != T * dhv)
        throw std::invalid_argument("chunkwise_backward: dH size mismatch");
    const std::size_t num_chunks = Tp / L;
    const Real scale = Real(1) / std::sqrt(Real(dqk));

    std::vector<Real> dQ(Tp * dqk, Real(0)), dK(Tp * dqk, Real(0)),
        dV(Tp * dhv, Real(0)), di(Tp, Real(0)), db(Tp, Real(0)),
        dlf(Tp, Real(0));

    std::vector<Real> dC(dqk * dhv, Real(0)), dn(dqk, Real(0));
    if (dC_final) dC = *dC_final;
    if (dn_final) dn = *dn_final;

    std::vector<Real> Dm(L * L), A(L * L), w(L);

    for (std::size_t c = num_chunks; c-- > 0;) {
        const std::size_t t0 = c * L;
        const std::size_t tl = t0 + L - 1;
        const CellState<Real>& s0 = sv.boundary[c];
        const std::vector<Real>& C0 = s0.C;
        const std::vector<Real>& n0 = s0.n;
        const Real m0 = s0.m;
        const Real m_new = sv.m_row[tl];
        const bool carry = (sv.seg[tl] == 0);
        const Real f_c = carry ? std::exp(sv.b[tl] + m0 - m_new) : Real(0);

        // Recompute decay weights and scores.
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t ti = t0 + i;
            const Real mi = sv.m_row[ti];
            w[i] = (sv.seg[ti] == 0) ? std::exp(sv.b[ti] + m0 - mi) : Real(0);
            const Real* qi = sv.Q.data() + ti * dqk;
            for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t tj = t0 + j;
                const bool valid = !sv.skip[tj] && sv.seg[tj] == sv.seg[ti];
                Dm[i * L + j] =
                    valid ? std::exp(sv.b[ti] - sv.b[tj] + sv.i_pre[tj] - mi)
                          : Real(0);
                const Real* kj = sv.K.data() + tj * dqk;
                Real acc = Real(0);
                for (std::size_t a = 0; a < dqk; ++a) acc += kj[a] * qi[a];
                A[i * L + j] = acc * scale;
            }
        }

        // ---- Back through the chunk-end state update.
        // C_new = f_c C0 + sum_j u_j k_j v_j^T ; n_new likewise.
        std::vector<Real> dC_prev(dqk * dhv, Real(0)), dn_prev(dqk, Real(0));
        Real df_c = Real(0);
        for (std::size_t a = 0; a < dqk; ++a) {
            const Real* dCrow = dC.data() + a * dhv;
            const Real* Crow = C0.data() + a * dhv;
            Real* dProw = dC_prev.data() + a * dhv;
            for (std::size_t bb = 0; bb < dhv; ++bb) {
                dProw[bb] = f_c * dCrow[bb];
                df_c += Crow[bb] * dCrow[bb];
            }
            dn_prev[a] = f_c * dn[a];
            df_c += n0[a] * dn[a];
        }
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t tj = t0 + j;
            if (sv.skip[tj] || sv.seg[tj] != sv.seg[tl]) continue;
            const Real u =
                std::exp(sv.b[tl] - sv.b[tj] + sv.i_pre[tj] - m_new);
            const Real* kj = sv.K.data() + tj * dqk;
            const Real* vj = sv.V.data() + tj * dhv;
            Real du = Real(0);
            for (std::size_t a = 0; a < dqk; ++a) {
                const Real* dCrow = dC.data() + a * dhv;
                Real p = Real(0);  // (dC v_j)_a
                for (std::size_t bb = 0; bb < dhv; ++bb)
                    p += dCrow[bb] * vj[bb];
                du += kj[a] * (p + dn[a]);
                dK[tj * dqk + a] += u * (p + dn[a]);
            }
            for (std::size_t bb = 0; bb < dhv; ++bb) {
                Real p = Real(0);  // (dC^T k_j)_bb
                for (std::size_t a = 0; a < dqk; ++a)
                    p += dC[a * dhv + bb] * kj[a];
                dV[tj * dhv + bb] += u * p;
            }
            const Real e = u * du;
            db[tl] += e;
            db[tj] -= e;
            di[tj] += e;
        }
        if (carry) db[tl] += f_c * df_c;

        // ---- Back through the outputs of this chunk.
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t ti = t0 + i;
            if (ti >= T) continue;  // pad rows carry no upstream gradient
            const Real* dh = dH.data() + ti * dhv;
            const Real* hi = sv.H.data() + ti * dhv;
            const Real den = sv.den[ti];
            const Real dot = sv.dot[ti];
            const Real floor = std::exp(-sv.m_row[ti]);

            Real h_dot_dh = Real(0);
            for (std::size_t bb = 0; bb < dhv; ++bb)
                h_dot_dh += hi[bb] * dh[bb];
            const Real dden = -h_dot_dh / den;
            const Real ddot =
                std::abs(dot) >= floor
                    ? dden * (dot >= Real(0) ? Real(1) : Real(-1))
                    : Real(0);

            const Real* qi = sv.Q.data() + ti * dqk;
            Real* dqi = dQ.data() + ti * dqk;

            if (w[i] != Real(0)) {
                Real dw = Real(0);
                Real nq = Real(0);
                for (std::size_t a = 0; a < dqk; ++a)
                    nq += n0[a] * qi[a] * scale;
                dw += ddot * nq;
                for (std::size_t a = 0; a < dqk; ++a) {
                    const Real* Crow = C0.data() + a * dhv;
                    Real* dProw = dC_prev.data() + a * dhv;
                    Real cq = Real(0);
                    for (std::size_t bb = 0; bb < dhv; ++bb) {
                        const Real dnum = dh[bb] / den;
                        dProw[bb] += w[i] * qi[a] * scale * dnum;
                        cq += Crow[bb] * dnum;
                    }
                    dw += qi[a] * scale * cq;
                    dqi[a] += w[i] * scale * (cq + ddot * n0[a]);
                    dn_prev[a] += w[i] * ddot * qi[a] * scale;
                }
                db[ti] += w[i] * dw;  // g_i = b_i + m0
            }

            for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t tj = t0 + j;
                const Real dm = Dm[i * L + j];
                if (dm == Real(0)) continue;
                const Real a_ij = A[i * L + j];
                const Real* vj = sv.V.data() + tj * dhv;
                Real v_dnum = Real(0);
                for (std::size_t bb = 0; bb < dhv; ++bb) {
                    const Real dnum = dh[bb] / den;
                    v_dnum += vj[bb] * dnum;
                    dV[tj * dhv + bb] += dm * a_ij * dnum;
                }
                const Real common = v_dnum + ddot;
                const Real dA_ij = dm * common;
                const Real e = dm * a_ij * common;  // d/d(exponent)
                db[ti] += e;
                db[tj] -= e;
                di[tj] += e;
                const Real* kj = sv.K.data() + tj * dqk;
                for (std::size_t a = 0; a < dqk; ++a) {
                    dK[tj * dqk + a] += dA_ij * qi[a] * scale;
                    dqi[a] += dA_ij * kj[a] * scale;
                }
            }
        }

        // b_i is an inclusive within-chunk cumsum of lf.
        Real acc = Real(0);
        for (std::size_t i = L; i-- > 0;) {
            acc += db[t0 + i];
            dlf[t0 + i] = acc;
        }

        dC = std::move(dC_prev);
        dn = std::move(dn_prev);
    }

    g.dQ.assign(dQ.begin(), dQ.begin() + T * dqk);
    g.dK.assign(dK.begin(), dK.begin() + T * dqk);
    g.dV.assign(dV.begin(), dV.begin() + T * dhv);
    g.di_pre.assign(T, Real(0));
    g.df_pre.assign(T, Real(0));
    for (std::size_t t = 0; t < T; ++t) {
        if (!sv.skip[t]) g.di_pre[t] = di[t];
        if (!sv.reset[t] && std::isfinite(sv.f_pre[t]))
            g.df_pre[t] = dlf[t] * (Real(1) - sigmoid(sv.f_pre[t]));
    }
    g.dstate0.C = std::move(dC);
    g.dstate0.n = std::move(dn);
    return g;
}

}  // namespace xlstm
