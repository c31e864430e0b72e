// Decoder stack: multi-head mLSTM layer, post-up-projection residual block,
// embeddings, capped logits, and the recurrent generation path. Backward
// passes accumulate into a flat gradient buffer laid out like ParameterSet.
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlstm/cell.hpp"
#include "xlstm/chunkwise.hpp"
#include "xlstm/numerics.hpp"
#include "xlstm/params.hpp"

namespace xlstm {

inline constexpr std::size_t no_param = static_cast<std::size_t>(-1);

template <class Real>
struct ModelState {
    std::vector<CellState<Real>> cells;  // num_blocks x num_heads
    std::size_t pos = 0;
    int prev_token = -1;  // drives the end-of-document reset across calls
};

template <class Real>
ModelState<Real> fresh_state(const ModelConfig& cfg) {
    ModelState<Real> s;
    s.cells.reserve(cfg.num_blocks * cfg.num_heads);
    for (std::size_t i = 0; i < cfg.num_blocks * cfg.num_heads; ++i)
        s.cells.emplace_back(cfg.d_qk(), cfg.d_hv());
    return s;
}

struct BlockOffsets {
    std::size_t norm_mlstm = no_param, W_q = no_param, W_k = no_param,
                W_v = no_param, b_q = no_param, b_k = no_param,
                b_v = no_param, w_ig = no_param, b_ig = no_param,
                w_fg = no_param, b_fg = no_param, W_og = no_param,
                b_og = no_param, hnorm = no_param, W_proj = no_param,
                norm_ffn = no_param, w_gate = no_param, w_up = no_param,
                w_down = no_param;
};

template <class Real>
BlockOffsets block_offsets(const ParameterSet<Real>& p, std::size_t b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    auto get = [&](const char* n) { return p.info(pre + n).offset; };
    auto opt = [&](const char* n) {
        return p.has(pre + n) ? p.info(pre + n).offset : no_param;
    };
    BlockOffsets o;
    o.norm_mlstm = get("norm_mlstm");
    o.W_q = get("W_q");
    o.W_k = get("W_k");
    o.W_v = get("W_v");
    o.b_q = opt("b_q");
    o.b_k = opt("b_k");
    o.b_v = opt("b_v");
    o.w_ig = get("w_ig");
    o.b_ig = get("b_ig");
    o.w_fg = get("w_fg");
    o.b_fg = get("b_fg");
    o.W_og = get("W_og");
    o.b_og = opt("b_og");
    o.hnorm = get("hnorm");
    o.W_proj = get("W_proj");
    o.norm_ffn = get("norm_ffn");
    o.w_gate = get("w_gate");
    o.w_up = get("w_up");
    o.w_down = get("w_down");
    return o;
}

namespace detail {

template <class Real>
const Real* maybe(const Real* base, std::size_t off) {
    return off == no_param ? nullptr : base + off;
}
template <class Real>
Real* maybe(Real* base, std::size_t off) {
    return off == no_param ? nullptr : base + off;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mLSTM layer
// ---------------------------------------------------------------------------

template <class Real>
struct LayerSaved {
    std::size_t T = 0;
    std::vector<Real> X;             // layer input, T x d
    std::vector<Real> Q, K, V;       // T x (heads * width), head-major rows
    std::vector<Real> a_i, a_f;      // T x H, gate affines before capping
    std::vector<Real> i_pre, f_pre;  // T x H, after capping and resets
    std::vector<ChunkwiseSaved<Real>> heads;
    std::vector<Real> Ht;      // concatenated cell outputs, T x d
    std::vector<Real> hn;      // after headwise norm, T x d
    std::vector<Real> og_pre;  // output-gate pre-activation, T x d
    std::vector<Real> gated;   // sigma(og) * hn, T x d
    std::vector<char> reset;   // per position
};

// X is T x d_model (already pre-normed by the caller). cells holds one state
// per head and is advanced in place. reset marks positions whose state is
// cleared before the write (document boundaries). Y gets T x d_model.
// Pass saved (chunkwise mode only) to enable the backward pass.
template <class Real>
void mlstm_layer_forward(const Real* X, std::size_t T, const ModelConfig& cfg,
                         const Real* P, const BlockOffsets& off, Mode mode,
                         const ChunkConfig& ck, CellState<Real>* cells,
                         const std::vector<char>* reset, Real* Y,
                         LayerSaved<Real>* saved = nullptr) {
    const std::size_t d = cfg.d_model, H = cfg.num_heads;
    const std::size_t dqk = cfg.d_qk(), dhv = cfg.d_hv(), Dq = H * dqk;
    if (saved && mode != Mode::chunkwise)
        throw std::invalid_argument(
            "mlstm_layer_forward: backward requires chunkwise mode");
    if (reset && reset->size() != T)
        throw std::invalid_argument("mlstm_layer_forward: reset size");

    std::vector<Real> Q(T * Dq), K(T * Dq), V(T * d);
    linear_forward(X, P + off.W_q, detail::maybe(P, off.b_q), T, d, Dq,
                   Q.data());
    linear_forward(X, P + off.W_k, detail::maybe(P, off.b_k), T, d, Dq,
                   K.data());
    linear_forward(X, P + off.W_v, detail::maybe(P, off.b_v), T, d, d,
                   V.data());

    std::vector<Real> a_i(T * H), a_f(T * H);
    linear_forward(X, P + off.w_ig, P + off.b_ig, T, d, H, a_i.data());
    linear_forward(X, P + off.w_fg, P + off.b_fg, T, d, H, a_f.data());

    const Real cap = Real(cfg.gate_cap);
    std::vector<Real> i_pre(T * H), f_pre(T * H);
    for (std::size_t t = 0; t < T; ++t) {
        const bool rst = reset && (*reset)[t];
        for (std::size_t h = 0; h < H; ++h) {
            i_pre[t * H + h] = cfg.cap_gates
                                   ? softcap_scalar(a_i[t * H + h], cap)
                                   : a_i[t * H + h];
            f_pre[t * H + h] = rst ? forget_reset_sentinel<Real>()
                               : cfg.cap_gates
                                   ? softcap_scalar(a_f[t * H + h], cap)
                                   : a_f[t * H + h];
        }
    }

    if (saved) saved->heads.resize(H);
    std::vector<Real> Ht(T * d);
    std::vector<Real> qh(T * dqk), kh(T * dqk), vh(T * dhv), ip(T), fp(T);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < T; ++t) {
            std::copy_n(Q.data() + t * Dq + h * dqk, dqk, qh.data() + t * dqk);
            std::copy_n(K.data() + t * Dq + h * dqk, dqk, kh.data() + t * dqk);
            std::copy_n(V.data() + t * d + h * dhv, dhv, vh.data() + t * dhv);
            ip[t] = i_pre[t * H + h];
            fp[t] = f_pre[t * H + h];
        }
        std::vector<Real> Hh;
        if (mode == Mode::chunkwise) {
            cells[h] = chunkwise_forward(qh, kh, vh, ip, fp, cells[h], ck, Hh,
                                         saved ? &saved->heads[h] : nullptr);
        } else {
            Hh.resize(T * dhv);
            std::vector<Real> h_t;
            StepInput<Real> in;
            for (std::size_t t = 0; t < T; ++t) {
                in.q.assign(qh.begin() + t * dqk, qh.begin() + (t + 1) * dqk);
                in.k.assign(kh.begin() + t * dqk, kh.begin() + (t + 1) * dqk);
                in.v.assign(vh.begin() + t * dhv, vh.begin() + (t + 1) * dhv);
                in.i_pre = ip[t];
                in.f_pre = fp[t];
                cells[h] = cell_step(in, cells[h], h_t);
                std::copy_n(h_t.data(), dhv, Hh.data() + t * dhv);
            }
        }
        for (std::size_t t = 0; t < T; ++t)
            std::copy_n(Hh.data() + t * dhv, dhv, Ht.data() + t * d + h * dhv);
    }

    std::vector<Real> hn(T * d);
    const Real eps = Real(cfg.norm_eps);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
            layernorm_row(Ht.data() + t * d + h * dhv, P + off.hnorm + h * dhv,
                          (const Real*)nullptr, eps, dhv,
                          hn.data() + t * d + h * dhv);

    std::vector<Real> og_pre(T * d), gated(T * d);
    linear_forward(X, P + off.W_og, detail::maybe(P, off.b_og), T, d, d,
                   og_pre.data());
    for (std::size_t i = 0; i < T * d; ++i)
        gated[i] = sigmoid(og_pre[i]) * hn[i];

    linear_forward(gated.data(), P + off.W_proj, (const Real*)nullptr, T, d, d,
                   Y);

    if (saved) {
        saved->T = T;
        saved->X.assign(X, X + T * d);
        saved->Q = std::move(Q);
        saved->K = std::move(K);
        saved->V = std::move(V);
        saved->a_i = std::move(a_i);
        saved->a_f = std::move(a_f);
        saved->i_pre = std::move(i_pre);
        saved->f_pre = std::move(f_pre);
        saved->Ht = std::move(Ht);
        saved->hn = std::move(hn);
        saved->og_pre = std::move(og_pre);
        saved->gated = std::move(gated);
        saved->reset = reset ? *reset : std::vector<char>(T, 0);
    }
}

// Accumulates parameter gradients into G and input gradients into dX.
template <class Real>
void mlstm_layer_backward(const LayerSaved<Real>& sv, const ModelConfig& cfg,
                          const Real* P, const BlockOffsets& off,
                          const Real* dY, Real* G, Real* dX) {
    const std::size_t T = sv.T, d = cfg.d_model, H = cfg.num_heads;
    const std::size_t dqk = cfg.d_qk(), dhv = cfg.d_hv(), Dq = H * dqk;
    const Real eps = Real(cfg.norm_eps);
    const Real cap = Real(cfg.gate_cap);

    std::vector<Real> dgated(T * d, Real(0));
    linear_backward(sv.gated.data(), P + off.W_proj, dY, T, d, d,
                    dgated.data(), G + off.W_proj, (Real*)nullptr);

    std::vector<Real> dog_pre(T * d), dhn(T * d);
    for (std::size_t i = 0; i < T * d; ++i) {
        const Real s = sigmoid(sv.og_pre[i]);
        dog_pre[i] = dgated[i] * sv.hn[i] * s * (Real(1) - s);
        dhn[i] = dgated[i] * s;
    }
    linear_backward(sv.X.data(), P + off.W_og, dog_pre.data(), T, d, d, dX,
                    G + off.W_og, detail::maybe(G, off.b_og));

    std::vector<Real> dHt(T * d, Real(0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
            layernorm_row_backward(sv.Ht.data() + t * d + h * dhv,
                                   P + off.hnorm + h * dhv, eps, dhv,
                                   dhn.data() + t * d + h * dhv,
                                   dHt.data() + t * d + h * dhv,
                                   G + off.hnorm + h * dhv, (Real*)nullptr);

    std::vector<Real> dQ(T * Dq, Real(0)), dK(T * Dq, Real(0)),
        dV(T * d, Real(0)), da_i(T * H), da_f(T * H);
    std::vector<Real> dHh(T * dhv);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < T; ++t)
            std::copy_n(dHt.data() + t * d + h * dhv, dhv,
                        dHh.data() + t * dhv);
        auto g = chunkwise_backward(sv.heads[h], dHh);
        for (std::size_t t = 0; t < T; ++t) {
            std::copy_n(g.dQ.data() + t * dqk, dqk,
                        dQ.data() + t * Dq + h * dqk);
            std::copy_n(g.dK.data() + t * dqk, dqk,
                        dK.data() + t * Dq + h * dqk);
            std::copy_n(g.dV.data() + t * dhv, dhv,
                        dV.data() + t * d + h * dhv);
            da_i[t * H + h] =
                cfg.cap_gates
                    ? g.di_pre[t] * softcap_grad_scalar(sv.a_i[t * H + h], cap)
                    : g.di_pre[t];
            // df_pre is zero at reset positions, so capping backprop is safe.
            da_f[t * H + h] =
                cfg.cap_gates
                    ? g.df_pre[t] * softcap_grad_scalar(sv.a_f[t * H + h], cap)
                    : g.df_pre[t];
        }
    }

    linear_backward(sv.X.data(), P + off.W_q, dQ.data(), T, d, Dq, dX,
                    G + off.W_q, detail::maybe(G, off.b_q));
    linear_backward(sv.X.data(), P + off.W_k, dK.data(), T, d, Dq, dX,
                    G + off.W_k, detail::maybe(G, off.b_k));
    linear_backward(sv.X.data(), P + off.W_v, dV.data(), T, d, d, dX,
                    G + off.W_v, detail::maybe(G, off.b_v));
    linear_backward(sv.X.data(), P + off.w_ig, da_i.data(), T, d, H, dX,
                    G + off.w_ig, G + off.b_ig);
    linear_backward(sv.X.data(), P + off.w_fg, da_f.data(), T, d, H, dX,
                    G + off.w_fg, G + off.b_fg);
}

// ---------------------------------------------------------------------------
// Gated feedforward (raw-pointer twin of swiglu_mlp, shared with the
// attention comparator)
// ---------------------------------------------------------------------------

template <class Real>
void ffn_forward(const Real* X, std::size_t T, std::size_t d, std::size_t dff,
                 const Real* Wg, const Real* Wu, const Real* Wd, Real* Y) {
    std::vector<Real> gpre(T * dff), u(T * dff);
    linear_forward(X, Wg, (const Real*)nullptr, T, d, dff, gpre.data());
    linear_forward(X, Wu, (const Real*)nullptr, T, d, dff, u.data());
    for (std::size_t i = 0; i < gpre.size(); ++i)
        gpre[i] = swish(gpre[i]) * u[i];
    linear_forward(gpre.data(), Wd, (const Real*)nullptr, T, dff, d, Y);
}

// Recomputes the hidden activations from X; accumulates into dX and dW*.
template <class Real>
void ffn_backward(const Real* X, std::size_t T, std::size_t d, std::size_t dff,
                  const Real* Wg, const Real* Wu, const Real* Wd,
                  const Real* dY, Real* dX, Real* dWg, Real* dWu, Real* dWd) {
    std::vector<Real> gpre(T * dff), u(T * dff), act(T * dff);
    linear_forward(X, Wg, (const Real*)nullptr, T, d, dff, gpre.data());
    linear_forward(X, Wu, (const Real*)nullptr, T, d, dff, u.data());
    for (std::size_t i = 0; i < act.size(); ++i)
        act[i] = swish(gpre[i]) * u[i];

    std::vector<Real> dact(T * dff, Real(0));
    linear_backward(act.data(), Wd, dY, T, dff, d, dact.data(), dWd,
                    (Real*)nullptr);
    std::vector<Real> dgpre(T * dff), du(T * dff);
    for (std::size_t i = 0; i < dact.size(); ++i) {
        dgpre[i] = dact[i] * u[i] * swish_grad(gpre[i]);
        du[i] = dact[i] * swish(gpre[i]);
    }
    linear_backward(X, Wg, dgpre.data(), T, d, dff, dX, dWg, (Real*)nullptr);
    linear_backward(X, Wu, du.data(), T, d, dff, dX, dWu, (Real*)nullptr);
}

// ---------------------------------------------------------------------------
// Residual block: z = x + mLSTM(Norm(x)); y = z + FFN(Norm(z))
// ---------------------------------------------------------------------------

template <class Real>
struct BlockSaved {
    std::vector<Real> x, xn;  // block input and its pre-norm
    LayerSaved<Real> layer;
    std::vector<Real> z, zn;  // mid residual and its pre-norm
};

template <class Real>
void block_forward(const Real* x, std::size_t T, const ModelConfig& cfg,
                   const Real* P, const BlockOffsets& off, Mode mode,
                   const ChunkConfig& ck, CellState<Real>* cells,
                   const std::vector<char>* reset, Real* y,
                   BlockSaved<Real>* saved = nullptr) {
    const std::size_t d = cfg.d_model, dff = cfg.d_ff();
    const Real eps = Real(cfg.norm_eps);

    std::vector<Real> xn(T * d), a(T * d), z(T * d), zn(T * d), f(T * d);
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(x + t * d, P + off.norm_mlstm, eps, d, xn.data() + t * d);
    mlstm_layer_forward(xn.data(), T, cfg, P, off, mode, ck, cells, reset,
                        a.data(), saved ? &saved->layer : nullptr);
    for (std::size_t i = 0; i < T * d; ++i) z[i] = x[i] + a[i];
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(z.data() + t * d, P + off.norm_ffn, eps, d,
                    zn.data() + t * d);
    ffn_forward(zn.data(), T, d, dff, P + off.w_gate, P + off.w_up,
                P + off.w_down, f.data());
    for (std::size_t i = 0; i < T * d; ++i) y[i] = z[i] + f[i];

    if (saved) {
        saved->x.assign(x, x + T * d);
        saved->xn = std::move(xn);
        saved->z = std::move(z);
        saved->zn = std::move(zn);
    }
}

template <class Real>
void block_backward(const BlockSaved<Real>& sv, const ModelConfig& cfg,
                    const Real* P, const BlockOffsets& off, const Real* dY,
                    Real* G, Real* dx) {
    const std::size_t T = sv.layer.T, d = cfg.d_model, dff = cfg.d_ff();
    const Real eps = Real(cfg.norm_eps);

    std::vector<Real> dzn(T * d, Real(0));
    ffn_backward(sv.zn.data(), T, d, dff, P + off.w_gate, P + off.w_up,
                 P + off.w_down, dY, dzn.data(), G + off.w_gate, G + off.w_up,
                 G + off.w_down);
    std::vector<Real> dz(dY, dY + T * d);
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row_backward(sv.z.data() + t * d, P + off.norm_ffn, eps, d,
                             dzn.data() + t * d, dz.data() + t * d,
                             G + off.norm_ffn);

    std::vector<Real> dxn(T * d, Real(0));
    mlstm_layer_backward(sv.layer, cfg, P, off, dz.data(), G, dxn.data());
    for (std::size_t i = 0; i < T * d; ++i) dx[i] += dz[i];
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row_backward(sv.x.data() + t * d, P + off.norm_mlstm, eps, d,
                             dxn.data() + t * d, dx + t * d,
                             G + off.norm_mlstm);
}

// ---------------------------------------------------------------------------
// Full stack
// ---------------------------------------------------------------------------

template <class Real>
struct ModelSaved {
    std::vector<int> tokens;
    std::vector<char> reset;
    std::vector<BlockSaved<Real>> blocks;
    std::vector<Real> h_final, hn_final;  // last block output, final norm
    std::vector<Real> logits_pre;         // before logit capping
};

// Positions whose state must be cleared: the token right after an
// end-of-document marker starts a fresh document.
template <class Real>
std::vector<char> eod_resets(const std::vector<int>& tokens,
                             const ModelConfig& cfg,
                             const ModelState<Real>& state) {
    std::vector<char> reset(tokens.size(), 0);
    const int eod = static_cast<int>(cfg.eod_token_id);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const int prev = t == 0 ? state.prev_token : tokens[t - 1];
        reset[t] = prev == eod ? 1 : 0;
    }
    return reset;
}

template <class Real>
std::vector<Real> model_forward(const std::vector<int>& tokens,
                                const ModelConfig& cfg,
                                const ParameterSet<Real>& params, Mode mode,
                                ModelState<Real>& state,
                                const ChunkConfig& ck = {},
                                ModelSaved<Real>* saved = nullptr) {
    const std::size_t T = tokens.size(), d = cfg.d_model, H = cfg.num_heads;
    if (state.cells.size() != cfg.num_blocks * H)
        throw std::invalid_argument("model_forward: state/config mismatch");
    for (int id : tokens)
        if (id < 0 || std::size_t(id) >= cfg.vocab_size)
            throw std::out_of_range("model_forward: token id out of range");

    const Real* P = params.data.data();
    std::vector<char> reset = eod_resets(tokens, cfg, state);

    std::vector<Real> x(T * d);
    const Real* emb = params.ptr("embedding");
    for (std::size_t t = 0; t < T; ++t)
        std::copy_n(emb + std::size_t(tokens[t]) * d, d, x.data() + t * d);

    if (saved) saved->blocks.resize(cfg.num_blocks);
    std::vector<Real> y(T * d);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const BlockOffsets off = block_offsets(params, b);
        block_forward(x.data(), T, cfg, P, off, mode, ck,
                      state.cells.data() + b * H, &reset, y.data(),
                      saved ? &saved->blocks[b] : nullptr);
        x.swap(y);
    }

    std::vector<Real> hn(T * d);
    const Real eps = Real(cfg.norm_eps);
    const Real* fnorm = params.ptr("final_norm");
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(x.data() + t * d, fnorm, eps, d, hn.data() + t * d);

    std::vector<Real> logits(T * cfg.vocab_size);
    linear_forward(hn.data(), params.ptr("lm_head"), (const Real*)nullptr, T,
                   d, cfg.vocab_size, logits.data());
    if (saved) {
        saved->tokens = tokens;
        saved->reset = std::move(reset);
        saved->h_final = x;
        saved->hn_final = hn;
        saved->logits_pre = logits;
    }
    if (cfg.cap_logits) {
        const Real cap = Real(cfg.logit_cap);
        for (auto& v : logits) v = softcap_scalar(v, cap);
    }

    state.pos += T;
    if (!tokens.empty()) state.prev_token = tokens.back();
    return logits;
}

// Accumulates parameter gradients into G (size params.size(), caller-zeroed).
template <class Real>
void model_backward(const ModelSaved<Real>& sv, const ModelConfig& cfg,
                    const ParameterSet<Real>& params,
                    const std::vector<Real>& dlogits, std::vector<Real>& G) {
    const std::size_t T = sv.tokens.size(), d = cfg.d_model;
    if (G.size() != params.size())
        throw std::invalid_argument("model_backward: gradient buffer size");
    if (dlogits.size() != T * cfg.vocab_size)
        throw std::invalid_argument("model_backward: dlogits size");
    const Real* P = params.data.data();
    const Real eps = Real(cfg.norm_eps);

    std::vector<Real> dpre = dlogits;
    if (cfg.cap_logits) {
        const Real cap = Real(cfg.logit_cap);
        for (std::size_t i = 0; i < dpre.size(); ++i)
            dpre[i] *= softcap_grad_scalar(sv.logits_pre[i], cap);
    }

    std::vector<Real> dhn(T * d, Real(0));
    linear_backward(sv.hn_final.data(), params.ptr("lm_head"), dpre.data(), T,
                    d, cfg.vocab_size, dhn.data(),
                    G.data() + params.info("lm_head").offset, (Real*)nullptr);

    std::vector<Real> dx(T * d, Real(0));
    const std::size_t fnorm_off = params.info("final_norm").offset;
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row_backward(sv.h_final.data() + t * d, P + fnorm_off, eps, d,
                             dhn.data() + t * d, dx.data() + t * d,
                             G.data() + fnorm_off);

    std::vector<Real> dprev(T * d);
    for (std::size_t b = cfg.num_blocks; b-- > 0;) {
        const BlockOffsets off = block_offsets(params, b);
        std::fill(dprev.begin(), dprev.end(), Real(0));
        block_backward(sv.blocks[b], cfg, P, off, dx.data(), G.data(),
                       dprev.data());
        dx.swap(dprev);
    }

    Real* demb = G.data() + params.info("embedding").offset;
    for (std::size_t t = 0; t < T; ++t) {
        Real* row = demb + std::size_t(sv.tokens[t]) * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += dx[t * d + i];
    }
}

// ---------------------------------------------------------------------------
// Generation: chunkwise prefill, recurrent single-token decode
// ---------------------------------------------------------------------------

struct Sampler {
    enum class Kind { greedy, temperature };
    Kind kind = Kind::greedy;
    double tau = 1.0;
};

namespace detail {

template <class Real>
int pick_token(const Real* logits, std::size_t vocab, const Sampler& s,
               std::mt19937_64& rng) {
    if (s.kind == Sampler::Kind::greedy) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < vocab; ++i)
            if (logits[i] > logits[best]) best = i;  // ties keep lowest id
        return static_cast<int>(best);
    }
    if (s.tau <= 0) throw std::invalid_argument("temperature must be > 0");
    Real mx = logits[0];
    for (std::size_t i = 1; i < vocab; ++i) mx = std::max(mx, logits[i]);
    std::vector<double> p(vocab);
    double sum = 0;
    for (std::size_t i = 0; i < vocab; ++i)
        sum += p[i] = std::exp(double(logits[i] - mx) / s.tau);
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * sum;
    for (std::size_t i = 0; i < vocab; ++i) {
        u -= p[i];
        if (u <= 0) return static_cast<int>(i);
    }
    return static_cast<int>(vocab - 1);
}

}  // namespace detail

template <class Real>
std::vector<int> generate(const std::vector<int>& prompt,
                          const ModelConfig& cfg,
                          const ParameterSet<Real>& params,
                          std::size_t n_tokens, const Sampler& sampler,
                          std::uint64_t seed, const ChunkConfig& ck = {},
                          ModelState<Real>* state_out = nullptr) {
    if (prompt.empty() && n_tokens > 0)
        throw std::invalid_argument("generate: prompt must not be empty");
    ModelState<Real> state = fresh_state<Real>(cfg);
    std::vector<Real> logits;
    if (!prompt.empty())
        logits = model_forward(prompt, cfg, params, Mode::chunkwise, state, ck);

    std::mt19937_64 rng(seed);
    std::vector<int> out;
    out.reserve(n_tokens);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        const Real* last =
            logits.data() + (logits.size() - cfg.vocab_size);
        int tok = detail::pick_token(last, cfg.vocab_size, sampler, rng);
        out.push_back(tok);
        logits = model_forward({tok}, cfg, params, Mode::recurrent, state);
    }
    if (state_out) *state_out = std::move(state);
    return out;
}

}  // namespace xlstm
