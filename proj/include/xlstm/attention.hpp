// Naive causal multi-head attention comparator in the same pre-norm residual
// block shape. Forward-only: it exists so the benchmarks and the analytic
// calculators can contrast quadratic attention with the linear-scaling cell.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlstm/model.hpp"
#include "xlstm/numerics.hpp"
#include "xlstm/params.hpp"

namespace xlstm {

struct AttnOffsets {
    std::size_t norm_attn = no_param, W_q = no_param, W_k = no_param,
                W_v = no_param, W_proj = no_param, norm_ffn = no_param,
                w_gate = no_param, w_up = no_param, w_down = no_param;
};

template <class Real>
AttnOffsets attn_offsets(const ParameterSet<Real>& p, std::size_t b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    auto get = [&](const char* n) { return p.info(pre + n).offset; };
    AttnOffsets o;
    o.norm_attn = get("norm_attn");
    o.W_q = get("W_q");
    o.W_k = get("W_k");
    o.W_v = get("W_v");
    o.W_proj = get("W_proj");
    o.norm_ffn = get("norm_ffn");
    o.w_gate = get("w_gate");
    o.w_up = get("w_up");
    o.w_down = get("w_down");
    return o;
}

// Per-block key/value history; grows by one row of each per decoded token.
template <class Real>
struct KVCache {
    std::size_t d_model = 0;
    std::vector<std::vector<Real>> K, V;  // per block, len x d_model
    std::size_t len = 0;

    static KVCache fresh(const ModelConfig& cfg) {
        KVCache c;
        c.d_model = cfg.d_model;
        c.K.resize(cfg.num_blocks);
        c.V.resize(cfg.num_blocks);
        return c;
    }
    std::size_t bytes() const {
        std::size_t total = 0;
        for (const auto& k : K) total += k.size() * sizeof(Real);
        for (const auto& v : V) total += v.size() * sizeof(Real);
        return total;
    }
};

// Appends T new tokens to the cache and attends causally over the full
// history. Full-width heads: head_dim = d_model / num_heads.
template <class Real>
void attention_block_forward(const Real* x, std::size_t T,
                             const ModelConfig& cfg, const Real* P,
                             const AttnOffsets& off, std::vector<Real>& Kcache,
                             std::vector<Real>& Vcache, Real* y) {
    const std::size_t d = cfg.d_model, H = cfg.num_heads, hd = d / H;
    const std::size_t past = Kcache.size() / d;
    const Real eps = Real(cfg.norm_eps);
    const Real scale = Real(1) / std::sqrt(Real(hd));

    std::vector<Real> xn(T * d), q(T * d);
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(x + t * d, P + off.norm_attn, eps, d, xn.data() + t * d);
    linear_forward(xn.data(), P + off.W_q, (const Real*)nullptr, T, d, d,
                   q.data());
    Kcache.resize((past + T) * d);
    Vcache.resize((past + T) * d);
    linear_forward(xn.data(), P + off.W_k, (const Real*)nullptr, T, d, d,
                   Kcache.data() + past * d);
    linear_forward(xn.data(), P + off.W_v, (const Real*)nullptr, T, d, d,
                   Vcache.data() + past * d);

    std::vector<Real> attn(T * d, Real(0));
    std::vector<Real> scores;
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t ctx = past + t + 1;  // causal horizon
        scores.resize(ctx);
        for (std::size_t h = 0; h < H; ++h) {
            const Real* qh = q.data() + t * d + h * hd;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t j = 0; j < ctx; ++j) {
                const Real* kh = Kcache.data() + j * d + h * hd;
                Real s = Real(0);
                for (std::size_t i = 0; i < hd; ++i) s += qh[i] * kh[i];
                scores[j] = s * scale;
                mx = std::max(mx, scores[j]);
            }
            Real denom = Real(0);
            for (std::size_t j = 0; j < ctx; ++j)
                denom += scores[j] = std::exp(scores[j] - mx);
            Real* out = attn.data() + t * d + h * hd;
            for (std::size_t j = 0; j < ctx; ++j) {
                const Real w = scores[j] / denom;
                const Real* vh = Vcache.data() + j * d + h * hd;
                for (std::size_t i = 0; i < hd; ++i) out[i] += w * vh[i];
            }
        }
    }

    std::vector<Real> z(T * d), zn(T * d), f(T * d);
    linear_forward(attn.data(), P + off.W_proj, (const Real*)nullptr, T, d, d,
                   z.data());
    for (std::size_t i = 0; i < T * d; ++i) z[i] += x[i];
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(z.data() + t * d, P + off.norm_ffn, eps, d,
                    zn.data() + t * d);
    ffn_forward(zn.data(), T, d, cfg.d_ff(), P + off.w_gate, P + off.w_up,
                P + off.w_down, f.data());
    for (std::size_t i = 0; i < T * d; ++i) y[i] = z[i] + f[i];
}

template <class Real>
std::vector<Real> attention_model_forward(const std::vector<int>& tokens,
                                          const ModelConfig& cfg,
                                          const ParameterSet<Real>& params,
                                          KVCache<Real>& cache) {
    const std::size_t T = tokens.size(), d = cfg.d_model;
    for (int id : tokens)
        if (id < 0 || std::size_t(id) >= cfg.vocab_size)
            throw std::out_of_range("attention_model_forward: token id");
    const Real* P = params.data.data();

    std::vector<Real> x(T * d);
    const Real* emb = params.ptr("embedding");
    for (std::size_t t = 0; t < T; ++t)
        std::copy_n(emb + std::size_t(tokens[t]) * d, d, x.data() + t * d);

    std::vector<Real> y(T * d);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        attention_block_forward(x.data(), T, cfg, P, attn_offsets(params, b),
                                cache.K[b], cache.V[b], y.data());
        x.swap(y);
    }
    cache.len += T;

    std::vector<Real> hn(T * d);
    const Real eps = Real(cfg.norm_eps);
    for (std::size_t t = 0; t < T; ++t)
        rmsnorm_row(x.data() + t * d, params.ptr("final_norm"), eps, d,
                    hn.data() + t * d);
    std::vector<Real> logits(T * cfg.vocab_size);
    linear_forward(hn.data(), params.ptr("lm_head"), (const Real*)nullptr, T,
                   d, cfg.vocab_size, logits.data());
    if (cfg.cap_logits) {
        const Real cap = Real(cfg.logit_cap);
        for (auto& v : logits) v = softcap_scalar(v, cap);
    }
    return logits;
}

}  // namespace xlstm
