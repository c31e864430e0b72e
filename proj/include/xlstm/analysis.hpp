// Closed-form cost calculators: forward FLOPs for the chunkwise cell and the
// two model families, parameter censuses, recurrent state size, and the
// KV-cache-equivalent token count. Pure integer arithmetic throughout.
//
// Conventions: multiply-accumulates cost 2 FLOPs; elementwise special
// functions carry tunable unit factors; the feedforward width enters as the
// concrete (rounded) d_ff; the attention family uses full-width heads
// (d_qk = d_v = d_model / num_heads), matching the comparator block. The
// parameter censuses are bias-free by construction — cross-checks against
// the real ParameterSet use its bias-free build flag.
#pragma once

#include <cstdint>
#include <stdexcept>

#include "xlstm/params.hpp"

namespace xlstm {

struct FlopFactors {
    std::uint64_t F_exp = 1, F_max = 1, F_mask = 1, F_abs = 1, F_sig = 1,
                  F_swish = 1;
};

struct CostReport {
    std::uint64_t forward_flops = 0;
    std::uint64_t backward_flops = 0;  // 2 x forward
    std::uint64_t param_count = 0;
    std::uint64_t state_bytes = 0;
    std::uint64_t kv_equiv_tokens = 0;
};

inline std::uint64_t flops_mlstm_cell(std::uint64_t num_heads,
                                      std::uint64_t d_qk, std::uint64_t d_v,
                                      std::uint64_t seq_len,
                                      std::uint64_t chunk_size,
                                      const FlopFactors& fac = {}) {
    if (chunk_size == 0 || seq_len % chunk_size != 0)
        throw std::invalid_argument(
            "flops_mlstm_cell: seq_len must be a multiple of chunk_size");
    const std::uint64_t H = num_heads, dqk = d_qk, dv = d_v;
    const std::uint64_t L = chunk_size, nc = seq_len / chunk_size;
    const std::uint64_t tri = L * (L + 1) / 2;

    // Inter-chunk recurrent part.
    const std::uint64_t chunkwise_gates = tri + 2 * L;
    const std::uint64_t gates_max_state =
        3 + fac.F_max + fac.F_exp + L * (3 + 2 * fac.F_exp);
    const std::uint64_t inter_numerator =
        2 * dqk * dv + 4 * L * dqk * dv + 3 * L * dqk;
    const std::uint64_t inter_denominator = dqk + 4 * L * dqk;
    // Intra-chunk parallel part.
    const std::uint64_t gate_matrix =
        tri + L * L * (3 + fac.F_mask + fac.F_max + fac.F_exp) +
        L * (1 + fac.F_max);
    const std::uint64_t gated_attn_logits = 2 * L * L * (1 + dqk);
    const std::uint64_t intra_numerator = 2 * L * L * dv;
    const std::uint64_t intra_denominator = 2 * L * L;
    const std::uint64_t output_combination =
        L * (1 + fac.F_max) +
        L * (2 + fac.F_abs + fac.F_exp + fac.F_max + 2 * dv);

    return H * nc *
           (chunkwise_gates + gates_max_state + inter_numerator +
            inter_denominator + gate_matrix + gated_attn_logits +
            intra_numerator + intra_denominator + output_combination);
}

inline std::uint64_t flops_mlstm_cell(const ModelConfig& cfg,
                                      std::uint64_t seq_len,
                                      std::uint64_t chunk_size,
                                      const FlopFactors& fac = {}) {
    return flops_mlstm_cell(cfg.num_heads, cfg.d_qk(), cfg.d_hv(), seq_len,
                            chunk_size, fac);
}

inline std::uint64_t flops_mlstm_model(const ModelConfig& cfg,
                                       std::uint64_t seq_len,
                                       std::uint64_t chunk_size = 64,
                                       const FlopFactors& fac = {}) {
    const std::uint64_t d = cfg.d_model, H = cfg.num_heads;
    const std::uint64_t dqk = cfg.d_qk(), dv = cfg.d_hv(), dff = cfg.d_ff();
    const std::uint64_t embeddings = 2 * seq_len * cfg.vocab_size * d;
    const std::uint64_t qkv_gates =
        2 * seq_len * d * H * (2 * dqk + dv + 2);
    const std::uint64_t out_gate_proj =
        4 * seq_len * d * H * dv + seq_len * H * dv * fac.F_sig;
    const std::uint64_t cell = flops_mlstm_cell(cfg, seq_len, chunk_size, fac);
    const std::uint64_t feedforward =
        6 * seq_len * d * dff + 2 * seq_len * d * fac.F_swish;
    const std::uint64_t final_logits = 2 * seq_len * d * cfg.vocab_size;
    return embeddings +
           cfg.num_blocks * (qkv_gates + out_gate_proj + cell + feedforward) +
           final_logits;
}

inline std::uint64_t flops_transformer_model(const ModelConfig& cfg,
                                             std::uint64_t seq_len,
                                             const FlopFactors& fac = {}) {
    const std::uint64_t d = cfg.d_model, H = cfg.num_heads;
    const std::uint64_t hd = d / H;  // full-width heads: d_qk = d_v = hd
    const std::uint64_t dff = cfg.d_ff();
    const std::uint64_t embeddings = 2 * seq_len * cfg.vocab_size * d;
    const std::uint64_t qkv = 2 * seq_len * d * H * (2 * hd + hd);
    const std::uint64_t kq_logits = 2 * seq_len * seq_len * (hd * H);
    const std::uint64_t softmax = 3 * seq_len * seq_len * H;
    const std::uint64_t softmax_reductions = 2 * seq_len * seq_len * (H * hd);
    const std::uint64_t final_linear = 2 * seq_len * d * (H * hd);
    const std::uint64_t feedforward =
        6 * seq_len * d * dff + 2 * seq_len * d * fac.F_swish;
    const std::uint64_t final_logits = 2 * seq_len * d * cfg.vocab_size;
    return embeddings +
           cfg.num_blocks * (qkv + kq_logits + softmax + softmax_reductions +
                             final_linear + feedforward) +
           final_logits;
}

inline std::uint64_t count_params_mlstm(const ModelConfig& cfg) {
    const std::uint64_t d = cfg.d_model, H = cfg.num_heads;
    const std::uint64_t dqk = cfg.d_qk(), dv = cfg.d_hv(), dff = cfg.d_ff();
    const std::uint64_t qkv = d * H * (2 * dqk + dv);
    const std::uint64_t gates = 2 * d * H + 2 * H;
    const std::uint64_t out_gate = d * d;
    const std::uint64_t out_proj = d * d;
    const std::uint64_t head_norm = d;
    const std::uint64_t feedforward = 3 * d * dff;
    const std::uint64_t per_layer =
        qkv + gates + out_gate + out_proj + head_norm + feedforward + 2 * d;
    return cfg.vocab_size * d + cfg.num_blocks * per_layer + d +
           d * cfg.vocab_size;
}

inline std::uint64_t count_params_transformer(const ModelConfig& cfg) {
    const std::uint64_t d = cfg.d_model, H = cfg.num_heads;
    const std::uint64_t hd = d / H, dff = cfg.d_ff();
    const std::uint64_t qkv = d * H * (2 * hd + hd);
    const std::uint64_t per_layer = qkv + d * d + 3 * d * dff + 2 * d;
    return cfg.vocab_size * d + cfg.num_blocks * per_layer + d +
           d * cfg.vocab_size;
}

// Fixed recurrent memory: the C matrix per (block, head) at float32 width.
inline std::uint64_t state_size_bytes(std::uint64_t num_blocks,
                                      std::uint64_t num_heads,
                                      std::uint64_t d_qk, std::uint64_t d_hv) {
    return num_blocks * num_heads * d_qk * d_hv * 4;
}

inline std::uint64_t state_size_bytes(const ModelConfig& cfg) {
    return state_size_bytes(cfg.num_blocks, cfg.num_heads, cfg.d_qk(),
                            cfg.d_hv());
}

// Number of tokens whose per-token K+V storage (at d_model width, float32)
// equals the fixed state size.
inline std::uint64_t kv_equiv_tokens(const ModelConfig& cfg) {
    return state_size_bytes(cfg) /
           (2 * std::uint64_t(cfg.num_blocks) * cfg.d_model * 4);
}

// Bytes actually held by a live ModelState<Real>: C plus n plus m per head.
inline std::uint64_t actual_state_bytes(const ModelConfig& cfg,
                                        std::size_t real_bytes) {
    return std::uint64_t(cfg.num_blocks) * cfg.num_heads *
           (cfg.d_qk() * cfg.d_hv() + cfg.d_qk() + 1) * real_bytes;
}

inline double state_size_mb(const ModelConfig& cfg) {
    return double(state_size_bytes(cfg)) / 1e6;  // decimal megabytes
}

inline CostReport make_cost_report(const ModelConfig& cfg,
                                   std::uint64_t seq_len,
                                   std::uint64_t chunk_size = 64,
                                   const FlopFactors& fac = {}) {
    CostReport r;
    r.forward_flops = flops_mlstm_model(cfg, seq_len, chunk_size, fac);
    r.backward_flops = 2 * r.forward_flops;
    r.param_count = count_params_mlstm(cfg);
    r.state_bytes = state_size_bytes(cfg);
    r.kv_equiv_tokens = kv_equiv_tokens(cfg);
    return r;
}

}  // namespace xlstm
