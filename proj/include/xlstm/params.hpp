// Model configuration and the flat, named parameter store shared by the
// decoder stack, the attention comparator, the optimizer, and checkpoints.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace xlstm {

enum class Mode { recurrent, chunkwise };

struct ModelConfig {
    std::size_t vocab_size = 257;  // byte-level ids plus an end-of-document id
    std::size_t num_blocks = 2;
    std::size_t d_model = 128;
    std::size_t num_heads = 2;
    double ff_proj_factor = 2.66;
    double gate_cap = 15.0;
    double logit_cap = 30.0;
    double norm_eps = 1e-6;
    bool use_qkv_bias = true;
    bool cap_gates = true;   // ablation switch
    bool cap_logits = true;  // ablation switch
    std::size_t eod_token_id = 256;

    std::size_t d_hv() const { return d_model / num_heads; }
    std::size_t d_qk() const { return d_hv() / 2; }
    std::size_t d_ff() const {
        auto raw = static_cast<std::size_t>(
            std::llround(ff_proj_factor * static_cast<double>(d_model)));
        return (raw + 63) / 64 * 64;  // round up to a hardware-friendly width
    }

    void validate() const {
        if (vocab_size == 0) throw std::invalid_argument("vocab_size == 0");
        if (num_heads == 0 || d_model == 0)
            throw std::invalid_argument("empty model dimensions");
        if (d_model % num_heads != 0)
            throw std::invalid_argument("d_model not divisible by num_heads");
        if (d_hv() % 2 != 0)
            throw std::invalid_argument("d_hv must be even so d_qk = d_hv/2");
        if (gate_cap <= 0 || logit_cap <= 0)
            throw std::invalid_argument("caps must be positive");
        if (eod_token_id >= vocab_size)
            throw std::invalid_argument("eod_token_id out of range");
    }
};

struct ParamInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool decay = false;  // participates in weight decay
};

template <class Real>
struct ParameterSet {
    std::vector<ParamInfo> infos;
    std::vector<Real> data;
    std::unordered_map<std::string, std::size_t> index;

    std::size_t add(std::string name, std::vector<std::size_t> shape,
                    bool decay) {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        ParamInfo info{std::move(name), std::move(shape), data.size(), n,
                       decay};
        index.emplace(info.name, infos.size());
        infos.push_back(std::move(info));
        data.resize(data.size() + n, Real(0));
        return infos.back().offset;
    }

    const ParamInfo& info(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end())
            throw std::invalid_argument("unknown parameter: " + name);
        return infos[it->second];
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    const Real* ptr(const std::string& name) const {
        return data.data() + info(name).offset;
    }
    Real* ptr(const std::string& name) {
        return data.data() + info(name).offset;
    }
    std::size_t size() const { return data.size(); }
};

// Decoder-stack parameters. Layout mirrors the per-block wiring: pre-norm,
// dense q/k/v, per-head scalar gates, output gate, headwise norm, output
// projection, then the gated feedforward with its own pre-norm.
template <class Real>
ParameterSet<Real> build_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, H = cfg.num_heads;
    const std::size_t dqk = cfg.d_qk(), dhv = cfg.d_hv(), dff = cfg.d_ff();

    ParameterSet<Real> p;
    p.add("embedding", {cfg.vocab_size, d}, true);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        p.add(pre + "norm_mlstm", {d}, false);
        p.add(pre + "W_q", {H * dqk, d}, true);
        p.add(pre + "W_k", {H * dqk, d}, true);
        p.add(pre + "W_v", {H * dhv, d}, true);
        if (cfg.use_qkv_bias) {
            p.add(pre + "b_q", {H * dqk}, false);
            p.add(pre + "b_k", {H * dqk}, false);
            p.add(pre + "b_v", {H * dhv}, false);
        }
        p.add(pre + "w_ig", {H, d}, false);
        p.add(pre + "b_ig", {H}, false);
        p.add(pre + "w_fg", {H, d}, false);
        p.add(pre + "b_fg", {H}, false);
        p.add(pre + "W_og", {d, d}, true);
        if (cfg.use_qkv_bias) p.add(pre + "b_og", {d}, false);
        p.add(pre + "hnorm", {d}, false);
        p.add(pre + "W_proj", {d, d}, true);
        p.add(pre + "norm_ffn", {d}, false);
        p.add(pre + "w_gate", {dff, d}, true);
        p.add(pre + "w_up", {dff, d}, true);
        p.add(pre + "w_down", {d, dff}, true);
    }
    p.add("final_norm", {d}, false);
    p.add("lm_head", {cfg.vocab_size, d}, true);
    return p;
}

namespace detail {

template <class Real>
void fill_uniform(Real* p, std::size_t n, double limit, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < n; ++i) p[i] = Real(dist(rng));
}

template <class Real>
void fill(Real* p, std::size_t n, Real v) {
    for (std::size_t i = 0; i < n; ++i) p[i] = v;
}

}  // namespace detail

// Fan-in uniform init for linear maps; norm scales 1; input gate starts
// firmly closed (zero weights, bias -10); forget gate starts open with
// per-head biases spread linearly over [3, 6].
template <class Real>
void init_parameters(ParameterSet<Real>& p, const ModelConfig& cfg,
                     std::mt19937& rng) {
    const std::size_t d = cfg.d_model, H = cfg.num_heads;
    for (auto& info : p.infos) {
        Real* w = p.data.data() + info.offset;
        const std::string& n = info.name;
        auto ends_with = [&](const char* s) {
            std::string suf(s);
            return n.size() >= suf.size() &&
                   n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with("norm_mlstm") || ends_with("norm_ffn") ||
            ends_with("hnorm") || n == "final_norm") {
            detail::fill(w, info.size, Real(1));
        } else if (ends_with("w_ig") || ends_with("w_fg")) {
            detail::fill(w, info.size, Real(0));
        } else if (ends_with("b_ig")) {
            detail::fill(w, info.size, Real(-10));
        } else if (ends_with("b_fg")) {
            for (std::size_t h = 0; h < H; ++h)
                w[h] = Real(H == 1 ? 3.0 : 3.0 + 3.0 * double(h) / double(H - 1));
        } else if (info.shape.size() == 2) {
            detail::fill_uniform(w, info.size,
                                 1.0 / std::sqrt(double(info.shape[1])), rng);
        } else {
            detail::fill(w, info.size, Real(0));  // remaining biases
        }
    }
    (void)d;
}

// Attention comparator stack: same residual skeleton, standard causal
// attention with full-width heads (d_qk = d_hv = d_model / num_heads),
// bias-free throughout.
template <class Real>
ParameterSet<Real> build_attention_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, dff = cfg.d_ff();
    ParameterSet<Real> p;
    p.add("embedding", {cfg.vocab_size, d}, true);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        p.add(pre + "norm_attn", {d}, false);
        p.add(pre + "W_q", {d, d}, true);
        p.add(pre + "W_k", {d, d}, true);
        p.add(pre + "W_v", {d, d}, true);
        p.add(pre + "W_proj", {d, d}, true);
        p.add(pre + "norm_ffn", {d}, false);
        p.add(pre + "w_gate", {dff, d}, true);
        p.add(pre + "w_up", {dff, d}, true);
        p.add(pre + "w_down", {d, dff}, true);
    }
    p.add("final_norm", {d}, false);
    p.add("lm_head", {cfg.vocab_size, d}, true);
    return p;
}

template <class Real>
void init_attention_parameters(ParameterSet<Real>& p, const ModelConfig& cfg,
                               std::mt19937& rng) {
    (void)cfg;
    for (auto& info : p.infos) {
        Real* w = p.data.data() + info.offset;
        if (info.shape.size() == 2)
            detail::fill_uniform(w, info.size,
                                 1.0 / std::sqrt(double(info.shape[1])), rng);
        else
            detail::fill(w, info.size, Real(1));  // norm scales
    }
}

}  // namespace xlstm
