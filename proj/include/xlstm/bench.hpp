// Inference benchmark scenarios: generation throughput at varying prefill
// lengths, time-to-first-token, fixed-budget prefill throughput over a
// (batch, context) grid, and state-memory growth. Each scenario runs both
// the recurrent model and the causal-attention comparator and emits CSV
// rows. Timings use a monotonic clock, median of `repeats` after `warmups`
// discarded runs; token outputs are deterministic for a fixed seed.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "xlstm/analysis.hpp"
#include "xlstm/attention.hpp"
#include "xlstm/memmeter.hpp"
#include "xlstm/model.hpp"

namespace xlstm {

struct BenchResult {
    std::string scenario;
    std::string config_id;  // "mlstm" or "attention"
    std::size_t prefill_len = 0, gen_len = 0, batch = 1;
    double wall_time = 0;  // seconds
    double tokens_per_sec = 0;
    std::uint64_t peak_state_bytes = 0;  // analytic
    std::uint64_t peak_alloc_bytes = 0;  // measured; 0 without alloc hooks
    bool failed = false;
    std::string error;
};

struct BenchOptions {
    std::size_t repeats = 5;
    std::size_t warmups = 2;
    std::uint64_t seed = 1;
    std::size_t chunk_size = 64;
    std::size_t threads = 1;  // batch-parallel prefill when > 1
};

// d_model 512, 8 blocks, 4 heads: enough width for a timing signal while
// staying CI-sized.
inline ModelConfig desk_bench_config() {
    ModelConfig cfg;
    cfg.vocab_size = 257;
    cfg.num_blocks = 8;
    cfg.d_model = 512;
    cfg.num_heads = 4;
    return cfg;
}

inline void write_bench_csv(std::ostream& out,
                            const std::vector<BenchResult>& rows) {
    out << "scenario,config,prefill_len,gen_len,batch,wall_time_s,"
           "tokens_per_sec,peak_state_bytes,peak_alloc_bytes,error\n";
    for (const auto& r : rows)
        out << r.scenario << ',' << r.config_id << ',' << r.prefill_len << ','
            << r.gen_len << ',' << r.batch << ',' << r.wall_time << ','
            << r.tokens_per_sec << ',' << r.peak_state_bytes << ','
            << r.peak_alloc_bytes << ',' << (r.failed ? r.error : "") << '\n';
}

namespace detail {

inline double now_sec() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Random prompt avoiding the EOD id; a lone bootstrap token stands in for an
// empty prefill so decoding always has a starting position.
inline std::vector<int> bench_prompt(std::size_t len, std::size_t vocab,
                                     std::uint64_t seed) {
    std::vector<int> prompt(std::max<std::size_t>(len, 1), 0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, int(vocab) - 2);
    for (std::size_t i = 0; i < len; ++i) prompt[i] = dist(rng);
    return prompt;
}

struct RunTiming {
    double prefill_s = 0, decode_s = 0;
    std::uint64_t peak_alloc = 0;
    std::vector<int> tokens;
};

template <class Real>
RunTiming run_once_mlstm(const ModelConfig& cfg,
                         const ParameterSet<Real>& params,
                         const std::vector<int>& prompt, std::size_t gen_len,
                         std::size_t chunk_size) {
    RunTiming rt;
    memmeter::reset_peak();
    auto state = fresh_state<Real>(cfg);
    double t0 = now_sec();
    auto logits = model_forward(prompt, cfg, params, Mode::chunkwise, state,
                                ChunkConfig{chunk_size});
    rt.prefill_s = now_sec() - t0;

    std::mt19937_64 rng(0);
    Sampler greedy;
    t0 = now_sec();
    for (std::size_t i = 0; i < gen_len; ++i) {
        const Real* last = logits.data() + (logits.size() - cfg.vocab_size);
        const int tok = pick_token(last, cfg.vocab_size, greedy, rng);
        rt.tokens.push_back(tok);
        logits = model_forward({tok}, cfg, params, Mode::recurrent, state);
    }
    rt.decode_s = now_sec() - t0;
    rt.peak_alloc = memmeter::peak();
    return rt;
}

template <class Real>
RunTiming run_once_attn(const ModelConfig& cfg,
                        const ParameterSet<Real>& params,
                        const std::vector<int>& prompt, std::size_t gen_len) {
    RunTiming rt;
    memmeter::reset_peak();
    auto cache = KVCache<Real>::fresh(cfg);
    double t0 = now_sec();
    auto logits = attention_model_forward(prompt, cfg, params, cache);
    rt.prefill_s = now_sec() - t0;

    std::mt19937_64 rng(0);
    Sampler greedy;
    t0 = now_sec();
    for (std::size_t i = 0; i < gen_len; ++i) {
        const Real* last = logits.data() + (logits.size() - cfg.vocab_size);
        const int tok = pick_token(last, cfg.vocab_size, greedy, rng);
        rt.tokens.push_back(tok);
        logits = attention_model_forward({tok}, cfg, params, cache);
    }
    rt.decode_s = now_sec() - t0;
    rt.peak_alloc = memmeter::peak();
    return rt;
}

template <class Real>
RunTiming run_once(const ModelConfig& cfg, const ParameterSet<Real>& params,
                   bool attention, const std::vector<int>& prompt,
                   std::size_t gen_len, std::size_t chunk_size) {
    return attention ? run_once_attn(cfg, params, prompt, gen_len)
                     : run_once_mlstm(cfg, params, prompt, gen_len,
                                      chunk_size);
}

template <class Real>
std::uint64_t analytic_state_bytes(const ModelConfig& cfg, bool attention,
                                   std::size_t tokens_held) {
    if (!attention) return state_size_bytes(cfg);
    return 2ull * cfg.num_blocks * cfg.d_model * 4 * tokens_held;
}

template <class Real>
ParameterSet<Real> bench_params(const ModelConfig& cfg, bool attention,
                                std::uint64_t seed) {
    std::mt19937 rng(static_cast<unsigned>(seed));
    if (attention) {
        auto p = build_attention_parameters<Real>(cfg);
        init_attention_parameters(p, cfg, rng);
        return p;
    }
    auto p = build_parameters<Real>(cfg);
    init_parameters(p, cfg, rng);
    return p;
}

}  // namespace detail

template <class Real = float>
std::vector<BenchResult> bench_generate(
    const ModelConfig& cfg, const std::vector<std::size_t>& prefill_lens,
    std::size_t gen_len, const BenchOptions& opt = {}) {
    std::vector<BenchResult> rows;
    for (bool attention : {false, true}) {
        auto params = detail::bench_params<Real>(cfg, attention, opt.seed);
        for (std::size_t prefill : prefill_lens) {
            BenchResult r;
            r.scenario = "generate";
            r.config_id = attention ? "attention" : "mlstm";
            r.prefill_len = prefill;
            r.gen_len = gen_len;
            r.peak_state_bytes = detail::analytic_state_bytes<Real>(
                cfg, attention, std::max<std::size_t>(prefill, 1) + gen_len);
            try {
                auto prompt = detail::bench_prompt(prefill, cfg.vocab_size,
                                                   opt.seed ^ prefill);
                std::vector<double> pre, dec;
                for (std::size_t i = 0; i < opt.warmups + opt.repeats; ++i) {
                    auto rt = detail::run_once(cfg, params, attention, prompt,
                                               gen_len, opt.chunk_size);
                    if (i < opt.warmups) continue;
                    pre.push_back(rt.prefill_s);
                    dec.push_back(rt.decode_s);
                    r.peak_alloc_bytes =
                        std::max(r.peak_alloc_bytes, rt.peak_alloc);
                }
                const double decode = detail::median(dec);
                r.wall_time = detail::median(pre) + decode;
                r.tokens_per_sec =
                    gen_len > 0 && decode > 0 ? double(gen_len) / decode : 0;
            } catch (const std::bad_alloc&) {
                r.failed = true;
                r.error = "out_of_memory";
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

template <class Real = float>
std::vector<BenchResult> bench_ttft(
    const ModelConfig& cfg, const std::vector<std::size_t>& prefill_lens,
    const std::vector<std::size_t>& first_ns = {1, 100},
    const BenchOptions& opt = {}) {
    std::vector<BenchResult> rows;
    for (bool attention : {false, true}) {
        auto params = detail::bench_params<Real>(cfg, attention, opt.seed);
        for (std::size_t prefill : prefill_lens) {
            auto prompt = detail::bench_prompt(prefill, cfg.vocab_size,
                                               opt.seed ^ prefill);
            for (std::size_t first_n : first_ns) {
                BenchResult r;
                r.scenario = "ttft";
                r.config_id = attention ? "attention" : "mlstm";
                r.prefill_len = prefill;
                r.gen_len = first_n;
                r.peak_state_bytes = detail::analytic_state_bytes<Real>(
                    cfg, attention,
                    std::max<std::size_t>(prefill, 1) + first_n);
                try {
                    std::vector<double> total;
                    for (std::size_t i = 0; i < opt.warmups + opt.repeats;
                         ++i) {
                        auto rt = detail::run_once(cfg, params, attention,
                                                   prompt, first_n,
                                                   opt.chunk_size);
                        if (i < opt.warmups) continue;
                        total.push_back(rt.prefill_s + rt.decode_s);
                        r.peak_alloc_bytes =
                            std::max(r.peak_alloc_bytes, rt.peak_alloc);
                    }
                    r.wall_time = detail::median(total);
                    r.tokens_per_sec = r.wall_time > 0
                                           ? double(first_n) / r.wall_time
                                           : 0;
                } catch (const std::bad_alloc&) {
                    r.failed = true;
                    r.error = "out_of_memory";
                }
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

template <class Real = float>
std::vector<BenchResult> bench_prefill(
    const ModelConfig& cfg, std::size_t total_tokens,
    const std::vector<std::pair<std::size_t, std::size_t>>& grid,
    const BenchOptions& opt = {}) {
    std::vector<BenchResult> rows;
    for (bool attention : {false, true}) {
        auto params = detail::bench_params<Real>(cfg, attention, opt.seed);
        for (const auto& [batch, ctx] : grid) {
            BenchResult r;
            r.scenario = "prefill";
            r.config_id = attention ? "attention" : "mlstm";
            r.prefill_len = ctx;
            r.batch = batch;
            r.peak_state_bytes =
                batch * detail::analytic_state_bytes<Real>(cfg, attention,
                                                           ctx);
            try {
                const std::size_t iters =
                    std::max<std::size_t>(1, total_tokens / (batch * ctx));
                const std::uint64_t tokens = iters * batch * ctx;
                auto one_seq = [&](std::uint64_t seq_id) {
                    auto prompt = detail::bench_prompt(
                        ctx, cfg.vocab_size, opt.seed ^ (seq_id * 2654435761));
                    if (attention) {
                        auto cache = KVCache<Real>::fresh(cfg);
                        attention_model_forward(prompt, cfg, params, cache);
                    } else {
                        auto state = fresh_state<Real>(cfg);
                        model_forward(prompt, cfg, params, Mode::chunkwise,
                                      state, ChunkConfig{opt.chunk_size});
                    }
                };
                std::vector<double> times;
                for (std::size_t i = 0; i < opt.warmups + opt.repeats; ++i) {
                    memmeter::reset_peak();
                    const double t0 = detail::now_sec();
                    for (std::size_t it = 0; it < iters; ++it) {
                        if (opt.threads <= 1) {
                            for (std::size_t b = 0; b < batch; ++b)
                                one_seq(it * batch + b);
                        } else {
                            std::vector<std::thread> pool;
                            for (std::size_t w = 0; w < opt.threads; ++w)
                                pool.emplace_back([&, w] {
                                    for (std::size_t b = w; b < batch;
                                         b += opt.threads)
                                        one_seq(it * batch + b);
                                });
                            for (auto& th : pool) th.join();
                        }
                    }
                    if (i >= opt.warmups) {
                        times.push_back(detail::now_sec() - t0);
                        r.peak_alloc_bytes =
                            std::max(r.peak_alloc_bytes, memmeter::peak());
                    }
                }
                r.wall_time = detail::median(times);
                r.tokens_per_sec =
                    r.wall_time > 0 ? double(tokens) / r.wall_time : 0;
            } catch (const std::bad_alloc&) {
                r.failed = true;
                r.error = "out_of_memory";
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

template <class Real = float>
std::vector<BenchResult> bench_memory(const ModelConfig& cfg,
                                      const std::vector<std::size_t>& gen_lens,
                                      const BenchOptions& opt = {}) {
    std::vector<BenchResult> rows;
    for (bool attention : {false, true}) {
        auto params = detail::bench_params<Real>(cfg, attention, opt.seed);
        for (std::size_t gen : gen_lens) {
            BenchResult r;
            r.scenario = "memory";
            r.config_id = attention ? "attention" : "mlstm";
            r.prefill_len = 1;  // the bootstrap token
            r.gen_len = gen;
            r.peak_state_bytes =
                detail::analytic_state_bytes<Real>(cfg, attention, 1 + gen);
            try {
                auto prompt = detail::bench_prompt(0, cfg.vocab_size, opt.seed);
                auto rt = detail::run_once(cfg, params, attention, prompt, gen,
                                           opt.chunk_size);
                r.wall_time = rt.prefill_s + rt.decode_s;
                r.tokens_per_sec =
                    rt.decode_s > 0 ? double(gen) / rt.decode_s : 0;
                r.peak_alloc_bytes = rt.peak_alloc;
            } catch (const std::bad_alloc&) {
                r.failed = true;
                r.error = "out_of_memory";
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

}  // namespace xlstm
