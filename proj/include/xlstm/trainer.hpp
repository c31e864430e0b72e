// Desk-scale next-token training: AdamW with decoupled weight decay and
// global-norm clipping, warmup/decay/cooldown LR schedules, sequence packing
// with end-of-document state resets, batch-size ramp-up, and grad-norm spike
// logging. Binary token files are little-endian u32 with a u64 doc-offset
// index; text ingestion maps UTF-8 bytes to ids 0..255 plus an EOD id.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlstm/model.hpp"
#include "xlstm/params.hpp"

namespace xlstm {

enum class LrSchedule { exponential, cosine };

struct TrainConfig {
    double peak_lr = 5e-4;
    double beta1 = 0.99;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double clip_norm = 0.5;
    std::size_t warmup_steps = 10;
    std::size_t total_steps = 100;
    std::size_t cooldown_steps = 0;
    LrSchedule schedule = LrSchedule::exponential;
    double exp_target_frac = 0.1;       // fraction of peak reached at...
    std::size_t exp_target_step = 100;  // ...this step
    double cosine_min_frac = 0.1;
    std::size_t context = 256;
    std::size_t batch_size = 8;
    // (first step, batch size) pairs, ascending; overrides batch_size.
    std::vector<std::pair<std::size_t, std::size_t>> batch_ramp;
    std::size_t chunk_size = 64;

    void validate() const {
        if (peak_lr <= 0 || eps <= 0 || clip_norm <= 0)
            throw std::invalid_argument("train config: non-positive value");
        if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            throw std::invalid_argument("train config: betas must be in (0,1)");
        if (warmup_steps + cooldown_steps > total_steps)
            throw std::invalid_argument(
                "train config: warmup + cooldown exceeds total");
        if (schedule == LrSchedule::exponential &&
            (exp_target_frac <= 0 || exp_target_frac >= 1 ||
             exp_target_step <= warmup_steps))
            throw std::invalid_argument("train config: bad exponential decay");
        for (std::size_t i = 1; i < batch_ramp.size(); ++i)
            if (batch_ramp[i].first <= batch_ramp[i - 1].first)
                throw std::invalid_argument(
                    "train config: batch ramp must be ascending");
    }

    std::size_t batch_at(std::size_t step) const {
        std::size_t b = batch_size;
        for (const auto& [s, bs] : batch_ramp)
            if (step >= s) b = bs;
        return b;
    }
};

// Piecewise schedule: linear warmup to peak, exponential or cosine decay,
// then a linear cooldown to zero. Continuous at both joints.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
    const double peak = cfg.peak_lr;
    const std::size_t cd_start = cfg.total_steps - cfg.cooldown_steps;
    if (step >= cfg.total_steps) return 0.0;
    if (step < cfg.warmup_steps)
        return peak * double(step) / double(cfg.warmup_steps);

    auto decay_value = [&](std::size_t s) {
        const double t = double(s - cfg.warmup_steps);
        if (cfg.schedule == LrSchedule::exponential) {
            const double rate =
                std::log(1.0 / cfg.exp_target_frac) /
                double(cfg.exp_target_step - cfg.warmup_steps);
            return peak * std::exp(-rate * t);
        }
        const double span = double(cd_start - cfg.warmup_steps);
        const double progress = span > 0 ? t / span : 1.0;
        const double m = cfg.cosine_min_frac;
        return peak * (m + (1.0 - m) * 0.5 * (1.0 + std::cos(M_PI * progress)));
    };
    if (step < cd_start) return decay_value(step);
    const double start = decay_value(cd_start);
    return start * double(cfg.total_steps - step) / double(cfg.cooldown_steps);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

template <class Real>
struct AdamState {
    std::vector<Real> m, v;
    std::size_t t = 0;
};

template <class Real>
AdamState<Real> fresh_adam_state(const ParameterSet<Real>& params) {
    AdamState<Real> s;
    s.m.assign(params.size(), Real(0));
    s.v.assign(params.size(), Real(0));
    return s;
}

template <class Real>
double global_norm(const std::vector<Real>& g) {
    double ss = 0;
    for (Real v : g) ss += double(v) * double(v);
    return std::sqrt(ss);
}

// Clips grads in place to the global norm bound, applies one decoupled
// weight-decay Adam update with bias correction, and returns the pre-clip
// gradient norm.
template <class Real>
double adamw_step(ParameterSet<Real>& params, std::vector<Real>& grads,
                  AdamState<Real>& state, double lr, const TrainConfig& cfg) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw std::invalid_argument("adamw_step: size mismatch");
    const double norm = global_norm(grads);
    if (norm > cfg.clip_norm && norm > 0) {
        const Real scale = Real(cfg.clip_norm / norm);
        for (auto& g : grads) g *= scale;
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (const auto& info : params.infos) {
        const double wd = info.decay ? cfg.weight_decay : 0.0;
        for (std::size_t i = info.offset; i < info.offset + info.size; ++i) {
            const double g = double(grads[i]);
            const double m = cfg.beta1 * double(state.m[i]) +
                             (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * double(state.v[i]) +
                             (1.0 - cfg.beta2) * g * g;
            state.m[i] = Real(m);
            state.v[i] = Real(v);
            const double update =
                (m / bc1) / (std::sqrt(v / bc2) + cfg.eps) +
                wd * double(params.data[i]);
            params.data[i] = Real(double(params.data[i]) - lr * update);
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Token data files and packing
// ---------------------------------------------------------------------------

struct TokenDataset {
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint64_t> doc_offsets;  // start index of each document
};

inline void write_token_file(const std::string& path,
                             const std::vector<std::uint32_t>& tokens) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.write(reinterpret_cast<const char*>(tokens.data()),
              std::streamsize(tokens.size() * 4));
}

inline std::vector<std::uint32_t> read_token_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + path);
    const auto bytes = std::size_t(in.tellg());
    if (bytes % 4 != 0)
        throw std::runtime_error("token file size not a multiple of 4");
    std::vector<std::uint32_t> tokens(bytes / 4);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(tokens.data()), std::streamsize(bytes));
    return tokens;
}

inline void write_index_file(const std::string& path,
                             const std::vector<std::uint64_t>& offsets) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.write(reinterpret_cast<const char*>(offsets.data()),
              std::streamsize(offsets.size() * 8));
}

inline std::vector<std::uint64_t> read_index_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + path);
    const auto bytes = std::size_t(in.tellg());
    if (bytes % 8 != 0)
        throw std::runtime_error("index file size not a multiple of 8");
    std::vector<std::uint64_t> offsets(bytes / 8);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(offsets.data()), std::streamsize(bytes));
    return offsets;
}

// Byte-level ingestion: each document contributes its raw bytes as ids
// 0..255 followed by the EOD id.
inline TokenDataset ingest_documents(const std::vector<std::string>& docs,
                                     std::uint32_t eod_id = 256) {
    TokenDataset ds;
    for (const auto& doc : docs) {
        ds.doc_offsets.push_back(ds.tokens.size());
        for (unsigned char c : doc) ds.tokens.push_back(c);
        ds.tokens.push_back(eod_id);
    }
    return ds;
}

struct TokenBatch {
    std::size_t batch = 0, context = 0;
    std::vector<int> tokens;   // batch x context
    std::vector<int> targets;  // batch x context, next-token shifted
};

// Sequential packing cursor: each item takes the next context+1 tokens from
// the flat stream, restarting from the front when the tail is too short.
inline TokenBatch next_batch(const TokenDataset& data, std::size_t& cursor,
                             std::size_t batch, std::size_t context) {
    if (data.tokens.size() < context + 1)
        throw std::invalid_argument("next_batch: dataset shorter than context");
    TokenBatch tb;
    tb.batch = batch;
    tb.context = context;
    tb.tokens.resize(batch * context);
    tb.targets.resize(batch * context);
    for (std::size_t b = 0; b < batch; ++b) {
        if (cursor + context + 1 > data.tokens.size()) cursor = 0;
        for (std::size_t t = 0; t < context; ++t) {
            tb.tokens[b * context + t] = int(data.tokens[cursor + t]);
            tb.targets[b * context + t] = int(data.tokens[cursor + t + 1]);
        }
        cursor += context;
    }
    return tb;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0, ppl = 0, lr = 0, grad_norm = 0;
    double grad_norm_max50 = 0, grad_norm_mean50 = 0;
    std::size_t batch = 0;  // not part of the CSV contract
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    bool aborted = false;
    std::size_t abort_step = 0;
};

inline void write_train_log_csv(std::ostream& out,
                                const std::vector<TrainLogRow>& log) {
    out << "step,loss,ppl,lr,grad_norm,grad_norm_max50,grad_norm_mean50\n";
    for (const auto& r : log)
        out << r.step << ',' << r.loss << ',' << r.ppl << ',' << r.lr << ','
            << r.grad_norm << ',' << r.grad_norm_max50 << ','
            << r.grad_norm_mean50 << '\n';
}

// Mean cross-entropy over all targets; fills dlogits with the normalized
// softmax-minus-onehot gradient.
template <class Real>
double cross_entropy(const std::vector<Real>& logits,
                     const std::vector<int>& targets, std::size_t vocab,
                     std::vector<Real>* dlogits = nullptr) {
    const std::size_t rows = targets.size();
    if (logits.size() != rows * vocab)
        throw std::invalid_argument("cross_entropy: size mismatch");
    if (dlogits) dlogits->assign(rows * vocab, Real(0));
    double total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = logits.data() + r * vocab;
        Real mx = row[0];
        for (std::size_t i = 1; i < vocab; ++i) mx = std::max(mx, row[i]);
        double sum = 0;
        for (std::size_t i = 0; i < vocab; ++i)
            sum += std::exp(double(row[i] - mx));
        const double lse = std::log(sum) + double(mx);
        total += lse - double(row[std::size_t(targets[r])]);
        if (dlogits) {
            Real* drow = dlogits->data() + r * vocab;
            const double inv = 1.0 / double(rows);
            for (std::size_t i = 0; i < vocab; ++i)
                drow[i] = Real((std::exp(double(row[i]) - lse)) * inv);
            drow[std::size_t(targets[r])] -= Real(inv);
        }
    }
    return total / double(rows);
}

template <class Real>
TrainResult train(ParameterSet<Real>& params, const ModelConfig& mcfg,
                  const TokenDataset& data, const TrainConfig& tcfg) {
    tcfg.validate();
    mcfg.validate();
    TrainResult result;
    AdamState<Real> adam = fresh_adam_state(params);
    std::vector<Real> grads(params.size(), Real(0));
    std::vector<Real> dlogits;
    std::size_t cursor = 0;
    std::vector<double> gn_window;

    for (std::size_t step = 0; step < tcfg.total_steps; ++step) {
        const std::size_t batch = tcfg.batch_at(step);
        TokenBatch tb = next_batch(data, cursor, batch, tcfg.context);

        std::fill(grads.begin(), grads.end(), Real(0));
        double loss_sum = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            std::vector<int> seq(tb.tokens.begin() + long(b * tcfg.context),
                                 tb.tokens.begin() +
                                     long((b + 1) * tcfg.context));
            std::vector<int> tgt(tb.targets.begin() + long(b * tcfg.context),
                                 tb.targets.begin() +
                                     long((b + 1) * tcfg.context));
            auto state = fresh_state<Real>(mcfg);
            ModelSaved<Real> saved;
            auto logits =
                model_forward(seq, mcfg, params, Mode::chunkwise, state,
                              ChunkConfig{tcfg.chunk_size}, &saved);
            loss_sum += cross_entropy(logits, tgt, mcfg.vocab_size, &dlogits);
            // Per-sequence CE is already target-mean; average over the batch.
            const Real inv_b = Real(1.0 / double(batch));
            for (auto& g : dlogits) g *= inv_b;
            model_backward(saved, mcfg, params, dlogits, grads);
        }
        const double loss = loss_sum / double(batch);

        TrainLogRow row;
        row.step = step;
        row.loss = loss;
        row.ppl = std::exp(loss);
        row.lr = lr_at(step, tcfg);
        row.batch = batch;
        if (!std::isfinite(loss)) {
            result.aborted = true;
            result.abort_step = step;
            result.log.push_back(row);
            return result;
        }

        row.grad_norm = adamw_step(params, grads, adam, row.lr, tcfg);
        gn_window.push_back(row.grad_norm);
        const std::size_t w0 = gn_window.size() > 50 ? gn_window.size() - 50
                                                     : 0;
        double mx = 0, mean = 0;
        for (std::size_t i = w0; i < gn_window.size(); ++i) {
            mx = std::max(mx, gn_window[i]);
            mean += gn_window[i];
        }
        row.grad_norm_max50 = mx;
        row.grad_norm_mean50 = mean / double(gn_window.size() - w0);
        result.log.push_back(row);
    }
    return result;
}

}  // namespace xlstm
