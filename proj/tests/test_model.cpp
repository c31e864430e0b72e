#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "xlstm/attention.hpp"
#include "xlstm/checkpoint.hpp"
#include "xlstm/config.hpp"
#include "xlstm/model.hpp"

using xlstm::ChunkConfig;
using xlstm::Mode;
using xlstm::ModelConfig;
using xlstm::ParameterSet;

namespace {

ModelConfig tiny_cfg(std::size_t blocks, std::size_t d, std::size_t heads,
                     std::size_t vocab = 17) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.num_blocks = blocks;
    cfg.d_model = d;
    cfg.num_heads = heads;
    cfg.eod_token_id = vocab - 1;
    cfg.validate();
    return cfg;
}

// Standard init plus randomized gate affines so the cell path carries signal
// in small tests (the production input-gate init starts nearly closed).
ParameterSet<double> random_params(const ModelConfig& cfg, unsigned seed) {
    auto p = xlstm::build_parameters<double>(cfg);
    std::mt19937 rng(seed);
    xlstm::init_parameters(p, cfg, rng);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (auto& info : p.infos) {
        auto tail = [&](const char* s) {
            std::string n = info.name, suf = s;
            return n.size() >= suf.size() &&
                   n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (tail("w_ig") || tail("w_fg") || tail("b_ig") || tail("b_fg") ||
            tail("b_q") || tail("b_k") || tail("b_v") || tail("b_og"))
            for (std::size_t i = 0; i < info.size; ++i)
                p.data[info.offset + i] = dist(rng);
    }
    return p;
}

std::vector<int> random_tokens(std::mt19937& rng, std::size_t n,
                               std::size_t vocab) {
    std::uniform_int_distribution<int> dist(0, int(vocab) - 1);
    std::vector<int> t(n);
    for (auto& v : t) v = dist(rng);
    return t;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("layer: recurrent vs chunkwise agree") {
    auto cfg = tiny_cfg(1, 12, 2);
    auto params = random_params(cfg, 1);
    auto off = xlstm::block_offsets(params, 0);
    std::mt19937 rng(2);
    const std::size_t T = 32, d = cfg.d_model;
    auto X = testing::random_vector(rng, T * d);

    std::vector<double> Yr(T * d), Yc(T * d);
    auto sr = xlstm::fresh_state<double>(cfg);
    auto sc = xlstm::fresh_state<double>(cfg);
    xlstm::mlstm_layer_forward(X.data(), T, cfg, params.data.data(), off,
                               Mode::recurrent, ChunkConfig{}, sr.cells.data(),
                               nullptr, Yr.data());
    xlstm::mlstm_layer_forward(X.data(), T, cfg, params.data.data(), off,
                               Mode::chunkwise, ChunkConfig{8}, sc.cells.data(),
                               nullptr, Yc.data());
    CHECK(max_abs_diff(Yr, Yc) < 1e-10);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        CHECK(max_abs_diff(sr.cells[h].C, sc.cells[h].C) < 1e-10);
        CHECK(max_abs_diff(sr.cells[h].n, sc.cells[h].n) < 1e-10);
    }
}

TEST_CASE("layer: saturated-closed output gate zeroes the output") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 3);
    auto off = xlstm::block_offsets(params, 0);
    for (std::size_t i = 0; i < cfg.d_model * cfg.d_model; ++i)
        params.data[off.W_og + i] = 0.0;
    for (std::size_t i = 0; i < cfg.d_model; ++i)
        params.data[off.b_og + i] = -1e9;

    std::mt19937 rng(4);
    const std::size_t T = 6, d = cfg.d_model;
    auto X = testing::random_vector(rng, T * d);
    std::vector<double> Y(T * d, 1.0);
    auto s = xlstm::fresh_state<double>(cfg);
    xlstm::mlstm_layer_forward(X.data(), T, cfg, params.data.data(), off,
                               Mode::chunkwise, ChunkConfig{}, s.cells.data(),
                               nullptr, Y.data());
    for (double v : Y) CHECK(v == 0.0);
}

TEST_CASE("layer: single head equals a hand-composed pipeline") {
    auto cfg = tiny_cfg(1, 8, 1);
    auto params = random_params(cfg, 5);
    auto off = xlstm::block_offsets(params, 0);
    const std::size_t T = 10, d = cfg.d_model;
    const std::size_t dqk = cfg.d_qk(), dhv = cfg.d_hv();
    std::mt19937 rng(6);
    auto X = testing::random_vector(rng, T * d);
    const double* P = params.data.data();

    // Hand route: q/k/v and gate affines by direct linear algebra, the cell
    // via the recurrent fold, then norm, sigmoid gate, projection.
    std::vector<double> Q(T * dqk), K(T * dqk), V(T * dhv), ai(T), af(T);
    xlstm::linear_forward(X.data(), P + off.W_q, P + off.b_q, T, d, dqk,
                          Q.data());
    xlstm::linear_forward(X.data(), P + off.W_k, P + off.b_k, T, d, dqk,
                          K.data());
    xlstm::linear_forward(X.data(), P + off.W_v, P + off.b_v, T, d, dhv,
                          V.data());
    xlstm::linear_forward(X.data(), P + off.w_ig, P + off.b_ig, T, d, 1,
                          ai.data());
    xlstm::linear_forward(X.data(), P + off.w_fg, P + off.b_fg, T, d, 1,
                          af.data());
    std::vector<xlstm::StepInput<double>> seq(T);
    for (std::size_t t = 0; t < T; ++t) {
        seq[t].q.assign(Q.begin() + t * dqk, Q.begin() + (t + 1) * dqk);
        seq[t].k.assign(K.begin() + t * dqk, K.begin() + (t + 1) * dqk);
        seq[t].v.assign(V.begin() + t * dhv, V.begin() + (t + 1) * dhv);
        seq[t].i_pre = xlstm::softcap_scalar(ai[t], cfg.gate_cap);
        seq[t].f_pre = xlstm::softcap_scalar(af[t], cfg.gate_cap);
    }
    xlstm::CellState<double> cell(dqk, dhv);
    std::vector<double> Ht;
    xlstm::recurrent_forward(seq, cell, Ht);

    std::vector<double> og(T * d), expect(T * d), gated(T * d);
    xlstm::linear_forward(X.data(), P + off.W_og, P + off.b_og, T, d, d,
                          og.data());
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> hn(dhv);
        xlstm::layernorm_row(Ht.data() + t * dhv, P + off.hnorm,
                             (const double*)nullptr, cfg.norm_eps, dhv,
                             hn.data());
        for (std::size_t i = 0; i < d; ++i)
            gated[t * d + i] = xlstm::sigmoid(og[t * d + i]) * hn[i];
    }
    xlstm::linear_forward(gated.data(), P + off.W_proj,
                          (const double*)nullptr, T, d, d, expect.data());

    std::vector<double> Y(T * d);
    auto s = xlstm::fresh_state<double>(cfg);
    xlstm::mlstm_layer_forward(X.data(), T, cfg, P, off, Mode::recurrent,
                               ChunkConfig{}, s.cells.data(), nullptr,
                               Y.data());
    CHECK(max_abs_diff(Y, expect) < 1e-12);
}

TEST_CASE("layer: heads are exchangeable under joint permutation") {
    auto cfg = tiny_cfg(1, 16, 4);
    auto params = random_params(cfg, 7);
    const std::size_t d = cfg.d_model, H = cfg.num_heads;
    const std::size_t dqk = cfg.d_qk(), dhv = cfg.d_hv();
    const std::size_t T = 9;
    std::mt19937 rng(8);
    auto X = testing::random_vector(rng, T * d);

    std::vector<std::size_t> perm = {2, 0, 3, 1};
    auto permuted = params;
    auto off = xlstm::block_offsets(params, 0);
    double* PP = permuted.data.data();
    const double* P = params.data.data();
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t src = perm[h];
        // Head-major row blocks of the projections and per-head gate rows.
        std::copy_n(P + off.W_q + src * dqk * d, dqk * d,
                    PP + off.W_q + h * dqk * d);
        std::copy_n(P + off.W_k + src * dqk * d, dqk * d,
                    PP + off.W_k + h * dqk * d);
        std::copy_n(P + off.W_v + src * dhv * d, dhv * d,
                    PP + off.W_v + h * dhv * d);
        std::copy_n(P + off.b_q + src * dqk, dqk, PP + off.b_q + h * dqk);
        std::copy_n(P + off.b_k + src * dqk, dqk, PP + off.b_k + h * dqk);
        std::copy_n(P + off.b_v + src * dhv, dhv, PP + off.b_v + h * dhv);
        std::copy_n(P + off.w_ig + src * d, d, PP + off.w_ig + h * d);
        std::copy_n(P + off.w_fg + src * d, d, PP + off.w_fg + h * d);
        PP[off.b_ig + h] = P[off.b_ig + src];
        PP[off.b_fg + h] = P[off.b_fg + src];
        std::copy_n(P + off.hnorm + src * dhv, dhv, PP + off.hnorm + h * dhv);
        // Channel blocks of everything downstream of the concat.
        for (std::size_t r = 0; r < d; ++r) {
            std::copy_n(P + off.W_proj + r * d + src * dhv, dhv,
                        PP + off.W_proj + r * d + h * dhv);
        }
        std::copy_n(P + off.W_og + src * dhv * d, dhv * d,
                    PP + off.W_og + h * dhv * d);
        std::copy_n(P + off.b_og + src * dhv, dhv, PP + off.b_og + h * dhv);
    }

    std::vector<double> Y1(T * d), Y2(T * d);
    auto s1 = xlstm::fresh_state<double>(cfg);
    auto s2 = xlstm::fresh_state<double>(cfg);
    xlstm::mlstm_layer_forward(X.data(), T, cfg, P, off, Mode::chunkwise,
                               ChunkConfig{4}, s1.cells.data(), nullptr,
                               Y1.data());
    // Permuting the output channels requires permuting W_proj's input blocks
    // only; the output of W_proj itself is head-independent.
    xlstm::mlstm_layer_forward(X.data(), T, cfg, PP, off, Mode::chunkwise,
                               ChunkConfig{4}, s2.cells.data(), nullptr,
                               Y2.data());
    CHECK(max_abs_diff(Y1, Y2) < 1e-12);
}

TEST_CASE("block: zero output-side weights make the block the identity") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 9);
    auto off = xlstm::block_offsets(params, 0);
    for (std::size_t i = 0; i < cfg.d_model * cfg.d_model; ++i)
        params.data[off.W_proj + i] = 0.0;
    for (std::size_t i = 0; i < cfg.d_model * cfg.d_ff(); ++i)
        params.data[off.w_down + i] = 0.0;

    std::mt19937 rng(10);
    const std::size_t T = 7, d = cfg.d_model;
    auto X = testing::random_vector(rng, T * d);
    std::vector<double> Y(T * d);
    auto s = xlstm::fresh_state<double>(cfg);
    xlstm::block_forward(X.data(), T, cfg, params.data.data(), off,
                         Mode::chunkwise, ChunkConfig{}, s.cells.data(),
                         nullptr, Y.data());
    CHECK(max_abs_diff(Y, X) == 0.0);
}

TEST_CASE("block: composed sub-layer pipeline matches block_forward") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 11);
    auto off = xlstm::block_offsets(params, 0);
    const std::size_t T = 5, d = cfg.d_model, dff = cfg.d_ff();
    std::mt19937 rng(12);
    auto X = testing::random_vector(rng, T * d);
    const double* P = params.data.data();

    // Hand route with the tensor-level feedforward oracle.
    std::vector<double> xn(T * d), a(T * d), z(T * d), zn(T * d);
    for (std::size_t t = 0; t < T; ++t)
        xlstm::rmsnorm_row(X.data() + t * d, P + off.norm_mlstm,
                           cfg.norm_eps, d, xn.data() + t * d);
    auto s1 = xlstm::fresh_state<double>(cfg);
    xlstm::mlstm_layer_forward(xn.data(), T, cfg, P, off, Mode::chunkwise,
                               ChunkConfig{}, s1.cells.data(), nullptr,
                               a.data());
    for (std::size_t i = 0; i < T * d; ++i) z[i] = X[i] + a[i];
    for (std::size_t t = 0; t < T; ++t)
        xlstm::rmsnorm_row(z.data() + t * d, P + off.norm_ffn, cfg.norm_eps,
                           d, zn.data() + t * d);
    xlstm::Tensor<double> znt({T, d}, zn);
    xlstm::Tensor<double> wg(
        {dff, d}, std::vector<double>(P + off.w_gate, P + off.w_gate + dff * d));
    xlstm::Tensor<double> wu(
        {dff, d}, std::vector<double>(P + off.w_up, P + off.w_up + dff * d));
    xlstm::Tensor<double> wd(
        {d, dff}, std::vector<double>(P + off.w_down, P + off.w_down + dff * d));
    auto f = xlstm::swiglu_mlp(znt, wg, wu, wd);
    std::vector<double> expect(T * d);
    for (std::size_t i = 0; i < T * d; ++i) expect[i] = z[i] + f.data[i];

    std::vector<double> Y(T * d);
    auto s2 = xlstm::fresh_state<double>(cfg);
    xlstm::block_forward(X.data(), T, cfg, P, off, Mode::chunkwise,
                         ChunkConfig{}, s2.cells.data(), nullptr, Y.data());
    CHECK(max_abs_diff(Y, expect) < 1e-13);
}

TEST_CASE("block: gradients match finite differences") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 13);
    auto off = xlstm::block_offsets(params, 0);
    const std::size_t T = 4, d = cfg.d_model;
    std::mt19937 rng(14);
    auto X = testing::random_vector(rng, T * d);
    auto W = testing::random_vector(rng, T * d);  // loss weights

    auto loss_params = [&](const std::vector<double>& theta) {
        auto p2 = params;
        p2.data = theta;
        std::vector<double> Y(T * d);
        auto s = xlstm::fresh_state<double>(cfg);
        xlstm::block_forward(X.data(), T, cfg, p2.data.data(), off,
                             Mode::chunkwise, ChunkConfig{}, s.cells.data(),
                             nullptr, Y.data());
        double l = 0;
        for (std::size_t i = 0; i < T * d; ++i) l += W[i] * Y[i];
        return l;
    };

    xlstm::BlockSaved<double> saved;
    std::vector<double> Y(T * d);
    auto s = xlstm::fresh_state<double>(cfg);
    xlstm::block_forward(X.data(), T, cfg, params.data.data(), off,
                         Mode::chunkwise, ChunkConfig{}, s.cells.data(),
                         nullptr, Y.data(), &saved);
    std::vector<double> G(params.size(), 0.0), dX(T * d, 0.0);
    xlstm::block_backward(saved, cfg, params.data.data(), off, W.data(),
                          G.data(), dX.data());

    auto numeric = testing::numeric_gradient(loss_params, params.data);
    CHECK(testing::grad_mismatch(G, numeric) < 1e-4);

    auto loss_x = [&](const std::vector<double>& x) {
        std::vector<double> Y2(T * d);
        auto s2 = xlstm::fresh_state<double>(cfg);
        xlstm::block_forward(x.data(), T, cfg, params.data.data(), off,
                             Mode::chunkwise, ChunkConfig{}, s2.cells.data(),
                             nullptr, Y2.data());
        double l = 0;
        for (std::size_t i = 0; i < T * d; ++i) l += W[i] * Y2[i];
        return l;
    };
    auto numeric_x = testing::numeric_gradient(loss_x, X);
    CHECK(testing::grad_mismatch(dX, numeric_x) < 1e-4);
}

TEST_CASE("model: logits stay strictly inside the cap") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = random_params(cfg, 15);
    // Inflate the head so uncapped logits would exceed the bound.
    for (std::size_t i = 0; i < params.info("lm_head").size; ++i)
        params.ptr("lm_head")[i] *= 100.0;
    std::mt19937 rng(16);
    auto tokens = random_tokens(rng, 20, cfg.vocab_size);
    auto state = xlstm::fresh_state<double>(cfg);
    auto logits =
        model_forward(tokens, cfg, params, Mode::chunkwise, state);
    for (double v : logits) CHECK(std::abs(v) <= cfg.logit_cap);
}

TEST_CASE("model: mode equivalence on logits") {
    auto cfg = tiny_cfg(2, 16, 2);
    auto params = random_params(cfg, 17);
    std::mt19937 rng(18);
    auto tokens = random_tokens(rng, 40, cfg.vocab_size);
    auto s1 = xlstm::fresh_state<double>(cfg);
    auto s2 = xlstm::fresh_state<double>(cfg);
    auto lc = model_forward(tokens, cfg, params, Mode::chunkwise, s1,
                            ChunkConfig{16});
    auto lr = model_forward(tokens, cfg, params, Mode::recurrent, s2);
    CHECK(max_abs_diff(lc, lr) < 1e-8);
}

TEST_CASE("model: document boundary restarts the state") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = random_params(cfg, 19);
    std::mt19937 rng(20);
    auto tokens = random_tokens(rng, 24, cfg.vocab_size - 1);
    const std::size_t t_eod = 9;
    tokens[t_eod] = int(cfg.eod_token_id);

    auto s1 = xlstm::fresh_state<double>(cfg);
    auto full = model_forward(tokens, cfg, params, Mode::chunkwise, s1,
                              ChunkConfig{5});
    std::vector<int> suffix(tokens.begin() + t_eod + 1, tokens.end());
    auto s2 = xlstm::fresh_state<double>(cfg);
    auto part = model_forward(suffix, cfg, params, Mode::chunkwise, s2,
                              ChunkConfig{5});
    const std::size_t v = cfg.vocab_size;
    double worst = 0;
    for (std::size_t i = 0; i < suffix.size() * v; ++i)
        worst = std::max(
            worst, std::abs(full[(t_eod + 1) * v + i] - part[i]));
    CHECK(worst < 1e-10);
}

TEST_CASE("model: end-to-end gradients match finite differences") {
    auto cfg = tiny_cfg(2, 8, 2, 11);
    auto params = random_params(cfg, 21);
    std::mt19937 rng(22);
    std::vector<int> tokens = random_tokens(rng, 5, cfg.vocab_size);
    auto W = testing::random_vector(rng, tokens.size() * cfg.vocab_size);

    auto loss = [&](const std::vector<double>& theta) {
        auto p2 = params;
        p2.data = theta;
        auto s = xlstm::fresh_state<double>(cfg);
        auto logits = model_forward(tokens, cfg, p2, Mode::chunkwise, s,
                                    ChunkConfig{3});
        double l = 0;
        for (std::size_t i = 0; i < logits.size(); ++i) l += W[i] * logits[i];
        return l;
    };

    xlstm::ModelSaved<double> saved;
    auto s = xlstm::fresh_state<double>(cfg);
    model_forward(tokens, cfg, params, Mode::chunkwise, s, ChunkConfig{3},
                  &saved);
    std::vector<double> G(params.size(), 0.0);
    xlstm::model_backward(saved, cfg, params, W, G);

    auto numeric = testing::numeric_gradient(loss, params.data);
    CHECK(testing::grad_mismatch(G, numeric) < 1e-4);
}

TEST_CASE("model: rejects out-of-range token ids") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 23);
    auto s = xlstm::fresh_state<double>(cfg);
    std::vector<int> bad = {0, int(cfg.vocab_size)};
    CHECK_THROWS_AS(
        model_forward(bad, cfg, params, Mode::chunkwise, s),
        std::out_of_range);
}

TEST_CASE("generate: zero tokens returns the prefill state only") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 24);
    std::mt19937 rng(25);
    auto prompt = random_tokens(rng, 12, cfg.vocab_size);

    xlstm::ModelState<double> st;
    auto out = xlstm::generate(prompt, cfg, params, 0, {}, 123,
                               ChunkConfig{4}, &st);
    CHECK(out.empty());
    auto ref = xlstm::fresh_state<double>(cfg);
    model_forward(prompt, cfg, params, Mode::chunkwise, ref, ChunkConfig{4});
    for (std::size_t i = 0; i < ref.cells.size(); ++i) {
        CHECK(max_abs_diff(st.cells[i].C, ref.cells[i].C) == 0.0);
        CHECK(max_abs_diff(st.cells[i].n, ref.cells[i].n) == 0.0);
    }
    CHECK(st.pos == prompt.size());
}

TEST_CASE("generate: greedy decoding is deterministic") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = random_params(cfg, 26);
    std::mt19937 rng(27);
    auto prompt = random_tokens(rng, 6, cfg.vocab_size);
    auto a = xlstm::generate(prompt, cfg, params, 10, {}, 1);
    auto b = xlstm::generate(prompt, cfg, params, 10, {}, 99);
    CHECK(a == b);  // greedy ignores the seed entirely
}

TEST_CASE("generate: temperature sampling is seed-deterministic") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 28);
    std::mt19937 rng(29);
    auto prompt = random_tokens(rng, 4, cfg.vocab_size);
    xlstm::Sampler s{xlstm::Sampler::Kind::temperature, 1.3};
    auto a = xlstm::generate(prompt, cfg, params, 12, s, 7);
    auto b = xlstm::generate(prompt, cfg, params, 12, s, 7);
    CHECK(a == b);
}

TEST_CASE("generate: empty prompt with tokens requested is an error") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 30);
    CHECK_THROWS_AS(xlstm::generate<double>({}, cfg, params, 3, {}, 0),
                    std::invalid_argument);
}

TEST_CASE("generate: decode logits match a full forward on the prefix") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = random_params(cfg, 31);
    std::mt19937 rng(32);
    auto prompt = random_tokens(rng, 7, cfg.vocab_size);
    auto out = xlstm::generate(prompt, cfg, params, 5, {}, 0, ChunkConfig{4});
    REQUIRE(out.size() == 5);

    // Teacher-forcing parity: re-run the growing sequence from scratch and
    // check greedy picks reproduce the generated tokens.
    std::vector<int> seq = prompt;
    for (int tok : out) {
        auto s = xlstm::fresh_state<double>(cfg);
        auto logits =
            model_forward(seq, cfg, params, Mode::chunkwise, s, ChunkConfig{4});
        const double* last =
            logits.data() + (seq.size() - 1) * cfg.vocab_size;
        std::size_t best = 0;
        for (std::size_t i = 1; i < cfg.vocab_size; ++i)
            if (last[i] > last[best]) best = i;
        CHECK(int(best) == tok);
        seq.push_back(tok);
    }

    // And the incremental decode path reproduces full-forward logits.
    auto inc = xlstm::fresh_state<double>(cfg);
    auto logits_inc =
        model_forward(prompt, cfg, params, Mode::chunkwise, inc, ChunkConfig{4});
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::vector<int> prefix(seq.begin(),
                                seq.begin() + long(prompt.size() + i + 1));
        auto fs = xlstm::fresh_state<double>(cfg);
        auto full = model_forward(prefix, cfg, params, Mode::chunkwise, fs,
                                  ChunkConfig{4});
        logits_inc =
            model_forward({out[i]}, cfg, params, Mode::recurrent, inc);
        const std::size_t v = cfg.vocab_size;
        double worst = 0;
        for (std::size_t j = 0; j < v; ++j)
            worst = std::max(worst,
                             std::abs(logits_inc[j] -
                                      full[(prefix.size() - 1) * v + j]));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("attention: single token reduces to the value path") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = xlstm::build_attention_parameters<double>(cfg);
    std::mt19937 rng(33);
    xlstm::init_attention_parameters(params, cfg, rng);
    auto off = xlstm::attn_offsets(params, 0);
    const std::size_t d = cfg.d_model;
    auto x = testing::random_vector(rng, d);
    const double* P = params.data.data();

    std::vector<double> Kc, Vc, y(d);
    xlstm::attention_block_forward(x.data(), 1, cfg, P, off, Kc, Vc, y.data());

    // Softmax over one element is 1: attention output is just V of the token.
    std::vector<double> xn(d), v(d), proj(d), zn(d), f(d), expect(d);
    xlstm::rmsnorm_row(x.data(), P + off.norm_attn, cfg.norm_eps, d, xn.data());
    xlstm::linear_forward(xn.data(), P + off.W_v, (const double*)nullptr, 1, d,
                          d, v.data());
    xlstm::linear_forward(v.data(), P + off.W_proj, (const double*)nullptr, 1,
                          d, d, proj.data());
    for (std::size_t i = 0; i < d; ++i) proj[i] += x[i];
    xlstm::rmsnorm_row(proj.data(), P + off.norm_ffn, cfg.norm_eps, d,
                       zn.data());
    xlstm::ffn_forward(zn.data(), 1, d, cfg.d_ff(), P + off.w_gate,
                       P + off.w_up, P + off.w_down, f.data());
    for (std::size_t i = 0; i < d; ++i) expect[i] = proj[i] + f[i];
    CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("attention: causal — later tokens cannot affect earlier rows") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = xlstm::build_attention_parameters<double>(cfg);
    std::mt19937 rng(34);
    xlstm::init_attention_parameters(params, cfg, rng);
    auto off = xlstm::attn_offsets(params, 0);
    const std::size_t T = 10, d = cfg.d_model;
    auto x = testing::random_vector(rng, T * d);

    std::vector<double> Kc, Vc, y1(T * d);
    xlstm::attention_block_forward(x.data(), T, cfg, params.data.data(), off,
                                   Kc, Vc, y1.data());
    auto x2 = x;
    x2[6 * d + 3] += 1.0;
    std::vector<double> Kc2, Vc2, y2(T * d);
    xlstm::attention_block_forward(x2.data(), T, cfg, params.data.data(), off,
                                   Kc2, Vc2, y2.data());
    for (std::size_t i = 0; i < 6 * d; ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("attention: KV-cache decode matches the full forward") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = xlstm::build_attention_parameters<float>(cfg);
    std::mt19937 rng(35);
    xlstm::init_attention_parameters(params, cfg, rng);
    std::vector<int> tokens = random_tokens(rng, 16, cfg.vocab_size);

    auto full_cache = xlstm::KVCache<float>::fresh(cfg);
    auto full = xlstm::attention_model_forward(tokens, cfg, params, full_cache);

    auto inc_cache = xlstm::KVCache<float>::fresh(cfg);
    std::vector<float> inc_last;
    for (std::size_t t = 0; t < tokens.size(); ++t)
        inc_last = xlstm::attention_model_forward({tokens[t]}, cfg, params,
                                                  inc_cache);
    const std::size_t v = cfg.vocab_size;
    double worst = 0;
    for (std::size_t j = 0; j < v; ++j)
        worst = std::max(worst, std::abs(double(inc_last[j]) -
                                         double(full[15 * v + j])));
    CHECK(worst < 1e-6);
    CHECK(inc_cache.len == 16);
    CHECK(inc_cache.bytes() ==
          2 * cfg.num_blocks * cfg.d_model * sizeof(float) * 16);
}

TEST_CASE("config: parse, serialize, and reject unknown keys") {
    ModelConfig cfg;
    cfg.d_model = 64;
    cfg.num_heads = 4;
    cfg.ff_proj_factor = 2.66;
    auto text = xlstm::serialize_model_config(cfg);
    auto back = xlstm::parse_model_config(text);
    CHECK(back.d_model == 64);
    CHECK(back.num_heads == 4);
    CHECK(back.ff_proj_factor == cfg.ff_proj_factor);
    CHECK(xlstm::serialize_model_config(back) == text);

    CHECK_THROWS_AS(xlstm::parse_model_config("d_modle = 64\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(xlstm::parse_model_config("d_model 64\n"),
                    std::invalid_argument);
    // Comments and blanks are fine.
    auto ok = xlstm::parse_model_config("# comment\n\nd_model = 32\nnum_heads = 2\n");
    CHECK(ok.d_model == 32);
}

TEST_CASE("checkpoint: byte-exact round trip and identical logits") {
    auto cfg = tiny_cfg(2, 8, 2);
    auto params = random_params(cfg, 36);
    const std::string p1 = "ckpt_a.bin", p2 = "ckpt_b.bin";
    xlstm::save_checkpoint(params, cfg, p1);
    auto [loaded, cfg2] = xlstm::load_checkpoint<double>(p1);
    xlstm::save_checkpoint(loaded, cfg2, p2);

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(p1) == slurp(p2));
    CHECK(loaded.data == params.data);

    std::mt19937 rng(37);
    auto tokens = random_tokens(rng, 10, cfg.vocab_size);
    auto s1 = xlstm::fresh_state<double>(cfg);
    auto s2 = xlstm::fresh_state<double>(cfg2);
    auto l1 = model_forward(tokens, cfg, params, Mode::chunkwise, s1);
    auto l2 = model_forward(tokens, cfg2, loaded, Mode::chunkwise, s2);
    CHECK(l1 == l2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint: shape mismatch is a named error") {
    auto cfg = tiny_cfg(1, 8, 2);
    auto params = random_params(cfg, 38);
    auto other = tiny_cfg(1, 16, 2);  // manifest will not match this config
    const std::string path = "ckpt_bad.bin";
    xlstm::save_checkpoint(params, other, path);
    CHECK_THROWS_AS(xlstm::load_checkpoint<double>(path),
                    xlstm::shape_mismatch_error);
    std::remove(path.c_str());
}

TEST_SUITE_END();
