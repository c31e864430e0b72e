// Command-line front end: inference benchmark scenarios (generate, ttft,
// prefill, memory), the analytic cost report (analyze), and desk-scale
// training (train). Emits CSV; exits nonzero with an "error: ..." line on
// failure.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "xlstm/alloc_hooks.hpp"
#include "xlstm/bench.hpp"
#include "xlstm/checkpoint.hpp"
#include "xlstm/config.hpp"
#include "xlstm/trainer.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string precision = "f32";
    std::uint64_t seed = 1;
    std::string out;
    std::size_t repeats = 5, warmups = 2, chunk_size = 64, threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path,
                    "model config file (key = value lines)");
    cmd->add_option("--precision", c.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--seed", c.seed, "rng seed");
    cmd->add_option("--out", c.out, "output CSV path (default: stdout)");
    cmd->add_option("--repeats", c.repeats, "timed repeats per point");
    cmd->add_option("--warmups", c.warmups, "discarded warmup runs");
    cmd->add_option("--chunk-size", c.chunk_size, "prefill chunk size");
    cmd->add_option("--threads", c.threads,
                    "batch-parallel prefill workers (timings become "
                    "nondeterministic; token outputs do not)");
}

xlstm::ModelConfig resolve_config(const CommonOpts& c) {
    if (c.config_path.empty()) return xlstm::desk_bench_config();
    std::ifstream in(c.config_path);
    if (!in)
        throw std::runtime_error("cannot open config file: " + c.config_path);
    std::ostringstream text;
    text << in.rdbuf();
    return xlstm::parse_model_config(text.str());
}

xlstm::BenchOptions bench_options(const CommonOpts& c) {
    xlstm::BenchOptions opt;
    opt.repeats = c.repeats;
    opt.warmups = c.warmups;
    opt.seed = c.seed;
    opt.chunk_size = c.chunk_size;
    opt.threads = c.threads;
    return opt;
}

void emit_csv(const CommonOpts& c, const std::vector<xlstm::BenchResult>& rows) {
    if (c.out.empty()) {
        xlstm::write_bench_csv(std::cout, rows);
        return;
    }
    std::ofstream out(c.out, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open output file: " + c.out);
    xlstm::write_bench_csv(out, rows);
}

template <class Fn32, class Fn64>
void with_precision(const CommonOpts& c, Fn32&& f32, Fn64&& f64) {
    if (c.precision == "f64")
        f64();
    else
        f32();
}

void run_analyze(const CommonOpts& c, std::size_t seq_len,
                 std::size_t chunk_size) {
    const auto cfg = resolve_config(c);
    const auto r = xlstm::make_cost_report(cfg, seq_len, chunk_size);
    const auto t_flops = xlstm::flops_transformer_model(cfg, seq_len);
    const auto t_params = xlstm::count_params_transformer(cfg);
    const std::uint64_t t_kv_bytes =
        2ull * cfg.num_blocks * cfg.d_model * 4 * seq_len;

    std::ostringstream csv;
    csv << "family,seq_len,chunk_size,params,forward_flops,backward_flops,"
           "state_bytes,kv_equiv_tokens\n";
    csv << "mlstm," << seq_len << ',' << chunk_size << ',' << r.param_count
        << ',' << r.forward_flops << ',' << r.backward_flops << ','
        << r.state_bytes << ',' << r.kv_equiv_tokens << '\n';
    csv << "attention," << seq_len << ",," << t_params << ',' << t_flops << ','
        << 2 * t_flops << ',' << t_kv_bytes << ",\n";
    if (c.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(c.out, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open output file: " + c.out);
        out << csv.str();
    }

    std::fprintf(stderr,
                 "%-22s %20s %20s\n"
                 "%-22s %20llu %20llu\n"
                 "%-22s %20llu %20llu\n"
                 "%-22s %20llu %20llu\n"
                 "%-22s %20llu %20s\n",
                 "", "mlstm", "attention",  //
                 "params", (unsigned long long)r.param_count,
                 (unsigned long long)t_params,  //
                 "forward flops", (unsigned long long)r.forward_flops,
                 (unsigned long long)t_flops,  //
                 "state/kv bytes", (unsigned long long)r.state_bytes,
                 (unsigned long long)t_kv_bytes,  //
                 "kv-equivalent tokens", (unsigned long long)r.kv_equiv_tokens,
                 "-");
}

struct TrainOpts {
    std::vector<std::string> text_paths;
    std::string token_path, index_path;
    std::string log_path, save_path;
    std::size_t steps = 100, context = 256, batch = 8, warmup = 10;
    std::size_t chunk_size = 64, cooldown = 0;
    double peak_lr = 5e-4;
    std::string schedule = "exponential";
};

template <class Real>
void run_train(const CommonOpts& c, const TrainOpts& t) {
    auto cfg = resolve_config(c);
    xlstm::TokenDataset data;
    if (!t.token_path.empty()) {
        data.tokens = xlstm::read_token_file(t.token_path);
        data.doc_offsets = t.index_path.empty()
                               ? std::vector<std::uint64_t>{0}
                               : xlstm::read_index_file(t.index_path);
    } else if (!t.text_paths.empty()) {
        std::vector<std::string> docs;
        for (const auto& path : t.text_paths) {
            std::ifstream in(path, std::ios::binary);
            if (!in)
                throw std::runtime_error("cannot open text file: " + path);
            std::ostringstream buf;
            buf << in.rdbuf();
            docs.push_back(buf.str());
        }
        data = xlstm::ingest_documents(docs,
                                       std::uint32_t(cfg.eod_token_id));
    } else {
        throw std::runtime_error("train: need --text or --tokens input");
    }

    xlstm::TrainConfig tc;
    tc.total_steps = t.steps;
    tc.warmup_steps = t.warmup;
    tc.cooldown_steps = t.cooldown;
    tc.context = t.context;
    tc.batch_size = t.batch;
    tc.chunk_size = t.chunk_size;
    tc.peak_lr = t.peak_lr;
    tc.schedule = t.schedule == "cosine" ? xlstm::LrSchedule::cosine
                                         : xlstm::LrSchedule::exponential;
    tc.exp_target_step = t.steps;

    auto params = xlstm::build_parameters<Real>(cfg);
    std::mt19937 rng(static_cast<unsigned>(c.seed));
    xlstm::init_parameters(params, cfg, rng);

    auto result = xlstm::train(params, cfg, data, tc);
    if (!t.log_path.empty()) {
        std::ofstream log(t.log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("cannot open log file: " + t.log_path);
        xlstm::write_train_log_csv(log, result.log);
    } else {
        xlstm::write_train_log_csv(std::cout, result.log);
    }
    if (result.aborted)
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(result.abort_step));
    if (!t.save_path.empty())
        xlstm::save_checkpoint(params, cfg, t.save_path);
    std::fprintf(stderr, "final loss %.6f after %zu steps\n",
                 result.log.empty() ? 0.0 : result.log.back().loss, t.steps);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mLSTM engine: benchmarks, cost analysis, training"};
    app.require_subcommand(1);

    CommonOpts c;
    std::vector<std::size_t> prefills = {0, 512, 4096};
    std::size_t gen_len = 100;
    std::vector<std::size_t> first_ns = {1, 100};
    std::size_t total_tokens = 65536 / 8;
    std::vector<std::size_t> batches = {1, 2, 4};
    std::vector<std::size_t> ctxs = {128, 512, 2048};
    std::vector<std::size_t> gen_lens = {16, 64, 256, 1024};
    std::size_t seq_len = 8192;
    std::size_t an_chunk = 64;
    TrainOpts t;

    auto* g = app.add_subcommand("generate",
                                 "generation throughput at varying prefill");
    add_common(g, c);
    g->add_option("--prefill", prefills, "prefill lengths");
    g->add_option("--gen-len", gen_len, "tokens to generate");

    auto* tt = app.add_subcommand("ttft", "time to first 1/100 tokens");
    add_common(tt, c);
    tt->add_option("--prefill", prefills, "prefill lengths");
    tt->add_option("--first-n", first_ns, "token counts to time");

    auto* p = app.add_subcommand("prefill",
                                 "fixed-budget prefill throughput grid");
    add_common(p, c);
    p->add_option("--total-tokens", total_tokens, "token budget per grid cell");
    p->add_option("--batch", batches, "batch sizes");
    p->add_option("--ctx", ctxs, "context lengths");

    auto* m = app.add_subcommand("memory", "state memory vs generation length");
    add_common(m, c);
    m->add_option("--gen-len", gen_lens, "generation lengths");

    auto* a = app.add_subcommand("analyze", "analytic cost report");
    add_common(a, c);
    a->add_option("--seq-len", seq_len, "sequence length");
    a->add_option("--cell-chunk", an_chunk, "chunk size for the cell count");

    auto* tr = app.add_subcommand("train", "desk-scale training run");
    add_common(tr, c);
    tr->add_option("--text", t.text_paths, "text files, one document each");
    tr->add_option("--tokens", t.token_path, "binary u32 token file");
    tr->add_option("--index", t.index_path, "binary u64 doc-offset file");
    tr->add_option("--steps", t.steps, "optimizer steps");
    tr->add_option("--context", t.context, "sequence length");
    tr->add_option("--batch", t.batch, "batch size");
    tr->add_option("--warmup-steps", t.warmup, "linear warmup steps");
    tr->add_option("--cooldown-steps", t.cooldown, "linear cooldown steps");
    tr->add_option("--peak-lr", t.peak_lr, "peak learning rate");
    tr->add_option("--schedule", t.schedule, "exponential or cosine")
        ->check(CLI::IsMember({"exponential", "cosine"}));
    tr->add_option("--log", t.log_path, "training log CSV path");
    tr->add_option("--save", t.save_path, "checkpoint output path");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto opt = bench_options(c);
        if (g->parsed()) {
            const auto cfg = resolve_config(c);
            with_precision(
                c,
                [&] {
                    emit_csv(c, xlstm::bench_generate<float>(cfg, prefills,
                                                             gen_len, opt));
                },
                [&] {
                    emit_csv(c, xlstm::bench_generate<double>(cfg, prefills,
                                                              gen_len, opt));
                });
        } else if (tt->parsed()) {
            const auto cfg = resolve_config(c);
            with_precision(
                c,
                [&] {
                    emit_csv(c, xlstm::bench_ttft<float>(cfg, prefills,
                                                         first_ns, opt));
                },
                [&] {
                    emit_csv(c, xlstm::bench_ttft<double>(cfg, prefills,
                                                          first_ns, opt));
                });
        } else if (p->parsed()) {
            const auto cfg = resolve_config(c);
            std::vector<std::pair<std::size_t, std::size_t>> grid;
            for (auto b : batches)
                for (auto x : ctxs) grid.emplace_back(b, x);
            with_precision(
                c,
                [&] {
                    emit_csv(c, xlstm::bench_prefill<float>(cfg, total_tokens,
                                                            grid, opt));
                },
                [&] {
                    emit_csv(c, xlstm::bench_prefill<double>(cfg, total_tokens,
                                                             grid, opt));
                });
        } else if (m->parsed()) {
            const auto cfg = resolve_config(c);
            with_precision(
                c,
                [&] {
                    emit_csv(c,
                             xlstm::bench_memory<float>(cfg, gen_lens, opt));
                },
                [&] {
                    emit_csv(c,
                             xlstm::bench_memory<double>(cfg, gen_lens, opt));
                });
        } else if (a->parsed()) {
            run_analyze(c, seq_len, an_chunk);
        } else if (tr->parsed()) {
            with_precision(
                c, [&] { run_train<float>(c, t); },
                [&] { run_train<double>(c, t); });
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
