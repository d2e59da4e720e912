// Acceptance suite: one criterion per function, one [PASS]/[FAIL] line per
// criterion, nonzero exit when anything fails. Tolerances are pinned here,
// not configurable.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "convert.hpp"
#include "mom/analysis.hpp"
#include "mom/checkpoint.hpp"
#include "mom/corpus.hpp"
#include "mom/profiler.hpp"
#include "mom/run_config.hpp"
#include "mom/trace_io.hpp"
#include "mom/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void fail(const std::string& why) {
        ok = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void note(const std::string& info) {
        if (!detail.empty()) detail += "; ";
        detail += info;
    }
};

template <typename T>
mom::ModelConfig make_cfg(size_t d, size_t heads, size_t d_ff, size_t max_seq,
                          size_t vocab = 256) {
    mom::ModelConfig c;
    c.d = d;
    c.heads = heads;
    c.d_ff = d_ff;
    c.max_seq = max_seq;
    c.vocab = vocab;
    return c;
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------- 1
Outcome criterion_gradients() {
    Outcome out;
    mom::Rng rng(20240601);
    const double tol = 1e-6;
    double worst = 0.0;
    size_t trials = 0;

    auto check = [&](mom::Tensor<double>& x,
                     const std::function<mom::Tensor<double>()>& f) {
        const double err = oracle::fd_check<double>(x, f);
        worst = std::max(worst, err);
        ++trials;
        return err < tol;
    };

    // Primitive ops, 100 randomized cases each.
    size_t bad = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const size_t r = 1 + rng.next_below(5), c = 2 + rng.next_below(6);
        auto x = oracle::rand_tensor<double>(rng, {r, c});
        auto y = oracle::rand_tensor<double>(rng, {r, c});
        auto weigh = [&](mom::Tensor<double> t) {
            return mom::sum_all(mom::mul(t, mom::slice_rows(y, 0, t.rows())));
        };
        if (!check(x, [&] { return mom::sum_all(mom::mul(mom::add(x, y), y)); })) ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::mul(mom::sub(x, y), y)); })) ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::gelu(x)); })) ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::sigmoid(x)); })) ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::tanh_op(x)); })) ++bad;
        if (!check(x, [&] { return mom::mean_all(mom::mul(mom::affine(x, 1.7, 0.3), x)); }))
            ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::mul(mom::softmax_lastdim(x), y)); }))
            ++bad;

        auto gain = oracle::rand_tensor<double>(rng, {c}, true, 0.5, 1.5);
        auto bias = oracle::rand_tensor<double>(rng, {c});
        if (!check(x, [&] {
                return mom::sum_all(mom::mul(mom::layernorm(x, gain, bias, 1e-5), y));
            }))
            ++bad;

        const size_t k = 1 + rng.next_below(5);
        auto a = oracle::rand_tensor<double>(rng, {r, k});
        auto b = oracle::rand_tensor<double>(rng, {k, c});
        if (!check(a, [&] { return mom::sum_all(mom::mul(mom::matmul(a, b), y)); })) ++bad;
        if (!check(b, [&] { return mom::sum_all(mom::mul(mom::matmul(a, b), y)); })) ++bad;
        auto bt = oracle::rand_tensor<double>(rng, {c, k});
        if (!check(bt, [&] { return mom::sum_all(mom::mul(mom::matmul_nt(a, bt), y)); }))
            ++bad;

        auto brow = oracle::rand_tensor<double>(rng, {c});
        if (!check(brow, [&] { return mom::sum_all(mom::mul(mom::add_bias(x, brow), y)); }))
            ++bad;
        auto s = oracle::rand_tensor<double>(rng, {r});
        if (!check(s, [&] { return mom::sum_all(mom::mul(mom::rowwise_scale(x, s), y)); }))
            ++bad;

        const size_t start = rng.next_below(c - 1);
        const size_t len = 1 + rng.next_below(c - start);
        if (!check(x, [&] { return mom::sum_all(mom::slice_lastdim(x, start, len)); }))
            ++bad;
        auto p2 = oracle::rand_tensor<double>(rng, {r, 2});
        if (!check(p2, [&] {
                auto cat = mom::concat_lastdim<double>({x, p2});
                return mom::sum_all(mom::mul(cat, cat));
            }))
            ++bad;

        std::vector<std::vector<int>> idx(r, std::vector<int>(2));
        for (auto& row : idx)
            for (auto& v : row) v = int(rng.next_below(c));
        if (!check(x, [&] {
                auto g = mom::gather_cols(x, idx);
                return mom::sum_all(mom::mul(g, g));
            }))
            ++bad;
        std::vector<std::vector<int>> spread(r, std::vector<int>(c));
        for (auto& row : spread)
            for (auto& v : row) v = int(rng.next_below(c + 1));
        if (!check(x, [&] {
                auto sc = mom::scatter_cols(x, spread, c + 1);
                return mom::sum_all(mom::mul(sc, sc));
            }))
            ++bad;

        std::vector<int> rows(r + 1);
        for (auto& v : rows) v = int(rng.next_below(r));
        if (!check(x, [&] {
                auto g = mom::gather_rows(x, rows);
                return mom::sum_all(mom::mul(g, g));
            }))
            ++bad;
        if (!check(x, [&] {
                auto sc = mom::scatter_rows(mom::gather_rows(x, rows), rows, r);
                return mom::sum_all(mom::mul(sc, sc));
            }))
            ++bad;

        auto table = oracle::rand_tensor<double>(rng, {6, c});
        std::vector<int> ids(r);
        for (auto& id : ids) id = int(rng.next_below(6));
        if (!check(table, [&] { return mom::sum_all(mom::mul(mom::embedding(table, ids), y)); }))
            ++bad;

        auto logits = oracle::rand_tensor<double>(rng, {r, 5});
        std::vector<int> targets(r);
        for (auto& t : targets) t = int(rng.next_below(5));
        if (!check(logits, [&] { return mom::cross_entropy_mean(logits, targets); })) ++bad;
        (void)weigh;
    }

    // Composite modules.
    auto cfg = make_cfg<double>(8, 2, 12, 16, 11);
    for (int rep = 0; rep < 20; ++rep) {
        auto m = mom::MhaModule<double>::init(cfg, rng);
        auto f = mom::FfnModule<double>::init(cfg, rng);
        auto cell = mom::GruCell<double>::init(4, rng, 0.5);
        auto x = oracle::rand_tensor<double>(rng, {3, 8}, true);
        auto mask = mom::causal_mask<double>(3);
        auto xs = oracle::rand_tensor<double>(rng, {2, 4}, true);
        auto ss = oracle::rand_tensor<double>(rng, {2, 4}, true);
        if (!check(x, [&] { return mom::sum_all(mom::mha_forward(m, cfg, x, mask)); })) ++bad;
        if (!check(m.wq, [&] { return mom::sum_all(mom::mha_forward(m, cfg, x, mask)); }))
            ++bad;
        if (!check(x, [&] { return mom::sum_all(mom::ffn_forward(f, x)); })) ++bad;
        if (!check(f.w_up, [&] { return mom::sum_all(mom::ffn_forward(f, x)); })) ++bad;
        if (!check(xs, [&] { return mom::sum_all(cell.step(xs, ss)); })) ++bad;
        if (!check(ss, [&] { return mom::sum_all(cell.step(xs, ss)); })) ++bad;
        if (!check(cell.uh, [&] { return mom::sum_all(cell.step(xs, ss)); })) ++bad;
    }

    // End-to-end lm_loss, directional probes over several parameter groups.
    for (uint64_t seed : {64ull, 66ull, 68ull}) {
        auto mcfg = make_cfg<double>(8, 2, 16, 12, 11);
        auto model = mom::MomModel<double>::init(mcfg, mom::parse_chunk_plan("[1-2]"),
                                                 mom::parse_mom_config("K2H2S"), seed);
        std::vector<int> ids{1, 6, 3, 8};
        std::vector<int> targets{6, 3, 8, 0};
        auto f = [&] { return mom::lm_loss(mom::lm_forward(model, ids), targets); };
        mom::Rng dir_rng(seed * 13 + 7);
        for (auto& [name, tensor] : model.named_params()) {
            const double err = oracle::fd_check_dir<double>(*tensor, f, dir_rng);
            worst = std::max(worst, err);
            ++trials;
            if (err >= tol) {
                ++bad;
                out.fail("lm_loss grad vs FD failed at " + name + " (err " + fmt(err) + ")");
            }
        }
    }

    if (bad > 0) out.fail(std::to_string(bad) + " gradient checks >= 1e-6");
    out.note(std::to_string(trials) + " checks, worst rel err " + fmt(worst));
    return out;
}

// ---------------------------------------------------------------------- 2
Outcome criterion_vanilla_reduction() {
    Outcome out;
    mom::Rng rng(2);
    auto cfg = make_cfg<float>(64, 4, 256, 16);
    auto chunk = mom::make_vanilla_chunk<float>(cfg, 4, rng);
    auto mask = mom::causal_mask<float>(16);

    std::vector<oracle::BlockWeights> blocks;
    for (size_t h = 0; h < 4; ++h) {
        oracle::BlockWeights b;
        auto cp = [](const mom::Tensor<float>& t) {
            return oracle::Vec(t.values().begin(), t.values().end());
        };
        const auto& attn = chunk.pool.attention[h];
        const auto& ffn = chunk.pool.ffn[h];
        b.attn = {64, 4, cp(attn.wq), cp(attn.bq), cp(attn.wk), cp(attn.bk),
                  cp(attn.wv), cp(attn.bv), cp(attn.wo), cp(attn.bo)};
        b.ffn = {64, 256, cp(ffn.w_up), cp(ffn.b_up), cp(ffn.w_down), cp(ffn.b_down)};
        b.ln_attn_gain = cp(chunk.ln_attn_gain);
        b.ln_attn_bias = cp(chunk.ln_attn_bias);
        b.ln_ffn_gain = cp(chunk.ln_ffn_gain);
        b.ln_ffn_bias = cp(chunk.ln_ffn_bias);
        b.eps = cfg.eps;
        blocks.push_back(std::move(b));
    }

    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        auto x = oracle::rand_tensor<float>(rng, {16, 64}, false);
        auto got = mom::run_chunk(chunk, cfg, x, mask);
        auto ref = oracle::prenorm_stack(blocks,
                                         {x.values().begin(), x.values().end()}, 16);
        for (size_t i = 0; i < got.numel(); ++i)
            worst = std::max(worst, std::abs(double(got.values()[i]) - ref[i]));
    }
    if (worst >= 1e-6) out.fail("max |engine - reference| = " + fmt(worst));
    out.note("50 inputs, max abs diff " + fmt(worst));
    return out;
}

// ---------------------------------------------------------------------- 3
Outcome criterion_special_cases() {
    Outcome out;
    mom::Rng rng(3);
    auto cfg = make_cfg<double>(8, 2, 16, 16);
    auto mask = mom::causal_mask<double>(4);

    // (a) layer-skip with c_skip(h)=0 is an exact identity at step h.
    for (int trial = 0; trial < 20; ++trial) {
        auto chunk = mom::make_layer_skip_chunk<double>(cfg, {1, 0, 1}, rng);
        auto x = oracle::rand_tensor<double>(rng, {4, 8}, false);
        auto state = mom::ChunkState<double>::zeros(4, cfg.d);
        auto s0 = mom::forward_step(chunk, cfg, 0, x, mask, state);
        auto s1 = mom::forward_step(chunk, cfg, 1, s0.x_next, mask, state);
        if (s1.x_next.node().get() != s0.x_next.node().get()) {
            out.fail("layer-skip step with c_skip=0 is not the identity buffer");
            break;
        }
    }

    // (b) constant c_share equals the manual repeated-application loop.
    double worst_share = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        auto chunk = mom::make_sharing_chunk<double>(cfg, {0, 0, 0, 0}, 3, rng);
        auto x = oracle::rand_tensor<double>(rng, {4, 8}, false);
        auto got = mom::run_chunk(chunk, cfg, x, mask);
        auto manual = testutil::vec(x);
        auto block = testutil::block_weights(chunk, cfg, 0);
        for (int rep = 0; rep < 4; ++rep) manual = oracle::prenorm_block(block, manual, 4);
        for (size_t i = 0; i < got.numel(); ++i)
            worst_share = std::max(worst_share, std::abs(got.values()[i] - manual[i]));
    }
    if (worst_share >= 1e-9)
        out.fail("parameter sharing vs manual loop diff " + fmt(worst_share));

    // (c) moe policy vs the standalone top-2 reference.
    double worst_moe = 0.0;
    auto moe_cfg = make_cfg<double>(8, 2, 12, 16);
    for (int trial = 0; trial < 20; ++trial) {
        auto chunk = mom::make_moe_chunk<double>(moe_cfg, 3, 2, 2, rng);
        auto x = oracle::rand_tensor<double>(rng, {4, 8}, false);
        auto got = mom::run_chunk(chunk, moe_cfg, x, mask);
        oracle::MoeWeights w;
        w.experts_per_layer = 3;
        for (size_t h = 0; h < 2; ++h)
            w.attn.push_back(
                testutil::attn_weights(chunk.pool.attention[h], moe_cfg.d, moe_cfg.heads));
        for (size_t e = 0; e < chunk.pool.n_ffn(); ++e)
            w.experts.push_back(
                testutil::ffn_weights(chunk.pool.ffn[e], moe_cfg.d, moe_cfg.d_ff));
        w.router = testutil::gru_weights(chunk.gru_ffn.cell, moe_cfg.d);
        w.router_proj = testutil::vec(chunk.gru_ffn.projection);
        w.ln_attn_gain = testutil::vec(chunk.ln_attn_gain);
        w.ln_attn_bias = testutil::vec(chunk.ln_attn_bias);
        w.ln_ffn_gain = testutil::vec(chunk.ln_ffn_gain);
        w.ln_ffn_bias = testutil::vec(chunk.ln_ffn_bias);
        w.eps = moe_cfg.eps;
        auto ref = oracle::moe_forward(w, testutil::vec(x), 4, 2);
        for (size_t i = 0; i < got.numel(); ++i)
            worst_moe = std::max(worst_moe, std::abs(got.values()[i] - ref[i]));
    }
    if (worst_moe >= 1e-6) out.fail("moe vs standalone reference diff " + fmt(worst_moe));

    out.note("sharing diff " + fmt(worst_share) + ", moe diff " + fmt(worst_moe));
    return out;
}

// ---------------------------------------------------------------------- 4
Outcome criterion_skip_bitexact() {
    Outcome out;
    mom::Rng rng(4);
    auto cfg = make_cfg<float>(16, 2, 32, 8);
    auto mask = mom::causal_mask<float>(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto chunk = mom::make_mom_chunk<float>(cfg, 2, 1, 2, true, rng);
        auto x = oracle::rand_tensor<float>(rng, {6, 16}, false);
        auto state = mom::ChunkState<float>::zeros(6, cfg.d);
        mom::RoutingDecision skip_all;
        skip_all.num_choices = 3;
        skip_all.skip_index = 2;
        skip_all.indices.assign(6, {2});
        skip_all.gates.assign(6, {1.0});
        auto step = mom::forward_step(chunk, cfg, 0, x, mask, state, &skip_all, &skip_all);
        for (size_t i = 0; i < x.numel(); ++i)
            if (step.x_next.values()[i] != x.values()[i]) {
                out.fail("x_next differs from x under forced SKIP");
                return out;
            }
    }
    out.note("20 chunks, x_{h+1} == x_h bitwise");
    return out;
}

// ---------------------------------------------------------------------- 5
Outcome criterion_router() {
    Outcome out;
    mom::Rng rng(5);
    size_t mismatches = 0;
    double worst_gate = 0.0;
    for (int trial = 0; trial < 100000; ++trial) {
        const size_t n = 2 + rng.next_below(7);
        const size_t k = 1 + rng.next_below(n);
        oracle::Vec logits(n);
        const bool quantized = trial % 3 == 0;  // force ties often
        for (auto& v : logits)
            v = quantized ? double(int(rng.next_below(4))) : rng.uniform(-5, 5);
        auto got = mom::topk_indices(logits.data(), n, k);
        auto want = oracle::topk_sorted(logits, k);
        if (got != want) ++mismatches;

        oracle::Vec selected(k);
        for (size_t j = 0; j < k; ++j) selected[j] = logits[size_t(got[j])];
        auto gates = oracle::softmax_row(selected);
        double sum = 0.0;
        for (const double g : gates) sum += g;
        worst_gate = std::max(worst_gate, std::abs(sum - 1.0));
    }
    if (mismatches) out.fail(std::to_string(mismatches) + " top-k mismatches");
    if (worst_gate >= 1e-6) out.fail("gate sums off by " + fmt(worst_gate));

    // Shift invariance, exact at the index level (dyadic grid logits).
    size_t shifts_bad = 0;
    for (int trial = 0; trial < 3000; ++trial) {
        const size_t n = 3 + rng.next_below(5);
        const size_t k = 1 + rng.next_below(n);
        std::vector<double> base(n);
        for (auto& v : base) v = double(int(rng.next_below(2048)) - 1024) / 128.0;
        const double shift = double(int(rng.next_below(33)) - 16);
        auto la = mom::Tensor<double>::from_data({1, n}, base);
        std::vector<double> shifted(base);
        for (auto& v : shifted) v += shift;
        auto lb = mom::Tensor<double>::from_data({1, n}, shifted);
        mom::Tensor<double> ga, gb;
        auto da = mom::detail::select_topk(la, n, k, mom::RouterKind::ffn, 0, -1, ga);
        auto db = mom::detail::select_topk(lb, n, k, mom::RouterKind::ffn, 0, -1, gb);
        if (da.indices[0] != db.indices[0]) ++shifts_bad;
        for (size_t j = 0; j < k; ++j)
            if (da.gates[0][j] != db.gates[0][j]) ++shifts_bad;
    }
    if (shifts_bad) out.fail(std::to_string(shifts_bad) + " shift-invariance violations");
    out.note("100000 top-k vectors, worst gate-sum err " + fmt(worst_gate));
    return out;
}

// ---------------------------------------------------------------------- 6
Outcome criterion_flops() {
    Outcome out;
    auto dims = mom::ProfileDims::preset("gpt2-small");
    auto plan = mom::parse_chunk_plan("[1-1-4-1-4-1]");
    auto flops = [&](const char* mc) {
        return mom::estimate_flops(dims.cfg, plan, mom::parse_mom_config(mc), 1024)
            .forward_flops;
    };
    const double base = flops("K1H4");
    const double r_e = flops("K3H1S") / base;
    const double r_p = flops("K2H6S") / base;
    const double r_i = flops("K3H2S") / base;
    if (!(r_e >= 0.79 && r_e <= 0.89)) out.fail("K3H1S ratio " + fmt(r_e));
    if (!(r_p >= 1.65 && r_p <= 1.81)) out.fail("K2H6S ratio " + fmt(r_p));
    if (!(r_i >= 1.12 && r_i <= 1.27)) out.fail("K3H2S ratio " + fmt(r_i));

    const size_t p0 = mom::estimate_params(dims.cfg, plan);
    for (const char* mc : {"K1H4", "K3H1S", "K2H6S", "K3H2S"}) {
        auto rep = mom::estimate_flops(dims.cfg, plan, mom::parse_mom_config(mc), 1024);
        if (rep.param_count != p0) out.fail(std::string("param count differs for ") + mc);
    }
    out.note("ratios " + fmt(r_e) + " / " + fmt(r_p) + " / " + fmt(r_i) + ", params " +
             std::to_string(p0));
    return out;
}

// ---------------------------------------------------------------------- 7
Outcome criterion_decomposition() {
    Outcome out;
    auto cfg = make_cfg<float>(32, 4, 128, 32);
    auto vanilla = mom::MomModel<float>::init_vanilla(cfg, 8, 7001);
    auto plan = mom::parse_chunk_plan("[1-1-4-1-1]");
    auto momm = mom::decompose_vanilla(vanilla, plan, mom::parse_mom_config("K2H2S"), 7002);

    auto& chunk = std::get<mom::Chunk<float>>(momm.blocks[2]);
    for (size_t k = 0; k < 4; ++k) {
        const auto& src = std::get<mom::VanillaBlock<float>>(vanilla.blocks[2 + k]);
        auto same = [&](const mom::Tensor<float>& a, const mom::Tensor<float>& b) {
            return a.numel() == b.numel() &&
                   std::memcmp(a.values().data(), b.values().data(),
                               a.numel() * sizeof(float)) == 0;
        };
        if (!same(chunk.pool.attention[k].wq, src.attn.wq) ||
            !same(chunk.pool.attention[k].wo, src.attn.wo) ||
            !same(chunk.pool.ffn[k].w_up, src.ffn.w_up) ||
            !same(chunk.pool.ffn[k].w_down, src.ffn.w_down)) {
            out.fail("module " + std::to_string(k) + " not donated bit-exactly");
        }
    }

    // All-vanilla plan: forward equivalence within 1e-6.
    mom::ChunkPlan vanilla_plan;
    for (int i = 0; i < 8; ++i) vanilla_plan.blocks.push_back({true, 0});
    auto copy = mom::decompose_vanilla(vanilla, vanilla_plan, {1, 1, false}, 7003);
    mom::Rng rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> ids(16);
        for (auto& id : ids) id = int(rng.next_below(256));
        auto la = mom::lm_forward(vanilla, ids);
        auto lb = mom::lm_forward(copy, ids);
        for (size_t i = 0; i < la.numel(); ++i)
            worst = std::max(worst, std::abs(double(la.values()[i]) - double(lb.values()[i])));
    }
    if (worst >= 1e-6) out.fail("all-vanilla forward diff " + fmt(worst));
    out.note("donated weights bit-exact, all-vanilla diff " + fmt(worst));
    return out;
}

// ---------------------------------------------------------------------- 8
Outcome criterion_training_smoke() {
    Outcome out;
    auto bytes = mom::corpus_load(MOM_CORPUS_PATH);
    const double entropy = mom::unigram_entropy(bytes);

    auto cfg = make_cfg<float>(128, 4, 512, 256);
    auto plan = mom::parse_chunk_plan("[1-1-4-1-1]");
    auto mom_cfg = mom::parse_mom_config("K2H2S");

    std::vector<double> finals;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const auto t0 = Clock::now();
        auto split = mom::split_corpus(bytes, 256, seed);
        auto model = mom::MomModel<float>::init(cfg, plan, mom_cfg, 8000 + seed);
        mom::TrainConfig tc;
        tc.total_steps = 1000;
        tc.batch_size = 1;
        tc.seq_len = 256;
        tc.seed = seed;
        tc.eval_interval = 500;
        tc.eval_batches = 8;
        auto metrics = mom::train_phase(model, split, tc, 1);
        const double final_val = *metrics.back().val_loss;
        const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        finals.push_back(final_val);
        out.note("seed " + std::to_string(seed) + ": val " + fmt(final_val) + " in " +
                 fmt(seconds) + "s");
        if (seconds >= 900.0)
            out.fail("seed " + std::to_string(seed) + " exceeded 15 minutes");
    }
    std::sort(finals.begin(), finals.end());
    if (!(finals[1] < entropy))
        out.fail("median val loss " + fmt(finals[1]) + " not below unigram entropy " +
                 fmt(entropy));
    out.note("unigram entropy " + fmt(entropy) + ", median val " + fmt(finals[1]));
    return out;
}

// ---------------------------------------------------------------------- 9
// Both arms get the same two-phase treatment (2000-step phase, then a
// 1000-step phase with a fresh schedule and optimizer state); the arms
// differ only in what phase 1 trains - a vanilla stack that is then
// decomposed, or the routed model itself.
Outcome criterion_two_phase() {
    Outcome out;
    auto bytes = mom::corpus_load(MOM_CORPUS_PATH);
    auto cfg = make_cfg<float>(48, 4, 192, 96);
    auto plan = mom::parse_chunk_plan("[1-2-1]");
    auto mom_cfg = mom::parse_mom_config("K2H2S");

    std::vector<double> two_phase, from_scratch;
    for (uint64_t seed : {11ull, 12ull, 13ull}) {
        auto split = mom::split_corpus(bytes, 96, seed);
        mom::TrainConfig phase1;
        phase1.batch_size = 1;
        phase1.seq_len = 96;
        phase1.seed = seed;
        phase1.eval_interval = 0;
        phase1.eval_batches = 1000;  // the whole held-out split
        phase1.total_steps = 2000;
        mom::TrainConfig phase2 = phase1;
        phase2.total_steps = 1000;

        // Vanilla | MoM
        auto vanilla = mom::MomModel<float>::init_vanilla(cfg, plan.source_layers(),
                                                          9100 + seed);
        mom::train_phase(vanilla, split, phase1, 1);
        auto warm = mom::decompose_vanilla(vanilla, plan, mom_cfg, 9200 + seed);
        auto ma = mom::train_phase(warm, split, phase2, 2);
        two_phase.push_back(*ma.back().val_loss);

        // MoM | MoM: same budget, same phase boundary, no decomposition.
        auto cold = mom::MomModel<float>::init(cfg, plan, mom_cfg, 9300 + seed);
        mom::train_phase(cold, split, phase1, 1);
        auto mb = mom::train_phase(cold, split, phase2, 2);
        from_scratch.push_back(*mb.back().val_loss);

        out.note("seed " + std::to_string(seed) + ": two-phase " +
                 fmt(two_phase.back()) + " vs scratch " + fmt(from_scratch.back()));
    }
    std::vector<double> paired(3);
    for (size_t i = 0; i < 3; ++i) paired[i] = two_phase[i] - from_scratch[i];
    std::sort(paired.begin(), paired.end());
    std::sort(two_phase.begin(), two_phase.end());
    std::sort(from_scratch.begin(), from_scratch.end());
    out.note("arm medians " + fmt(two_phase[1]) + " vs " + fmt(from_scratch[1]) +
             ", paired median diff " + fmt(paired[1]));
    if (!(two_phase[1] <= from_scratch[1]))
        out.fail("two-phase median " + fmt(two_phase[1]) + " > from-scratch median " +
                 fmt(from_scratch[1]));
    return out;
}

// --------------------------------------------------------------------- 10
Outcome criterion_trace_integrity() {
    Outcome out;
    auto cfg = make_cfg<float>(32, 4, 64, 64);
    auto model = mom::MomModel<float>::init(cfg, mom::parse_chunk_plan("[1-2-1-2]"),
                                            mom::parse_mom_config("K2H3S"), 1001);
    mom::Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<int> ids(48);
        for (auto& id : ids) id = int(rng.next_below(256));
        mom::AssemblyTrace trace;
        auto original = mom::lm_forward(model, ids, &trace, uint32_t(trial));

        // In-memory replay.
        mom::ReplayIndex replay(trace);
        auto replayed = mom::lm_forward(model, ids, nullptr, uint32_t(trial), &replay);
        for (size_t i = 0; i < original.numel(); ++i)
            if (original.values()[i] != replayed.values()[i]) {
                out.fail("in-memory replay diverged");
                return out;
            }

        // Through the CSV round trip.
        std::istringstream csv(mom::trace_to_csv(trace));
        auto parsed = mom::trace_from_csv(csv);
        mom::ReplayIndex replay_csv(parsed);
        auto replayed_csv = mom::lm_forward(model, ids, nullptr, uint32_t(trial), &replay_csv);
        for (size_t i = 0; i < original.numel(); ++i)
            if (original.values()[i] != replayed_csv.values()[i]) {
                out.fail("csv replay diverged");
                return out;
            }

        auto ma = mom::transition_matrix(trace, mom::RouterKind::attention);
        auto mf = mom::transition_matrix(trace, mom::RouterKind::ffn);
        for (const auto* m : {&ma, &mf})
            for (size_t i = 0; i < m->choices; ++i) {
                if (!m->supported[i]) continue;
                double sum = 0.0;
                for (size_t j = 0; j < m->choices; ++j) sum += m->at(i, j);
                if (std::abs(sum - 1.0) >= 1e-6) {
                    out.fail("transition row sums to " + fmt(sum));
                    return out;
                }
            }
    }
    out.note("5 sequences, bit-exact in-memory and csv replays");
    return out;
}

// --------------------------------------------------------------------- 11
Outcome criterion_determinism() {
    Outcome out;
    const fs::path ws = fs::path("/tmp") / ("mom_accept_" + std::to_string(::getpid()));
    fs::remove_all(ws);
    fs::create_directories(ws);

    auto write_cfg = [&](const std::string& name, const std::string& out_dir) {
        std::ofstream cfg(ws / name);
        cfg << "d = 32\nheads = 4\nd_ff = 64\nmax_seq = 64\nvocab = 256\n"
            << "plan = [1-2-1]\nmom = K2H2S\ncorpus = " << MOM_CORPUS_PATH << "\n"
            << "out_dir = " << (ws / out_dir).string() << "\nseed = 77\n"
            << "peak_lr = 0.001\nsteps_phase1 = 60\nsteps_phase2 = 30\n"
            << "batch_size = 1\nseq_len = 64\neval_interval = 30\n";
        return (ws / name).string();
    };
    auto run = [&](const std::string& args) {
        const std::string cmd =
            std::string(MOM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    const auto cfg_a = write_cfg("a.cfg", "a");
    const auto cfg_b = write_cfg("b.cfg", "b");
    bool ok = run("train --config " + cfg_a + " --phase 1") == 0;
    ok = ok && run("train --config " + cfg_a + " --phase 2 --init-from " +
                   (ws / "a/phase1.ckpt").string()) == 0;
    ok = ok && run("train --config " + cfg_b + " --phase 1") == 0;
    ok = ok && run("train --config " + cfg_b + " --phase 2 --init-from " +
                   (ws / "b/phase1.ckpt").string()) == 0;
    if (!ok) {
        out.fail("cli training run failed");
        fs::remove_all(ws);
        return out;
    }
    for (const char* f :
         {"metrics_phase1.log", "metrics_phase2.log", "phase1.ckpt", "phase2.ckpt"}) {
        if (slurp(ws / "a" / f) != slurp(ws / "b" / f))
            out.fail(std::string(f) + " differs between identical-seed runs");
        if (slurp(ws / "a" / f).empty()) out.fail(std::string(f) + " is empty");
    }
    out.note("metrics logs and checkpoints byte-identical over two runs");
    fs::remove_all(ws);
    return out;
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        std::function<Outcome()> fn;
        double budget_seconds;  // 0 = unbounded
    };
    const std::vector<Entry> entries = {
        {1, "gradient suite (f64 finite differences, rel err < 1e-6)",
         criterion_gradients, 120.0},
        {2, "vanilla reduction vs independent pre-norm stack (f32, 1e-6)",
         criterion_vanilla_reduction, 30.0},
        {3, "special-case reductions: layer-skip / sharing / moe",
         criterion_special_cases, 0.0},
        {4, "SKIP with K=1 is a bit-exact residual pass-through",
         criterion_skip_bitexact, 0.0},
        {5, "router top-k vs sort oracle, gate sums, shift invariance",
         criterion_router, 0.0},
        {6, "flops ratios vs K1H4 at gpt2-small dims, identical params",
         criterion_flops, 1.0},
        {7, "decomposition fidelity on [1-1-4-1-1]", criterion_decomposition, 0.0},
        {8, "desk-scale training beats unigram entropy (3-seed median)",
         criterion_training_smoke, 0.0},
        {9, "two-phase beats from-scratch at equal budget (3-seed median)",
         criterion_two_phase, 0.0},
        {10, "trace replay reproduces logits bit-exactly; stochastic rows",
         criterion_trace_integrity, 0.0},
        {11, "seeded runs reproduce logs and checkpoints byte-identically",
         criterion_determinism, 0.0},
    };

    int failures = 0;
    const auto suite_start = Clock::now();
    for (const auto& entry : entries) {
        const auto t0 = Clock::now();
        Outcome outcome;
        try {
            outcome = entry.fn();
        } catch (const std::exception& e) {
            outcome.fail(std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        if (entry.budget_seconds > 0.0 && seconds > entry.budget_seconds)
            outcome.fail("runtime " + fmt(seconds) + "s over budget " +
                         fmt(entry.budget_seconds) + "s");
        std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n",
                    outcome.ok ? "PASS" : "FAIL", entry.id, entry.name, seconds,
                    outcome.detail.empty() ? "" : " -- ", outcome.detail.c_str());
        std::fflush(stdout);
        if (!outcome.ok) ++failures;
    }
    const double total = std::chrono::duration<double>(Clock::now() - suite_start).count();
    std::printf("%d/%zu criteria passed in %.1fs\n", int(entries.size()) - failures,
                entries.size(), total);
    return failures == 0 ? 0 : 1;
}
