#pragma once

// Analytical cost model: exact trainable-parameter counts, forward matmul
// FLOPs (multiply-accumulate = 2), and a sequential-execution activation
// memory model.
//
// FLOPs conventions, chosen to mirror profiler-measured transformer tables:
//   - Q/K/V projections and FFN matmuls are charged per executed module
//     (token-level routing evaluates each selected module's projections).
//   - Attention score/value terms and the gate-weighted output projection
//     are charged once per attention sub-round.
//   - Router logit projections are charged per routed sub-round. The GRU
//     recurrence cost is reported in its own field, outside the headline
//     forward_flops, matching what external FLOPs profilers see.
//   - Elementwise work (softmax, layernorm, gelu, biases) is not counted.

#include <string>
#include <vector>

#include "mom/model.hpp"

namespace mom {

enum class SkipAssumption { no_skip, all_skip, expected };

struct BlockCost {
    std::string label;
    double flops = 0.0;
    size_t params = 0;
};

struct CostReport {
    std::string config;
    size_t param_count = 0;
    double forward_flops = 0.0;  // per sequence, headline
    double gru_flops = 0.0;      // router recurrence, reported separately
    size_t weight_bytes = 0;
    size_t activation_bytes_peak = 0;
    std::vector<BlockCost> blocks;
};

struct ProfileDims {
    ModelConfig cfg;
    std::string plan_str;

    static ProfileDims preset(const std::string& name) {
        ProfileDims p;
        if (name == "gpt2-small") {
            p.cfg.d = 768;
            p.cfg.heads = 12;
            p.cfg.d_ff = 3072;
            p.cfg.max_seq = 1024;
            p.cfg.vocab = 50257;
            p.plan_str = "[1-1-4-1-4-1]";
        } else if (name == "gpt2-medium") {
            p.cfg.d = 1024;
            p.cfg.heads = 16;
            p.cfg.d_ff = 4096;
            p.cfg.max_seq = 1024;
            p.cfg.vocab = 50257;
            p.plan_str = "[1-1-1-4-1-4-1-4-1-4-1-1]";
        } else if (name == "gpt2-large") {
            p.cfg.d = 1280;
            p.cfg.heads = 20;
            p.cfg.d_ff = 5120;
            p.cfg.max_seq = 1024;
            p.cfg.vocab = 50257;
            p.plan_str = "[1-4-1-4-1-4-1-4-1-4-1-4-1-4-1]";
        } else {
            throw ConfigError("unknown dims preset '" + name +
                              "' (expected gpt2-small, gpt2-medium, gpt2-large)");
        }
        return p;
    }
};

namespace cost {

inline size_t attn_module_params(const ModelConfig& c) { return 4 * c.d * c.d + 4 * c.d; }
inline size_t ffn_module_params(const ModelConfig& c) {
    return 2 * c.d * c.d_ff + c.d_ff + c.d;
}
inline size_t gru_router_params(const ModelConfig& c, size_t pool) {
    // Cell (3 gates x input/state matrices + bias) plus the projection,
    // which always carries the SKIP row.
    return 6 * c.d * c.d + 3 * c.d + (pool + 1) * c.d;
}

inline double qkv_flops(const ModelConfig& c, size_t len) {
    return 6.0 * double(len) * double(c.d) * double(c.d);
}
inline double attn_scores_flops(const ModelConfig& c, size_t len) {
    return 4.0 * double(len) * double(len) * double(c.d);
}
inline double out_proj_flops(const ModelConfig& c, size_t len) {
    return 2.0 * double(len) * double(c.d) * double(c.d);
}
inline double ffn_flops(const ModelConfig& c, size_t len) {
    return 4.0 * double(len) * double(c.d) * double(c.d_ff);
}
inline double router_proj_flops(const ModelConfig& c, size_t len, size_t pool) {
    return 2.0 * double(len) * double(pool + 1) * double(c.d);
}
inline double gru_cell_flops(const ModelConfig& c, size_t len) {
    return 12.0 * double(len) * double(c.d) * double(c.d);
}

}  // namespace cost

// Exact trainable-parameter count for a plan; independent of K/H because
// pools and router shapes are fixed by the plan alone.
inline size_t estimate_params(const ModelConfig& cfg, const ChunkPlan& plan) {
    size_t total = cfg.vocab * cfg.d + cfg.max_seq * cfg.d;  // embeddings
    for (const auto& b : plan.blocks) {
        if (b.is_vanilla) {
            total += cost::attn_module_params(cfg) + cost::ffn_module_params(cfg) + 4 * cfg.d;
        } else {
            total += b.pool * (cost::attn_module_params(cfg) + cost::ffn_module_params(cfg));
            total += 4 * cfg.d;  // shared pre-norm pairs
            total += 2 * cost::gru_router_params(cfg, b.pool);
        }
    }
    total += 2 * cfg.d;  // final norm
    return total;
}

// Fractional executed modules per sub-round under a skip assumption.
inline double executed_modules(const MomConfig& mom, SkipAssumption assume,
                               double skip_rate) {
    const double k = static_cast<double>(mom.k);
    if (!mom.skip) return k;
    switch (assume) {
        case SkipAssumption::no_skip:
            return k;
        case SkipAssumption::all_skip:
            return k - 1.0;  // one selection slot goes to SKIP
        case SkipAssumption::expected:
            return k - skip_rate;
    }
    return k;
}

// Sequential-execution activation model: the residual stream and router
// states of every chunk step stay live (2 tensors + 2 states, L x d each),
// completed blocks keep one pair, plus the largest transient working set
// and the logits buffer.
inline size_t estimate_activation_bytes(const ModelConfig& cfg, const ChunkPlan& plan,
                                        const MomConfig& mom, size_t seq_len,
                                        size_t dtype_bytes = 4) {
    const size_t ld = seq_len * cfg.d;
    size_t scalars = ld;  // embedding output
    for (const auto& b : plan.blocks) {
        if (b.is_vanilla)
            scalars += 2 * ld;  // u and x_next
        else
            scalars += mom.h * 4 * ld;  // (x, u) + two router states per step
    }
    scalars += ld;                    // final norm output
    scalars += seq_len * cfg.vocab;   // logits
    const size_t attn_transient = 4 * ld + 2 * seq_len * seq_len;
    const size_t ffn_transient = seq_len * cfg.d_ff + ld;
    scalars += std::max(attn_transient, ffn_transient);
    return dtype_bytes * scalars;
}

inline CostReport estimate_flops(const ModelConfig& cfg, const ChunkPlan& plan,
                                 const MomConfig& mom, size_t seq_len,
                                 SkipAssumption assume = SkipAssumption::no_skip,
                                 double skip_rate = 0.0) {
    cfg.validate();
    if (seq_len < 1) throw std::invalid_argument("estimate_flops: seq_len must be >= 1");
    if (seq_len > cfg.max_seq)
        throw std::invalid_argument("estimate_flops: seq_len exceeds max_seq");

    CostReport report;
    report.config = mom.render();
    report.param_count = estimate_params(cfg, plan);
    report.weight_bytes = 4 * report.param_count;  // float32 storage

    const double kprime = executed_modules(mom, assume, skip_rate);
    // With K=1 and SKIP taken, the whole sub-round vanishes.
    const double subround_on = kprime > 0.0 ? 1.0 : 0.0;

    size_t chunk_ordinal = 0;
    for (size_t i = 0; i < plan.blocks.size(); ++i) {
        const auto& b = plan.blocks[i];
        BlockCost bc;
        if (b.is_vanilla) {
            bc.label = "vanilla" + std::to_string(i);
            bc.flops = cost::qkv_flops(cfg, seq_len) + cost::attn_scores_flops(cfg, seq_len) +
                       cost::out_proj_flops(cfg, seq_len) + cost::ffn_flops(cfg, seq_len);
            bc.params =
                cost::attn_module_params(cfg) + cost::ffn_module_params(cfg) + 4 * cfg.d;
        } else {
            bc.label = "chunk" + std::to_string(chunk_ordinal++) + "(N=" +
                       std::to_string(b.pool) + "," + mom.render() + ")";
            const double attn_sub = kprime * cost::qkv_flops(cfg, seq_len) +
                                    subround_on * (cost::attn_scores_flops(cfg, seq_len) +
                                                   cost::out_proj_flops(cfg, seq_len));
            const double ffn_sub = kprime * cost::ffn_flops(cfg, seq_len);
            const double routers = 2.0 * cost::router_proj_flops(cfg, seq_len, b.pool);
            bc.flops = static_cast<double>(mom.h) * (attn_sub + ffn_sub + routers);
            report.gru_flops +=
                static_cast<double>(mom.h) * 2.0 * cost::gru_cell_flops(cfg, seq_len);
            bc.params = b.pool * (cost::attn_module_params(cfg) + cost::ffn_module_params(cfg)) +
                        4 * cfg.d + 2 * cost::gru_router_params(cfg, b.pool);
        }
        report.forward_flops += bc.flops;
        report.blocks.push_back(std::move(bc));
    }

    BlockCost head;
    head.label = "lm_head";
    head.flops = 2.0 * double(seq_len) * double(cfg.d) * double(cfg.vocab);
    head.params = 0;  // tied to the token embedding
    report.forward_flops += head.flops;
    report.blocks.push_back(std::move(head));

    report.activation_bytes_peak = estimate_activation_bytes(cfg, plan, mom, seq_len);
    return report;
}

}  // namespace mom
