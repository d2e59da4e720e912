#pragma once

// Dynamic assembly of modules. Each assembly step runs two sub-rounds:
// an attention sub-round and an FFN sub-round, each pre-normed and added
// back to the residual stream. The policy decides how modules are picked:
//
//   vanilla            step h runs module h, gate 1
//   layer_skip         step h runs module h or SKIP, by a fixed criterion
//   parameter_sharing  step h runs module share_map[h], gate 1
//   moe                attention fixed to module h, FFN routed within the
//                      per-layer expert slice
//   mom                both sub-rounds routed over the whole pool
//
// Selected Q/K/V projections are summed per token (un-gated); gate weights
// touch only the output projection and the FFN module outputs. SKIP
// contributes nothing and its gate mass is discarded, so a K=1 SKIP
// sub-round is a pure residual pass-through, bit for bit.

#include <stdexcept>
#include <string>
#include <vector>

#include "mom/modules.hpp"
#include "mom/router.hpp"
#include "mom/trace.hpp"

namespace mom {

enum class PolicyVariant { vanilla, layer_skip, parameter_sharing, moe, mom };

enum class RouterBackend { gru, mlp };

struct AssemblyPolicy {
    PolicyVariant variant = PolicyVariant::mom;
    size_t k_attention = 1;
    size_t k_ffn = 1;
    size_t steps = 1;  // H
    std::vector<int> skip_pattern;  // layer_skip: 1 = run module h, 0 = skip
    std::vector<int> share_map;     // parameter_sharing: c_share(h) <= h
    size_t moe_experts = 0;         // moe: experts per layer

    static AssemblyPolicy make_mom(size_t k, size_t h) {
        AssemblyPolicy p;
        p.variant = PolicyVariant::mom;
        p.k_attention = p.k_ffn = k;
        p.steps = h;
        return p;
    }

    static AssemblyPolicy make_vanilla(size_t h) {
        AssemblyPolicy p;
        p.variant = PolicyVariant::vanilla;
        p.steps = h;
        return p;
    }

    static AssemblyPolicy make_layer_skip(std::vector<int> pattern) {
        AssemblyPolicy p;
        p.variant = PolicyVariant::layer_skip;
        p.steps = pattern.size();
        p.skip_pattern = std::move(pattern);
        return p;
    }

    static AssemblyPolicy make_parameter_sharing(std::vector<int> share) {
        AssemblyPolicy p;
        p.variant = PolicyVariant::parameter_sharing;
        p.steps = share.size();
        p.share_map = std::move(share);
        return p;
    }

    static AssemblyPolicy make_moe(size_t k_ffn, size_t h, size_t experts) {
        AssemblyPolicy p;
        p.variant = PolicyVariant::moe;
        p.k_ffn = k_ffn;
        p.steps = h;
        p.moe_experts = experts;
        return p;
    }

    bool routed() const {
        return variant == PolicyVariant::mom || variant == PolicyVariant::moe;
    }
};

template <typename T>
struct StepOutput {
    Tensor<T> u;
    Tensor<T> x_next;
    RoutingDecision attn;
    RoutingDecision ffn;
};

// A chunk: module pool, shared pre-norm parameters (one gain/bias pair per
// sub-round kind), and routers when the policy needs them.
template <typename T>
struct Chunk {
    AssemblyPolicy policy;
    ModulePool<T> pool;
    Tensor<T> ln_attn_gain, ln_attn_bias;
    Tensor<T> ln_ffn_gain, ln_ffn_bias;
    RouterBackend backend = RouterBackend::gru;
    GruRouter<T> gru_attn, gru_ffn;
    MlpRouter<T> mlp_attn, mlp_ffn;

    // Pool-first construction for callers that assemble pools by hand.
    static Chunk from_pool(const ModelConfig& cfg, AssemblyPolicy policy,
                           ModulePool<T> pool, Rng& rng,
                           RouterBackend backend = RouterBackend::gru) {
        Chunk c;
        c.policy = policy;
        c.backend = backend;
        c.pool = std::move(pool);
        c.init_norms_and_routers(cfg, rng);
        c.validate(cfg);
        return c;
    }

    void init_norms_and_routers(const ModelConfig& cfg, Rng& rng) {
        ln_attn_gain = Tensor<T>::filled({cfg.d}, T(1), true);
        ln_attn_bias = Tensor<T>::zeros({cfg.d}, true);
        ln_ffn_gain = Tensor<T>::filled({cfg.d}, T(1), true);
        ln_ffn_bias = Tensor<T>::zeros({cfg.d}, true);
        init_routers(cfg, rng);
    }

    // Routers are (re)drawn from the given stream; used by two-phase
    // training to refresh routers while keeping module weights.
    void init_routers(const ModelConfig& cfg, Rng& rng) {
        if (!policy.routed()) return;
        if (policy.variant == PolicyVariant::moe) {
            if (backend == RouterBackend::gru)
                gru_ffn = GruRouter<T>::init(RouterKind::ffn, cfg.d, policy.moe_experts,
                                             false, rng);
            else
                mlp_ffn = MlpRouter<T>::init(RouterKind::ffn, cfg.d, policy.moe_experts,
                                             false, rng);
            return;
        }
        if (backend == RouterBackend::gru) {
            gru_attn = GruRouter<T>::init(RouterKind::attention, cfg.d,
                                          pool.n_attention(), pool.include_skip, rng);
            gru_ffn = GruRouter<T>::init(RouterKind::ffn, cfg.d, pool.n_ffn(),
                                         pool.include_skip, rng);
        } else {
            mlp_attn = MlpRouter<T>::init(RouterKind::attention, cfg.d,
                                          pool.n_attention(), pool.include_skip, rng);
            mlp_ffn = MlpRouter<T>::init(RouterKind::ffn, cfg.d, pool.n_ffn(),
                                         pool.include_skip, rng);
        }
    }

    void validate(const ModelConfig& cfg) const {
        cfg.validate();
        const size_t na = pool.n_attention(), nf = pool.n_ffn();
        switch (policy.variant) {
            case PolicyVariant::vanilla:
                if (policy.k_attention != 1 || policy.k_ffn != 1)
                    throw std::invalid_argument("vanilla policy requires K=1");
                if (policy.steps > na || policy.steps > nf)
                    throw std::invalid_argument("vanilla policy: steps exceed pool size");
                break;
            case PolicyVariant::layer_skip:
                if (policy.skip_pattern.size() != policy.steps)
                    throw std::invalid_argument("layer_skip: pattern length != steps");
                if (policy.steps > na || policy.steps > nf)
                    throw std::invalid_argument("layer_skip: steps exceed pool size");
                if (!pool.include_skip)
                    throw std::invalid_argument("layer_skip: pool must include SKIP");
                break;
            case PolicyVariant::parameter_sharing:
                if (policy.share_map.size() != policy.steps)
                    throw std::invalid_argument("parameter_sharing: map length != steps");
                for (size_t h = 0; h < policy.steps; ++h) {
                    const int j = policy.share_map[h];
                    if (j < 0 || static_cast<size_t>(j) > h)
                        throw std::invalid_argument(
                            "parameter_sharing: c_share(h) must be in [0, h]");
                    if (static_cast<size_t>(j) >= na || static_cast<size_t>(j) >= nf)
                        throw std::invalid_argument("parameter_sharing: index beyond pool");
                }
                break;
            case PolicyVariant::moe:
                if (policy.moe_experts < 1)
                    throw std::invalid_argument("moe: need at least one expert per layer");
                if (nf != policy.steps * policy.moe_experts)
                    throw std::invalid_argument("moe: ffn pool must hold steps*experts modules");
                if (policy.steps > na)
                    throw std::invalid_argument("moe: steps exceed attention pool");
                if (policy.k_ffn > policy.moe_experts)
                    throw std::invalid_argument("moe: K exceeds experts per layer");
                if (pool.include_skip)
                    throw std::invalid_argument("moe: expert pools carry no SKIP");
                break;
            case PolicyVariant::mom:
                if (policy.k_attention < 1 || policy.k_attention > pool.choices(true) ||
                    policy.k_ffn < 1 || policy.k_ffn > pool.choices(false))
                    throw std::invalid_argument("mom: K outside pool choice count");
                break;
        }
    }

    std::vector<Tensor<T>*> params() {
        std::vector<Tensor<T>*> out = pool.params();
        out.push_back(&ln_attn_gain);
        out.push_back(&ln_attn_bias);
        out.push_back(&ln_ffn_gain);
        out.push_back(&ln_ffn_bias);
        for (auto* t : router_params()) out.push_back(t);
        return out;
    }

    std::vector<Tensor<T>*> router_params() {
        std::vector<Tensor<T>*> out;
        if (!policy.routed()) return out;
        if (policy.variant == PolicyVariant::moe) {
            auto rp = backend == RouterBackend::gru ? gru_ffn.params() : mlp_ffn.params();
            return rp;
        }
        auto ra = backend == RouterBackend::gru ? gru_attn.params() : mlp_attn.params();
        auto rf = backend == RouterBackend::gru ? gru_ffn.params() : mlp_ffn.params();
        out.insert(out.end(), ra.begin(), ra.end());
        out.insert(out.end(), rf.begin(), rf.end());
        return out;
    }
};

// KaHbS-style mom policy with explicit skip choice.
template <typename T>
Chunk<T> make_mom_chunk(const ModelConfig& cfg, size_t pool_size, size_t k, size_t h,
                        bool with_skip, Rng& rng,
                        RouterBackend backend = RouterBackend::gru) {
    AssemblyPolicy policy = AssemblyPolicy::make_mom(k, h);
    auto pool = ModulePool<T>::init(cfg, pool_size, pool_size, with_skip, rng);
    return Chunk<T>::from_pool(cfg, policy, std::move(pool), rng, backend);
}

template <typename T>
Chunk<T> make_vanilla_chunk(const ModelConfig& cfg, size_t n, Rng& rng) {
    auto pool = ModulePool<T>::init(cfg, n, n, false, rng);
    return Chunk<T>::from_pool(cfg, AssemblyPolicy::make_vanilla(n), std::move(pool), rng);
}

template <typename T>
Chunk<T> make_layer_skip_chunk(const ModelConfig& cfg, std::vector<int> pattern, Rng& rng) {
    const size_t n = pattern.size();
    auto pool = ModulePool<T>::init(cfg, n, n, true, rng);
    return Chunk<T>::from_pool(cfg, AssemblyPolicy::make_layer_skip(std::move(pattern)),
                               std::move(pool), rng);
}

template <typename T>
Chunk<T> make_sharing_chunk(const ModelConfig& cfg, std::vector<int> share_map,
                            size_t pool_size, Rng& rng) {
    auto pool = ModulePool<T>::init(cfg, pool_size, pool_size, false, rng);
    return Chunk<T>::from_pool(cfg, AssemblyPolicy::make_parameter_sharing(std::move(share_map)),
                               std::move(pool), rng);
}

template <typename T>
Chunk<T> make_moe_chunk(const ModelConfig& cfg, size_t experts, size_t k_ffn, size_t h,
                        Rng& rng, RouterBackend backend = RouterBackend::gru) {
    auto pool = ModulePool<T>::init(cfg, h, h * experts, false, rng);
    return Chunk<T>::from_pool(cfg, AssemblyPolicy::make_moe(k_ffn, h, experts),
                               std::move(pool), rng, backend);
}

namespace detail {

// Constant all-ones gate column and forced single selections for the
// deterministic policies.
template <typename T>
RoutingDecision forced_decision(RouterKind kind, size_t step, size_t tokens, int index,
                                size_t num_choices, int skip_index, Tensor<T>& gates_out) {
    RoutingDecision d;
    d.step = step;
    d.kind = kind;
    d.num_choices = num_choices;
    d.skip_index = skip_index;
    d.indices.assign(tokens, {index});
    d.gates.assign(tokens, {1.0});
    gates_out = Tensor<T>::filled({tokens, 1}, T(1));
    return d;
}

// Gate tensor for replayed decisions: constants with the recorded bits.
template <typename T>
Tensor<T> replay_gates(const RoutingDecision& d) {
    const size_t tokens = d.indices.size(), k = d.indices.empty() ? 0 : d.indices[0].size();
    std::vector<T> g(tokens * k);
    for (size_t i = 0; i < tokens; ++i)
        for (size_t j = 0; j < k; ++j) g[i * k + j] = static_cast<T>(d.gates[i][j]);
    return Tensor<T>::from_data({tokens, k}, std::move(g));
}

}  // namespace detail

// F^A: per token, sum the selected modules' Q/K/V affine maps, run causal
// attention once, then apply the gate-weighted output projections. Returns
// the zero tensor for tokens whose surviving selection is empty.
template <typename T>
Tensor<T> assemble_attention(const ModulePool<T>& pool, const ModelConfig& cfg,
                             const RoutingDecision& decision, const Tensor<T>& gates,
                             const Tensor<T>& x_norm, const Tensor<T>& mask) {
    detail::require_rank2(x_norm, "assemble_attention");
    const size_t len = x_norm.rows(), d = cfg.d, dh = cfg.d_head();
    const size_t n = pool.n_attention();
    const int skip = decision.skip_index;
    if (decision.indices.size() != len)
        throw DimensionError("assemble_attention: decision covers " +
                             std::to_string(decision.indices.size()) + " tokens, input has " +
                             std::to_string(len));

    // Selector rows per module; SKIP entries simply drop out. Selections are
    // a set: a token repeated for one module contributes once, with its gate
    // mass merged by the scatter below.
    std::vector<std::vector<int>> rows(n);
    for (size_t t = 0; t < len; ++t)
        for (const int idx : decision.indices[t]) {
            if (idx == skip) continue;
            if (idx < 0 || static_cast<size_t>(idx) >= n)
                throw std::out_of_range("assemble_attention: module index " +
                                        std::to_string(idx) + " outside pool of " +
                                        std::to_string(n));
            auto& list = rows[static_cast<size_t>(idx)];
            if (list.empty() || list.back() != static_cast<int>(t))
                list.push_back(static_cast<int>(t));
        }

    bool any = false;
    for (const auto& r : rows) any = any || !r.empty();
    if (!any) return Tensor<T>::zeros({len, d});

    // Gate map over all choices; the SKIP column is never read.
    auto gate_map = scatter_cols(gates, decision.indices, decision.num_choices);

    auto q = Tensor<T>::zeros({len, d});
    auto k = Tensor<T>::zeros({len, d});
    auto v = Tensor<T>::zeros({len, d});
    for (size_t m = 0; m < n; ++m) {
        if (rows[m].empty()) continue;
        const auto& mod = pool.attention[m];
        auto xm = gather_rows(x_norm, rows[m]);
        q = add(q, scatter_rows(add_bias(matmul(xm, mod.wq), mod.bq), rows[m], len));
        k = add(k, scatter_rows(add_bias(matmul(xm, mod.wk), mod.bk), rows[m], len));
        v = add(v, scatter_rows(add_bias(matmul(xm, mod.wv), mod.bv), rows[m], len));
    }

    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(double(dh)));
    std::vector<Tensor<T>> heads;
    heads.reserve(cfg.heads);
    for (size_t z = 0; z < cfg.heads; ++z) {
        auto qz = slice_lastdim(q, z * dh, dh);
        auto kz = slice_lastdim(k, z * dh, dh);
        auto vz = slice_lastdim(v, z * dh, dh);
        auto probs = softmax_lastdim(scale(matmul_nt(qz, kz), inv_sqrt), &mask);
        heads.push_back(matmul(probs, vz));
    }
    auto mixed = concat_lastdim(heads);

    auto out = Tensor<T>::zeros({len, d});
    for (size_t m = 0; m < n; ++m) {
        if (rows[m].empty()) continue;
        const auto& mod = pool.attention[m];
        auto am = gather_rows(mixed, rows[m]);
        auto om = add_bias(matmul(am, mod.wo), mod.bo);
        auto gm = gather_rows(slice_lastdim(gate_map, m, 1), rows[m]);
        out = add(out, scatter_rows(rowwise_scale(om, gm), rows[m], len));
    }
    return out;
}

// F^F: gate-weighted sum of the selected FFN modules' outputs.
template <typename T>
Tensor<T> assemble_ffn(const ModulePool<T>& pool, const RoutingDecision& decision,
                       const Tensor<T>& gates, const Tensor<T>& u_norm) {
    detail::require_rank2(u_norm, "assemble_ffn");
    const size_t len = u_norm.rows(), d = u_norm.cols();
    const size_t n = pool.n_ffn();
    const int skip = decision.skip_index;
    if (decision.indices.size() != len)
        throw DimensionError("assemble_ffn: decision covers " +
                             std::to_string(decision.indices.size()) + " tokens, input has " +
                             std::to_string(len));

    std::vector<std::vector<int>> rows(n);
    for (size_t t = 0; t < len; ++t)
        for (const int idx : decision.indices[t]) {
            if (idx == skip) continue;
            if (idx < 0 || static_cast<size_t>(idx) >= n)
                throw std::out_of_range("assemble_ffn: module index " + std::to_string(idx) +
                                        " outside pool of " + std::to_string(n));
            auto& list = rows[static_cast<size_t>(idx)];
            if (list.empty() || list.back() != static_cast<int>(t))
                list.push_back(static_cast<int>(t));
        }

    bool any = false;
    for (const auto& r : rows) any = any || !r.empty();
    if (!any) return Tensor<T>::zeros({len, d});

    auto gate_map = scatter_cols(gates, decision.indices, decision.num_choices);

    auto out = Tensor<T>::zeros({len, d});
    for (size_t m = 0; m < n; ++m) {
        if (rows[m].empty()) continue;
        auto um = gather_rows(u_norm, rows[m]);
        auto ym = ffn_forward(pool.ffn[m], um);
        auto gm = gather_rows(slice_lastdim(gate_map, m, 1), rows[m]);
        out = add(out, scatter_rows(rowwise_scale(ym, gm), rows[m], len));
    }
    return out;
}

// Per-chunk recurrent state, one row per token.
template <typename T>
struct ChunkState {
    Tensor<T> s_attn;
    Tensor<T> s_ffn;

    static ChunkState zeros(size_t tokens, size_t d) {
        return {Tensor<T>::zeros({tokens, d}), Tensor<T>::zeros({tokens, d})};
    }
};

namespace detail {

inline bool all_skip(const RoutingDecision& d) {
    if (d.skip_index < 0) return false;
    for (const auto& row : d.indices)
        for (const int idx : row)
            if (idx != d.skip_index) return false;
    return true;
}

// Produce the decision + differentiable gates for one sub-round.
template <typename T>
std::pair<RoutingDecision, Tensor<T>> decide(const Chunk<T>& chunk, RouterKind kind,
                                             size_t step, const Tensor<T>& router_input,
                                             ChunkState<T>& state,
                                             const RoutingDecision* forced) {
    const bool is_attn = kind == RouterKind::attention;
    const size_t tokens = router_input.rows();
    const auto& policy = chunk.policy;
    const size_t pool_n = is_attn ? chunk.pool.n_attention() : chunk.pool.n_ffn();
    const size_t num_choices = pool_n + (chunk.pool.include_skip ? 1 : 0);
    const int skip_index = chunk.pool.skip_index(is_attn);

    if (forced) {
        RoutingDecision d = *forced;
        d.kind = kind;
        d.step = step;
        d.num_choices = num_choices;
        d.skip_index = skip_index;
        return {d, replay_gates<T>(d)};
    }

    Tensor<T> gates;
    switch (policy.variant) {
        case PolicyVariant::vanilla: {
            auto d = forced_decision<T>(kind, step, tokens, static_cast<int>(step),
                                        num_choices, skip_index, gates);
            return {d, gates};
        }
        case PolicyVariant::layer_skip: {
            const int choice = policy.skip_pattern[step] ? static_cast<int>(step)
                                                         : skip_index;
            auto d = forced_decision<T>(kind, step, tokens, choice, num_choices,
                                        skip_index, gates);
            return {d, gates};
        }
        case PolicyVariant::parameter_sharing: {
            auto d = forced_decision<T>(kind, step, tokens, policy.share_map[step],
                                        num_choices, skip_index, gates);
            return {d, gates};
        }
        case PolicyVariant::moe: {
            if (is_attn) {
                auto d = forced_decision<T>(kind, step, tokens, static_cast<int>(step),
                                            num_choices, skip_index, gates);
                return {d, gates};
            }
            BatchRoute<T> br = chunk.backend == RouterBackend::gru
                                   ? route_batch(chunk.gru_ffn, router_input, state.s_ffn,
                                                 policy.k_ffn, step)
                                   : route_batch(chunk.mlp_ffn, router_input, state.s_ffn,
                                                 policy.k_ffn, step);
            state.s_ffn = br.s_next;
            // Shift slice-local expert ids to global pool indices.
            const int base = static_cast<int>(step * policy.moe_experts);
            for (auto& row : br.decision.indices)
                for (auto& idx : row) idx += base;
            br.decision.num_choices = num_choices;
            br.decision.skip_index = -1;
            return {br.decision, br.gates};
        }
        case PolicyVariant::mom: {
            const size_t k = is_attn ? policy.k_attention : policy.k_ffn;
            BatchRoute<T> br;
            if (chunk.backend == RouterBackend::gru) {
                const auto& router = is_attn ? chunk.gru_attn : chunk.gru_ffn;
                auto& s = is_attn ? state.s_attn : state.s_ffn;
                br = route_batch(router, router_input, s, k, step);
                s = br.s_next;
            } else {
                const auto& router = is_attn ? chunk.mlp_attn : chunk.mlp_ffn;
                auto& s = is_attn ? state.s_attn : state.s_ffn;
                br = route_batch(router, router_input, s, k, step);
                s = br.s_next;
            }
            return {br.decision, br.gates};
        }
    }
    throw std::logic_error("unreachable policy variant");
}

}  // namespace detail

// One assembly step: u = F_A(norm(x)) + x, x' = F_F(norm(u)) + u.
// When a whole sub-round selects SKIP the input tensor is returned
// unchanged (identity buffer), keeping the residual pass-through exact.
template <typename T>
StepOutput<T> forward_step(const Chunk<T>& chunk, const ModelConfig& cfg, size_t step,
                           const Tensor<T>& x, const Tensor<T>& mask, ChunkState<T>& state,
                           const RoutingDecision* forced_attn = nullptr,
                           const RoutingDecision* forced_ffn = nullptr) {
    if (step >= chunk.policy.steps)
        throw std::invalid_argument("forward_step: step " + std::to_string(step) +
                                    " beyond H=" + std::to_string(chunk.policy.steps));
    StepOutput<T> out;

    auto [attn_decision, attn_gates] =
        detail::decide(chunk, RouterKind::attention, step, x, state, forced_attn);
    out.attn = attn_decision;
    if (detail::all_skip(attn_decision)) {
        out.u = x;
    } else {
        auto x_norm = layernorm(x, chunk.ln_attn_gain, chunk.ln_attn_bias,
                                static_cast<T>(cfg.eps));
        auto fa = assemble_attention(chunk.pool, cfg, attn_decision, attn_gates, x_norm, mask);
        out.u = add(fa, x);
    }

    auto [ffn_decision, ffn_gates] =
        detail::decide(chunk, RouterKind::ffn, step, out.u, state, forced_ffn);
    out.ffn = ffn_decision;
    if (detail::all_skip(ffn_decision)) {
        out.x_next = out.u;
    } else {
        auto u_norm = layernorm(out.u, chunk.ln_ffn_gain, chunk.ln_ffn_bias,
                                static_cast<T>(cfg.eps));
        auto ff = assemble_ffn(chunk.pool, ffn_decision, ffn_gates, u_norm);
        out.x_next = add(ff, out.u);
    }
    return out;
}

// H sequential steps with fresh router state; records one decision pair per
// step into the trace when given one.
template <typename T>
Tensor<T> run_chunk(const Chunk<T>& chunk, const ModelConfig& cfg, const Tensor<T>& x_in,
                    const Tensor<T>& mask, AssemblyTrace* trace = nullptr,
                    uint32_t sequence = 0, uint32_t chunk_id = 0,
                    const ReplayIndex* replay = nullptr) {
    Tensor<T> x = x_in;
    auto state = ChunkState<T>::zeros(x_in.rows(), cfg.d);
    for (size_t h = 0; h < chunk.policy.steps; ++h) {
        RoutingDecision forced_attn, forced_ffn;
        const RoutingDecision* fa = nullptr;
        const RoutingDecision* ff = nullptr;
        if (replay) {
            forced_attn = replay->decision(sequence, chunk_id, static_cast<uint32_t>(h),
                                           RouterKind::attention, x.rows());
            forced_ffn = replay->decision(sequence, chunk_id, static_cast<uint32_t>(h),
                                          RouterKind::ffn, x.rows());
            fa = &forced_attn;
            ff = &forced_ffn;
        }
        auto step_out = forward_step(chunk, cfg, h, x, mask, state, fa, ff);
        if (trace) {
            trace->append(sequence, chunk_id, step_out.attn);
            trace->append(sequence, chunk_id, step_out.ffn);
            trace->attn_choices = std::max(trace->attn_choices, step_out.attn.num_choices);
            trace->ffn_choices = std::max(trace->ffn_choices, step_out.ffn.num_choices);
            trace->attn_has_skip = trace->attn_has_skip || step_out.attn.skip_index >= 0;
            trace->ffn_has_skip = trace->ffn_has_skip || step_out.ffn.skip_index >= 0;
        }
        x = step_out.x_next;
    }
    return x;
}

}  // namespace mom
