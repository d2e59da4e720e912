#pragma once

// End-to-end language model: embeddings, a mixed plan of fixed transformer
// blocks and routed chunks, final norm, and a head tied to the token
// embedding. Configurations use the KaHb notation with an optional S suffix
// for SKIP availability; plans use the bracketed chunk layout strings.

#include <cctype>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mom/assembly.hpp"

namespace mom {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MomConfig {
    size_t k = 1;
    size_t h = 1;
    bool skip = false;

    bool operator==(const MomConfig&) const = default;

    std::string render() const {
        return "K" + std::to_string(k) + "H" + std::to_string(h) + (skip ? "S" : "");
    }
};

// Exact grammar: K<digits>H<digits>[S], no whitespace, K,H >= 1.
inline MomConfig parse_mom_config(const std::string& s) {
    size_t pos = 0;
    auto eat_number = [&](char prefix) -> size_t {
        if (pos >= s.size() || s[pos] != prefix)
            throw ConfigError("mom config '" + s + "': expected '" + prefix +
                              "' at position " + std::to_string(pos));
        ++pos;
        const size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos == start)
            throw ConfigError("mom config '" + s + "': expected digits at position " +
                              std::to_string(start));
        return static_cast<size_t>(std::stoull(s.substr(start, pos - start)));
    };
    MomConfig c;
    c.k = eat_number('K');
    c.h = eat_number('H');
    if (pos < s.size() && s[pos] == 'S') {
        c.skip = true;
        ++pos;
    }
    if (pos != s.size())
        throw ConfigError("mom config '" + s + "': trailing characters at position " +
                          std::to_string(pos));
    if (c.k == 0 || c.h == 0)
        throw ConfigError("mom config '" + s + "': K and H must be at least 1");
    return c;
}

struct PlanBlock {
    bool is_vanilla = true;
    size_t pool = 0;  // modules per type for chunks
};

struct ChunkPlan {
    std::vector<PlanBlock> blocks;

    size_t source_layers() const {
        size_t n = 0;
        for (const auto& b : blocks) n += b.is_vanilla ? 1 : b.pool;
        return n;
    }

    size_t chunk_count() const {
        size_t n = 0;
        for (const auto& b : blocks) n += b.is_vanilla ? 0 : 1;
        return n;
    }

    std::string render() const {
        std::string out = "[";
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (i) out += "-";
            out += std::to_string(blocks[i].is_vanilla ? 1 : blocks[i].pool);
        }
        return out + "]";
    }
};

// Grammar: [t(-t)*] with decimal t; "1" is a fixed block, larger values are
// chunks of that pool size.
inline ChunkPlan parse_chunk_plan(const std::string& s) {
    if (s.size() < 3 || s.front() != '[' || s.back() != ']')
        throw ConfigError("chunk plan '" + s + "': expected [t-t-...-t]");
    ChunkPlan plan;
    size_t pos = 1;
    while (pos < s.size() - 1) {
        const size_t start = pos;
        while (pos < s.size() - 1 && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos == start)
            throw ConfigError("chunk plan '" + s + "': expected digits at position " +
                              std::to_string(start));
        const size_t n = static_cast<size_t>(std::stoull(s.substr(start, pos - start)));
        if (n == 0)
            throw ConfigError("chunk plan '" + s + "': zero-sized entry at position " +
                              std::to_string(start));
        plan.blocks.push_back(n == 1 ? PlanBlock{true, 0} : PlanBlock{false, n});
        if (pos < s.size() - 1) {
            if (s[pos] != '-')
                throw ConfigError("chunk plan '" + s + "': expected '-' at position " +
                                  std::to_string(pos));
            ++pos;
            if (pos == s.size() - 1)
                throw ConfigError("chunk plan '" + s + "': dangling separator");
        }
    }
    if (plan.blocks.empty()) throw ConfigError("chunk plan '" + s + "': empty plan");
    return plan;
}

// One fixed transformer layer with its own norms, outside any chunk.
template <typename T>
struct VanillaBlock {
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    MhaModule<T> attn;
    FfnModule<T> ffn;

    static VanillaBlock init(const ModelConfig& cfg, Rng& rng) {
        VanillaBlock b;
        b.ln1_gain = Tensor<T>::filled({cfg.d}, T(1), true);
        b.ln1_bias = Tensor<T>::zeros({cfg.d}, true);
        b.ln2_gain = Tensor<T>::filled({cfg.d}, T(1), true);
        b.ln2_bias = Tensor<T>::zeros({cfg.d}, true);
        b.attn = MhaModule<T>::init(cfg, rng);
        b.ffn = FfnModule<T>::init(cfg, rng);
        return b;
    }

    std::vector<Tensor<T>*> params() {
        std::vector<Tensor<T>*> out = {&ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias};
        for (auto* t : attn.params()) out.push_back(t);
        for (auto* t : ffn.params()) out.push_back(t);
        return out;
    }

    Tensor<T> forward(const ModelConfig& cfg, const Tensor<T>& x,
                      const Tensor<T>& mask) const {
        auto attn_out =
            mha_forward(attn, cfg, layernorm(x, ln1_gain, ln1_bias, static_cast<T>(cfg.eps)),
                        mask);
        auto u = add(attn_out, x);
        auto ffn_out =
            ffn_forward(ffn, layernorm(u, ln2_gain, ln2_bias, static_cast<T>(cfg.eps)));
        return add(ffn_out, u);
    }
};

template <typename T>
using NamedParam = std::pair<std::string, Tensor<T>*>;

template <typename T>
struct MomModel {
    ModelConfig cfg;
    ChunkPlan plan;
    MomConfig mom;
    RouterBackend backend = RouterBackend::gru;
    Tensor<T> tok_emb;  // [V x d], tied with the LM head
    Tensor<T> pos_emb;  // [max_seq x d]
    std::vector<std::variant<VanillaBlock<T>, Chunk<T>>> blocks;
    Tensor<T> final_gain, final_bias;

    static MomModel init(const ModelConfig& cfg, const ChunkPlan& plan,
                         const MomConfig& mom, uint64_t seed,
                         RouterBackend backend = RouterBackend::gru) {
        cfg.validate();
        MomModel m;
        m.cfg = cfg;
        m.plan = plan;
        m.mom = mom;
        m.backend = backend;
        Rng rng(seed);
        m.tok_emb = Tensor<T>::normal(rng, {cfg.vocab, cfg.d}, T(0), T(0.02), true);
        m.pos_emb = Tensor<T>::normal(rng, {cfg.max_seq, cfg.d}, T(0), T(0.01), true);
        for (const auto& pb : plan.blocks) {
            if (pb.is_vanilla) {
                m.blocks.emplace_back(VanillaBlock<T>::init(cfg, rng));
            } else {
                m.blocks.emplace_back(
                    make_mom_chunk<T>(cfg, pb.pool, mom.k, mom.h, mom.skip, rng, backend));
            }
        }
        m.final_gain = Tensor<T>::filled({cfg.d}, T(1), true);
        m.final_bias = Tensor<T>::zeros({cfg.d}, true);
        return m;
    }

    // All-vanilla model of `layers` fixed blocks; phase-1 shape.
    static MomModel init_vanilla(const ModelConfig& cfg, size_t layers, uint64_t seed) {
        ChunkPlan plan;
        for (size_t i = 0; i < layers; ++i) plan.blocks.push_back({true, 0});
        return init(cfg, plan, MomConfig{1, 1, false}, seed);
    }

    std::vector<Tensor<T>*> params() {
        std::vector<Tensor<T>*> out = {&tok_emb, &pos_emb};
        for (auto& b : blocks) {
            if (auto* v = std::get_if<VanillaBlock<T>>(&b))
                for (auto* t : v->params()) out.push_back(t);
            else
                for (auto* t : std::get<Chunk<T>>(b).params()) out.push_back(t);
        }
        out.push_back(&final_gain);
        out.push_back(&final_bias);
        return out;
    }

    size_t param_count() {
        size_t n = 0;
        for (auto* t : params()) n += t->numel();
        return n;
    }

    std::vector<NamedParam<T>> named_params() {
        std::vector<NamedParam<T>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string prefix = "block" + std::to_string(i) + ".";
            if (auto* v = std::get_if<VanillaBlock<T>>(&blocks[i])) {
                out.emplace_back(prefix + "ln1.gain", &v->ln1_gain);
                out.emplace_back(prefix + "ln1.bias", &v->ln1_bias);
                out.emplace_back(prefix + "ln2.gain", &v->ln2_gain);
                out.emplace_back(prefix + "ln2.bias", &v->ln2_bias);
                append_attn(out, prefix + "attn.", v->attn);
                append_ffn(out, prefix + "ffn.", v->ffn);
            } else {
                auto& c = std::get<Chunk<T>>(blocks[i]);
                out.emplace_back(prefix + "ln_attn.gain", &c.ln_attn_gain);
                out.emplace_back(prefix + "ln_attn.bias", &c.ln_attn_bias);
                out.emplace_back(prefix + "ln_ffn.gain", &c.ln_ffn_gain);
                out.emplace_back(prefix + "ln_ffn.bias", &c.ln_ffn_bias);
                for (size_t k = 0; k < c.pool.attention.size(); ++k)
                    append_attn(out, prefix + "pool.attn" + std::to_string(k) + ".",
                                c.pool.attention[k]);
                for (size_t k = 0; k < c.pool.ffn.size(); ++k)
                    append_ffn(out, prefix + "pool.ffn" + std::to_string(k) + ".",
                               c.pool.ffn[k]);
                if (c.policy.routed()) {
                    if (c.backend == RouterBackend::gru) {
                        if (c.policy.variant != PolicyVariant::moe)
                            append_gru(out, prefix + "router_attn.", c.gru_attn);
                        append_gru(out, prefix + "router_ffn.", c.gru_ffn);
                    } else {
                        if (c.policy.variant != PolicyVariant::moe)
                            append_mlp(out, prefix + "router_attn.", c.mlp_attn);
                        append_mlp(out, prefix + "router_ffn.", c.mlp_ffn);
                    }
                }
            }
        }
        out.emplace_back("final_norm.gain", &final_gain);
        out.emplace_back("final_norm.bias", &final_bias);
        return out;
    }

private:
    static void append_attn(std::vector<NamedParam<T>>& out, const std::string& p,
                            MhaModule<T>& m) {
        out.emplace_back(p + "wq", &m.wq);
        out.emplace_back(p + "bq", &m.bq);
        out.emplace_back(p + "wk", &m.wk);
        out.emplace_back(p + "bk", &m.bk);
        out.emplace_back(p + "wv", &m.wv);
        out.emplace_back(p + "bv", &m.bv);
        out.emplace_back(p + "wo", &m.wo);
        out.emplace_back(p + "bo", &m.bo);
    }
    static void append_ffn(std::vector<NamedParam<T>>& out, const std::string& p,
                           FfnModule<T>& m) {
        out.emplace_back(p + "w_up", &m.w_up);
        out.emplace_back(p + "b_up", &m.b_up);
        out.emplace_back(p + "w_down", &m.w_down);
        out.emplace_back(p + "b_down", &m.b_down);
    }
    static void append_gru(std::vector<NamedParam<T>>& out, const std::string& p,
                           GruRouter<T>& r) {
        out.emplace_back(p + "gru.wz", &r.cell.wz);
        out.emplace_back(p + "gru.uz", &r.cell.uz);
        out.emplace_back(p + "gru.bz", &r.cell.bz);
        out.emplace_back(p + "gru.wr", &r.cell.wr);
        out.emplace_back(p + "gru.ur", &r.cell.ur);
        out.emplace_back(p + "gru.br", &r.cell.br);
        out.emplace_back(p + "gru.wh", &r.cell.wh);
        out.emplace_back(p + "gru.uh", &r.cell.uh);
        out.emplace_back(p + "gru.bh", &r.cell.bh);
        out.emplace_back(p + "proj", &r.projection);
    }
    static void append_mlp(std::vector<NamedParam<T>>& out, const std::string& p,
                           MlpRouter<T>& r) {
        out.emplace_back(p + "w1", &r.w1);
        out.emplace_back(p + "b1", &r.b1);
        out.emplace_back(p + "w2", &r.w2);
        out.emplace_back(p + "b2", &r.b2);
    }
};

// Forward pass over one id sequence. Routing decisions from every chunk go
// to `trace` when given; `replay` forces them instead (router-free pass).
template <typename T>
Tensor<T> lm_forward(const MomModel<T>& model, const std::vector<int>& ids,
                     AssemblyTrace* trace = nullptr, uint32_t sequence = 0,
                     const ReplayIndex* replay = nullptr) {
    const auto& cfg = model.cfg;
    if (ids.empty()) throw std::invalid_argument("lm_forward: empty input");
    if (ids.size() > cfg.max_seq)
        throw std::invalid_argument("lm_forward: sequence of " + std::to_string(ids.size()) +
                                    " exceeds max length " + std::to_string(cfg.max_seq));
    for (const int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= cfg.vocab)
            throw std::out_of_range("lm_forward: id " + std::to_string(id) +
                                    " outside vocabulary");
    const size_t len = ids.size();
    auto x = add(embedding(model.tok_emb, ids), slice_rows(model.pos_emb, 0, len));
    auto mask = causal_mask<T>(len);
    for (size_t i = 0; i < model.blocks.size(); ++i) {
        if (const auto* v = std::get_if<VanillaBlock<T>>(&model.blocks[i])) {
            x = v->forward(cfg, x, mask);
        } else {
            const auto& chunk = std::get<Chunk<T>>(model.blocks[i]);
            x = run_chunk(chunk, cfg, x, mask, trace, sequence, static_cast<uint32_t>(i),
                          replay);
        }
    }
    x = layernorm(x, model.final_gain, model.final_bias, static_cast<T>(cfg.eps));
    return matmul_nt(x, model.tok_emb);  // tied head
}

// Mean next-token cross entropy in nats; perplexity is exp of this.
template <typename T>
Tensor<T> lm_loss(const Tensor<T>& logits, const std::vector<int>& targets) {
    return cross_entropy_mean(logits, targets);
}

}  // namespace mom
