#pragma once

// The module set: parameterized multi-head attention and feed-forward
// modules plus the SKIP identity, each independently addressable by index.

#include <stdexcept>
#include <string>
#include <vector>

#include "mom/rng.hpp"
#include "mom/tensor.hpp"

namespace mom {

struct ModelConfig {
    size_t d = 128;        // hidden size
    size_t heads = 4;      // attention heads per MHA module
    size_t d_ff = 512;     // FFN inner size
    size_t max_seq = 256;  // maximum sequence length
    size_t vocab = 256;    // byte-level by default
    double eps = 1e-5;     // layernorm epsilon

    size_t d_head() const { return d / heads; }

    void validate() const {
        if (d == 0 || heads == 0 || d % heads != 0)
            throw std::invalid_argument("model config: d must be a positive multiple of heads");
        if (vocab < 1 || max_seq < 1)
            throw std::invalid_argument("model config: vocab and max_seq must be >= 1");
        if (d_ff == 0) throw std::invalid_argument("model config: d_ff must be positive");
    }
};

// Per-head projections are stored side by side: head z owns columns
// [z*d_head, (z+1)*d_head) of wq/wk/wv and rows of the same range in wo.
template <typename T>
struct MhaModule {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

    static MhaModule init(const ModelConfig& cfg, Rng& rng, T w_std = T(0.02)) {
        MhaModule m;
        const size_t d = cfg.d;
        m.wq = Tensor<T>::normal(rng, {d, d}, T(0), w_std, true);
        m.bq = Tensor<T>::zeros({d}, true);
        m.wk = Tensor<T>::normal(rng, {d, d}, T(0), w_std, true);
        m.bk = Tensor<T>::zeros({d}, true);
        m.wv = Tensor<T>::normal(rng, {d, d}, T(0), w_std, true);
        m.bv = Tensor<T>::zeros({d}, true);
        m.wo = Tensor<T>::normal(rng, {d, d}, T(0), w_std, true);
        m.bo = Tensor<T>::zeros({d}, true);
        return m;
    }

    std::vector<Tensor<T>*> params() { return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}; }
};

template <typename T>
struct FfnModule {
    Tensor<T> w_up, b_up, w_down, b_down;

    static FfnModule init(const ModelConfig& cfg, Rng& rng, T w_std = T(0.02)) {
        FfnModule m;
        m.w_up = Tensor<T>::normal(rng, {cfg.d, cfg.d_ff}, T(0), w_std, true);
        m.b_up = Tensor<T>::zeros({cfg.d_ff}, true);
        m.w_down = Tensor<T>::normal(rng, {cfg.d_ff, cfg.d}, T(0), w_std, true);
        m.b_down = Tensor<T>::zeros({cfg.d}, true);
        return m;
    }

    std::vector<Tensor<T>*> params() { return {&w_up, &b_up, &w_down, &b_down}; }
};

template <typename T>
struct ModulePool {
    std::vector<MhaModule<T>> attention;
    std::vector<FfnModule<T>> ffn;
    bool include_skip = false;

    size_t n_attention() const { return attention.size(); }
    size_t n_ffn() const { return ffn.size(); }

    // Logical choice count seen by the routers; SKIP is the last index.
    size_t choices(bool is_attention) const {
        return (is_attention ? attention.size() : ffn.size()) + (include_skip ? 1 : 0);
    }
    int skip_index(bool is_attention) const {
        return include_skip
                   ? static_cast<int>(is_attention ? attention.size() : ffn.size())
                   : -1;
    }

    static ModulePool init(const ModelConfig& cfg, size_t n_attention, size_t n_ffn,
                           bool include_skip, Rng& rng) {
        if (n_attention < 1 || n_ffn < 1)
            throw std::invalid_argument("module pool: need at least one module of each type");
        ModulePool p;
        p.include_skip = include_skip;
        for (size_t i = 0; i < n_attention; ++i)
            p.attention.push_back(MhaModule<T>::init(cfg, rng));
        for (size_t i = 0; i < n_ffn; ++i) p.ffn.push_back(FfnModule<T>::init(cfg, rng));
        return p;
    }

    std::vector<Tensor<T>*> params() {
        std::vector<Tensor<T>*> out;
        for (auto& m : attention)
            for (auto* t : m.params()) out.push_back(t);
        for (auto& m : ffn)
            for (auto* t : m.params()) out.push_back(t);
        return out;
    }
};

// Standard causal multi-head self-attention of one module; the caller has
// already applied pre-norm to x_norm. mask must be the strictly causal
// additive mask for the sequence length.
template <typename T>
Tensor<T> mha_forward(const MhaModule<T>& m, const ModelConfig& cfg,
                      const Tensor<T>& x_norm, const Tensor<T>& mask) {
    detail::require_rank2(x_norm, "mha_forward");
    const size_t len = x_norm.rows(), d = cfg.d, dh = cfg.d_head();
    if (x_norm.cols() != d)
        throw DimensionError("mha_forward: input width " + std::to_string(x_norm.cols()) +
                             " != d " + std::to_string(d));
    if (len > cfg.max_seq)
        throw std::invalid_argument("mha_forward: sequence length " + std::to_string(len) +
                                    " exceeds max " + std::to_string(cfg.max_seq));
    auto q = add_bias(matmul(x_norm, m.wq), m.bq);
    auto k = add_bias(matmul(x_norm, m.wk), m.bk);
    auto v = add_bias(matmul(x_norm, m.wv), m.bv);
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(double(dh)));
    std::vector<Tensor<T>> heads;
    heads.reserve(cfg.heads);
    for (size_t z = 0; z < cfg.heads; ++z) {
        auto qz = slice_lastdim(q, z * dh, dh);
        auto kz = slice_lastdim(k, z * dh, dh);
        auto vz = slice_lastdim(v, z * dh, dh);
        auto scores = scale(matmul_nt(qz, kz), inv_sqrt);
        auto probs = softmax_lastdim(scores, &mask);
        heads.push_back(matmul(probs, vz));
    }
    auto mixed = concat_lastdim(heads);
    return add_bias(matmul(mixed, m.wo), m.bo);
}

// down(gelu(up(u_norm)))
template <typename T>
Tensor<T> ffn_forward(const FfnModule<T>& m, const Tensor<T>& u_norm) {
    detail::require_rank2(u_norm, "ffn_forward");
    if (u_norm.cols() != m.w_up.rows())
        throw DimensionError("ffn_forward: input width " + std::to_string(u_norm.cols()) +
                             " != d " + std::to_string(m.w_up.rows()));
    auto hidden = gelu(add_bias(matmul(u_norm, m.w_up), m.b_up));
    return add_bias(matmul(hidden, m.w_down), m.b_down);
}

// The SKIP module: x unchanged, same buffer.
template <typename T>
Tensor<T> skip_forward(const Tensor<T>& x) {
    return x;
}

}  // namespace mom
