#pragma once

// Recurrent routers. A router carries a GRU decision state across assembly
// steps and projects it to one logit per pool choice (SKIP last). Selection
// is hard top-K with lowest-index tie-breaking; gate weights are the softmax
// over the K selected logits, so gradients reach the router only through
// the gates of what actually ran.

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mom/rng.hpp"
#include "mom/tensor.hpp"

namespace mom {

enum class RouterKind { attention, ffn };

struct RoutingDecision {
    size_t step = 0;
    RouterKind kind = RouterKind::attention;
    // One row per token: selected module indices in descending-logit order
    // (ties to the lowest index) and the matching gate weights.
    std::vector<std::vector<int>> indices;
    std::vector<std::vector<double>> gates;
    size_t num_choices = 0;  // pool choices incl. SKIP when present
    int skip_index = -1;     // -1 when the pool has no SKIP

    size_t tokens() const { return indices.size(); }
    size_t k() const { return indices.empty() ? 0 : indices[0].size(); }
};

// Top-k indices of one logit row: largest values first, ties broken toward
// the lower index. `limit` restricts selection to the first `limit` logits.
template <typename T>
std::vector<int> topk_indices(const T* logits, size_t n, size_t k) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                      [&](int a, int b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    idx.resize(k);
    return idx;
}

template <typename T>
struct GruCell {
    Tensor<T> wz, uz, bz, wr, ur, br, wh, uh, bh;

    static GruCell init(size_t d, Rng& rng, T bound) {
        GruCell c;
        auto mat = [&] { return Tensor<T>::uniform(rng, {d, d}, -bound, bound, true); };
        c.wz = mat(); c.uz = mat(); c.bz = Tensor<T>::zeros({d}, true);
        c.wr = mat(); c.ur = mat(); c.br = Tensor<T>::zeros({d}, true);
        c.wh = mat(); c.uh = mat(); c.bh = Tensor<T>::zeros({d}, true);
        return c;
    }

    std::vector<Tensor<T>*> params() {
        return {&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh};
    }

    // Standard Cho et al. cell, applied row-wise:
    //   z = sigma(x Wz + s Uz + bz), r = sigma(x Wr + s Ur + br)
    //   h = tanh(x Wh + (r . s) Uh + bh), s' = (1-z) . s + z . h
    Tensor<T> step(const Tensor<T>& x, const Tensor<T>& s_prev) const {
        if (x.rank() != 2 || s_prev.rank() != 2 || x.shape() != s_prev.shape() ||
            x.cols() != wz.rows())
            throw DimensionError("gru step: input " + shape_str(x.shape()) +
                                 " and state " + shape_str(s_prev.shape()) +
                                 " must both be [tokens x " + std::to_string(wz.rows()) + "]");
        auto z = sigmoid(add_bias(add(matmul(x, wz), matmul(s_prev, uz)), bz));
        auto r = sigmoid(add_bias(add(matmul(x, wr), matmul(s_prev, ur)), br));
        auto h = tanh_op(add_bias(add(matmul(x, wh), matmul(mul(r, s_prev), uh)), bh));
        auto keep = mul(affine(z, T(-1), T(1)), s_prev);  // (1-z) . s
        return add(keep, mul(z, h));
    }
};

// Eq-style recurrent router: s' = GRU(x, s), logits = s' W^T.
template <typename T>
struct GruRouter {
    RouterKind kind = RouterKind::attention;
    GruCell<T> cell;
    Tensor<T> projection;  // [choices x d]; row `skip_row` inert when skip disabled
    size_t active_choices = 0;

    static GruRouter init(RouterKind kind, size_t d, size_t pool_modules,
                          bool include_skip, Rng& rng) {
        GruRouter r;
        r.kind = kind;
        const T bound = static_cast<T>(1.0 / std::sqrt(double(d)));
        r.cell = GruCell<T>::init(d, rng, bound);
        // The projection always carries the SKIP row so the parameter count
        // does not depend on whether SKIP participates; with skip disabled
        // the last row never receives gradient and its logit is ignored.
        r.projection = Tensor<T>::uniform(rng, {pool_modules + 1, d}, -bound, bound, true);
        r.active_choices = pool_modules + (include_skip ? 1 : 0);
        return r;
    }

    std::vector<Tensor<T>*> params() {
        auto out = cell.params();
        out.push_back(&projection);
        return out;
    }
};

// Appendix-style stateless ablation: two affine layers with tanh between.
template <typename T>
struct MlpRouter {
    RouterKind kind = RouterKind::attention;
    Tensor<T> w1, b1, w2, b2;
    size_t active_choices = 0;

    static MlpRouter init(RouterKind kind, size_t d, size_t pool_modules,
                          bool include_skip, Rng& rng) {
        MlpRouter r;
        r.kind = kind;
        const T bound = static_cast<T>(1.0 / std::sqrt(double(d)));
        r.w1 = Tensor<T>::uniform(rng, {d, d}, -bound, bound, true);
        r.b1 = Tensor<T>::zeros({d}, true);
        r.w2 = Tensor<T>::uniform(rng, {d, pool_modules + 1}, -bound, bound, true);
        r.b2 = Tensor<T>::zeros({pool_modules + 1}, true);
        r.active_choices = pool_modules + (include_skip ? 1 : 0);
        return r;
    }

    std::vector<Tensor<T>*> params() { return {&w1, &b1, &w2, &b2}; }
};

namespace detail {

template <typename T>
RoutingDecision select_topk(const Tensor<T>& logits, size_t active_choices, size_t k,
                            RouterKind kind, size_t step, int skip_index,
                            Tensor<T>& gates_out) {
    const size_t tokens = logits.rows();
    if (k < 1 || k > active_choices)
        throw std::invalid_argument("route: K=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(active_choices) + "]");
    RoutingDecision d;
    d.step = step;
    d.kind = kind;
    d.num_choices = active_choices;
    d.skip_index = skip_index;
    d.indices.resize(tokens);
    const auto lv = logits.values();
    for (size_t i = 0; i < tokens; ++i)
        d.indices[i] = topk_indices(lv.data() + i * logits.cols(), active_choices, k);
    auto selected = gather_cols(logits, d.indices);
    gates_out = softmax_lastdim(selected);
    d.gates.resize(tokens);
    for (size_t i = 0; i < tokens; ++i) {
        d.gates[i].resize(k);
        for (size_t j = 0; j < k; ++j)
            d.gates[i][j] = static_cast<double>(gates_out.values()[i * k + j]);
    }
    return d;
}

}  // namespace detail

// Row-wise routing over a batch of token states. X and S_prev are
// [tokens x d]; token i's decision depends only on row i. Returns the
// decision, the differentiable gate tensor, and the advanced state.
template <typename T>
struct BatchRoute {
    RoutingDecision decision;
    Tensor<T> gates;   // [tokens x K], differentiable
    Tensor<T> s_next;  // [tokens x d]
};

template <typename T>
BatchRoute<T> route_batch(const GruRouter<T>& router, const Tensor<T>& x,
                          const Tensor<T>& s_prev, size_t k, size_t step = 0) {
    BatchRoute<T> out;
    out.s_next = router.cell.step(x, s_prev);
    auto logits = matmul_nt(out.s_next, router.projection);  // [tokens x (N+1)]
    out.decision = detail::select_topk(logits, router.active_choices, k, router.kind,
                                       step, static_cast<int>(router.projection.rows()) - 1,
                                       out.gates);
    if (out.decision.num_choices == router.projection.rows() - 1)
        out.decision.skip_index = -1;  // pool without SKIP
    return out;
}

template <typename T>
BatchRoute<T> route_batch(const MlpRouter<T>& router, const Tensor<T>& x,
                          const Tensor<T>& s_prev, size_t k, size_t step = 0) {
    if (x.rows() != s_prev.rows())
        throw DimensionError("route: state rows " + std::to_string(s_prev.rows()) +
                             " != input rows " + std::to_string(x.rows()));
    BatchRoute<T> out;
    out.s_next = s_prev;  // stateless: decisions cannot depend on history
    auto hidden = tanh_op(add_bias(matmul(x, router.w1), router.b1));
    auto logits = add_bias(matmul(hidden, router.w2), router.b2);
    out.decision = detail::select_topk(logits, router.active_choices, k, router.kind,
                                       step, static_cast<int>(router.w2.cols()) - 1,
                                       out.gates);
    if (out.decision.num_choices == router.w2.cols() - 1) out.decision.skip_index = -1;
    return out;
}

// Single-token convenience wrapper.
template <typename T, typename Router>
BatchRoute<T> route(const Router& router, const Tensor<T>& x, const Tensor<T>& s_prev,
                    size_t k, size_t step = 0) {
    return route_batch(router, x, s_prev, k, step);
}

}  // namespace mom
