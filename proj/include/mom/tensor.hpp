#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
// The op vocabulary is exactly what a decoder-only transformer stack,
// GRU routers, and token-level gating need; no broadcasting beyond that.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "mom/rng.hpp"

namespace mom {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

inline thread_local bool g_grad_enabled = true;

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void mm_acc(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t t = 0; t < k; ++t) {
            const T av = arow[t];
            const T* brow = b + t * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
// Materializes b^T into scratch so the accumulation runs through the
// vector-friendly row kernel; summation stays in fixed ascending-t order.
template <typename T>
void mm_nt_acc(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    thread_local std::vector<T> scratch;
    scratch.resize(k * n);
    for (size_t j = 0; j < n; ++j)
        for (size_t t = 0; t < k; ++t) scratch[t * n + j] = b[j * k + t];
    mm_acc(c, a, scratch.data(), m, k, n);
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void mm_tn_acc(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (size_t t = 0; t < k; ++t) {
            const T av = arow[t];
            T* crow = c + t * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// RAII switch disabling tape construction (inference / profiling paths).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

template <typename T>
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<T> val;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates into parents' grads

    size_t numel() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(std::vector<size_t> shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<T>>();
        size_t count = 1;
        for (size_t e : shape) count *= e;
        n->shape = std::move(shape);
        n->val.assign(count, v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(std::vector<size_t> shape, std::vector<T> data,
                            bool requires_grad = false) {
        size_t count = 1;
        for (size_t e : shape) count *= e;
        if (count != data.size())
            throw DimensionError("tensor data size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->val = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor uniform(Rng& rng, std::vector<size_t> shape, T lo, T hi,
                          bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->val) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor normal(Rng& rng, std::vector<size_t> shape, T mean, T stddev,
                         bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->val) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t numel() const { return node_->val.size(); }
    size_t rows() const { return node_->shape.at(0); }
    size_t cols() const { return node_->shape.at(1); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const T> values() const { return node_->val; }
    std::vector<T>& raw_values() { return node_->val; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::vector<T>& raw_grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    T item() const {
        if (numel() != 1)
            throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->val[0];
    }

    T at(size_t i, size_t j) const { return node_->val[i * cols() + j]; }

    void zero_grad() { node_->grad.clear(); }

    // Reverse-mode sweep from a scalar. Grads accumulate across calls
    // until zero_grad(); the graph itself stays alive with the tensor.
    void backward() const {
        if (numel() != 1)
            throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                        shape_str(shape()));
        std::vector<TensorNode<T>*> order;
        topo_sort(node_.get(), order);
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<T>* n = *it;
            if (n->backprop) n->backprop(*n);
        }
        // Intermediate grads are scratch; only leaves accumulate across calls.
        for (TensorNode<T>* n : order)
            if (n->backprop) n->grad.clear();
    }

    // Fresh node with the same bytes; grads and tape edges are not copied.
    Tensor clone() const {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = node_->shape;
        n->val = node_->val;
        n->requires_grad = node_->requires_grad;
        return Tensor(std::move(n));
    }

    void check_finite(const char* tag) const {
        for (const T v : node_->val)
            if (!std::isfinite(static_cast<double>(v)))
                throw std::runtime_error(std::string("non-finite value in ") + tag);
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

private:
    static void topo_sort(TensorNode<T>* root, std::vector<TensorNode<T>*>& order) {
        // Iterative post-order; deterministic because parent lists are ordered.
        std::unordered_set<TensorNode<T>*> visited;
        std::vector<std::pair<TensorNode<T>*, size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                TensorNode<T>* p = n->parents[idx++].get();
                if (p->backprop || p->requires_grad) {
                    if (visited.insert(p).second) stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(std::vector<size_t> shape, std::vector<T> val,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorNode<T>&)> backprop) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->val = std::move(val);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& in : inputs)
            if (in.node()->requires_grad || in.node()->backprop) needs = true;
    if (needs) {
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2)
        throw DimensionError(std::string(what) + " expects a rank-2 tensor, got " +
                             shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(a.numel());
    const auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto pa = a.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(a.numel());
    const auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto pa = a.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(a.numel());
    const auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto pa = a.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->val[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->val[i];
            }
        });
}

// y = scale * x + shift, scalar coefficients
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
    auto px = x.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x}, [px, scale](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += scale * self.grad[i];
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return affine(x, c, T(0));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    auto px = x.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x}, [px](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T y = self.val[i];
                px->grad[i] += self.grad[i] * y * (T(1) - y);
            }
        });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
    auto px = x.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x}, [px](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T y = self.val[i];
                px->grad[i] += self.grad[i] * (T(1) - y * y);
            }
        });
}

// tanh-approximated GELU (GPT-2 lineage)
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubic = 0.044715;
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        const T t = std::tanh(T(kSqrt2OverPi) * (v + T(kCubic) * v * v * v));
        out[i] = T(0.5) * v * (T(1) + t);
    }
    auto px = x.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x}, [px](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T v = px->val[i];
                const T t = std::tanh(T(kSqrt2OverPi) * (v + T(kCubic) * v * v * v));
                const T dt = (T(1) - t * t) * T(kSqrt2OverPi) * (T(1) + T(3 * kCubic) * v * v);
                const T d = T(0.5) * (T(1) + t) + T(0.5) * v * dt;
                px->grad[i] += self.grad[i] * d;
            }
        });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    detail::mm_acc(out.data(), a.values().data(), b.values().data(), m, k, n);
    auto pa = a.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        {m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::mm_nt_acc(pa->grad.data(), self.grad.data(), pb->val.data(), m, n, k);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::mm_tn_acc(pb->grad.data(), pa->val.data(), self.grad.data(), m, k, n);
            }
        });
}

// a * b^T without materializing the transpose
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<T> out(m * n, T(0));
    detail::mm_nt_acc(out.data(), a.values().data(), b.values().data(), m, k, n);
    auto pa = a.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        {m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::mm_acc(pa->grad.data(), self.grad.data(), pb->val.data(), m, n, k);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::mm_tn_acc(pb->grad.data(), self.grad.data(), pa->val.data(), m, n, k);
            }
        });
}

// x[R x C] + b[C], row broadcast
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    detail::require_rank2(x, "add_bias");
    if (b.rank() != 1 || b.shape()[0] != x.cols())
        throw DimensionError("add_bias: bias " + shape_str(b.shape()) +
                             " does not match " + shape_str(x.shape()));
    const size_t r = x.rows(), c = x.cols();
    std::vector<T> out(x.numel());
    const auto xv = x.values(), bv = b.values();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
    auto px = x.node().get();
    auto pb = b.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x, b}, [px, pb, r, c](TensorNode<T>& self) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < c; ++j) pb->grad[j] += self.grad[i * c + j];
            }
        });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Tensor<T>* mask = nullptr) {
    if (x.rank() < 1 || x.shape().back() < 1)
        throw DimensionError("softmax_lastdim: need last extent >= 1, got " +
                             shape_str(x.shape()));
    if (mask && mask->shape() != x.shape())
        throw DimensionError("softmax_lastdim: mask " + shape_str(mask->shape()) +
                             " does not match " + shape_str(x.shape()));
    const size_t c = x.shape().back();
    const size_t r = x.numel() / c;
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    const T* mv = mask ? mask->values().data() : nullptr;
    for (size_t i = 0; i < r; ++i) {
        const T* row = xv.data() + i * c;
        const T* mrow = mv ? mv + i * c : nullptr;
        T mx = -std::numeric_limits<T>::infinity();
        for (size_t j = 0; j < c; ++j) {
            const T z = mrow ? row[j] + mrow[j] : row[j];
            if (z > mx) mx = z;
        }
        if (!(mx > -std::numeric_limits<T>::infinity()))
            throw std::runtime_error("softmax_lastdim: all entries masked in slice " +
                                     std::to_string(i));
        T sum = T(0);
        for (size_t j = 0; j < c; ++j) {
            const T z = mrow ? row[j] + mrow[j] : row[j];
            const T e = std::exp(z - mx);
            out[i * c + j] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
    }
    auto px = x.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x}, [px, r, c](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < r; ++i) {
                const T* y = self.val.data() + i * c;
                const T* dy = self.grad.data() + i * c;
                T dot = T(0);
                for (size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
                T* dx = px->grad.data() + i * c;
                for (size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T eps) {
    detail::require_rank2(x, "layernorm");
    const size_t r = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("layernorm: zero feature width");
    if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d)
        throw DimensionError("layernorm: gain/bias must be [" + std::to_string(d) + "]");
    if (!(eps > T(0))) throw std::invalid_argument("layernorm: eps must be positive");
    std::vector<T> out(x.numel());
    std::vector<T> inv_std(r), mean(r);
    const auto xv = x.values();
    const auto gv = gain.values(), bv = bias.values();
    for (size_t i = 0; i < r; ++i) {
        const T* row = xv.data() + i * d;
        T mu = T(0);
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) {
            const T dv = row[j] - mu;
            var += dv * dv;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var + eps)));
        mean[i] = mu;
        inv_std[i] = istd;
        for (size_t j = 0; j < d; ++j)
            out[i * d + j] = (row[j] - mu) * istd * gv[j] + bv[j];
    }
    auto px = x.node().get();
    auto pg = gain.node().get();
    auto pb = bias.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x, gain, bias},
        [px, pg, pb, r, d, mean = std::move(mean),
         inv_std = std::move(inv_std)](TensorNode<T>& self) {
            for (size_t i = 0; i < r; ++i) {
                const T* row = px->val.data() + i * d;
                const T* dy = self.grad.data() + i * d;
                const T mu = mean[i], istd = inv_std[i];
                if (pg->requires_grad || pb->requires_grad) {
                    if (pg->requires_grad) pg->ensure_grad();
                    if (pb->requires_grad) pb->ensure_grad();
                    for (size_t j = 0; j < d; ++j) {
                        const T xhat = (row[j] - mu) * istd;
                        if (pg->requires_grad) pg->grad[j] += dy[j] * xhat;
                        if (pb->requires_grad) pb->grad[j] += dy[j];
                    }
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    // dx = istd/d * (d*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (size_t j = 0; j < d; ++j) {
                        const T xhat = (row[j] - mu) * istd;
                        const T dxhat = dy[j] * pg->val[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    T* dx = px->grad.data() + i * d;
                    const T invd = T(1) / static_cast<T>(d);
                    for (size_t j = 0; j < d; ++j) {
                        const T xhat = (row[j] - mu) * istd;
                        const T dxhat = dy[j] * pg->val[j];
                        dx[j] += istd * (dxhat - invd * sum_dxhat - invd * xhat * sum_dxhat_xhat);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// lookup / reshaping
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    detail::require_rank2(table, "embedding");
    const size_t v = table.rows(), d = table.cols();
    std::vector<T> out(ids.size() * d);
    const auto tv = table.values();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw std::out_of_range("embedding: id " + std::to_string(id) +
                                    " outside vocabulary of " + std::to_string(v));
        std::copy_n(tv.data() + static_cast<size_t>(id) * d, d, out.data() + i * d);
    }
    auto pt = table.node().get();
    return detail::make_result<T>(
        {ids.size(), d}, std::move(out), {table}, [pt, ids, d](TensorNode<T>& self) {
            if (!pt->requires_grad) return;
            pt->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = pt->grad.data() + static_cast<size_t>(ids[i]) * d;
                const T* src = self.grad.data() + i * d;
                for (size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, size_t start, size_t len) {
    detail::require_rank2(x, "slice_lastdim");
    const size_t r = x.rows(), c = x.cols();
    if (start + len > c)
        throw DimensionError("slice_lastdim: [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds width " +
                             std::to_string(c));
    std::vector<T> out(r * len);
    const auto xv = x.values();
    for (size_t i = 0; i < r; ++i)
        std::copy_n(xv.data() + i * c + start, len, out.data() + i * len);
    auto px = x.node().get();
    return detail::make_result<T>(
        {r, len}, std::move(out), {x}, [px, r, c, start, len](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < r; ++i) {
                T* dst = px->grad.data() + i * c + start;
                const T* src = self.grad.data() + i * len;
                for (size_t j = 0; j < len; ++j) dst[j] += src[j];
            }
        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, size_t start, size_t len) {
    detail::require_rank2(x, "slice_rows");
    const size_t r = x.rows(), c = x.cols();
    if (start + len > r)
        throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds rows " +
                             std::to_string(r));
    std::vector<T> out(len * c);
    std::copy_n(x.values().data() + start * c, len * c, out.data());
    auto px = x.node().get();
    return detail::make_result<T>(
        {len, c}, std::move(out), {x}, [px, start, c, len](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            T* dst = px->grad.data() + start * c;
            for (size_t i = 0; i < len * c; ++i) dst[i] += self.grad[i];
        });
}

// One row as a [1 x C] tensor.
template <typename T>
Tensor<T> slice_rows_copy(const Tensor<T>& x, size_t row) {
    return slice_rows(x, row, 1);
}

// y[i, :] = x[ids[i], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& ids) {
    detail::require_rank2(x, "gather_rows");
    const size_t r = x.rows(), c = x.cols();
    std::vector<T> out(ids.size() * c);
    const auto xv = x.values();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int row = ids[i];
        if (row < 0 || static_cast<size_t>(row) >= r)
            throw std::out_of_range("gather_rows: row " + std::to_string(row));
        std::copy_n(xv.data() + static_cast<size_t>(row) * c, c, out.data() + i * c);
    }
    auto px = x.node().get();
    return detail::make_result<T>(
        {ids.size(), c}, std::move(out), {x}, [px, ids, c](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = px->grad.data() + static_cast<size_t>(ids[i]) * c;
                const T* src = self.grad.data() + i * c;
                for (size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        });
}

// y[ids[i], :] += x[i, :], zeros elsewhere; duplicate rows accumulate
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, const std::vector<int>& ids, size_t out_rows) {
    detail::require_rank2(x, "scatter_rows");
    const size_t c = x.cols();
    if (ids.size() != x.rows())
        throw DimensionError("scatter_rows: " + std::to_string(ids.size()) +
                             " row ids for " + std::to_string(x.rows()) + " rows");
    std::vector<T> out(out_rows * c, T(0));
    const auto xv = x.values();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int row = ids[i];
        if (row < 0 || static_cast<size_t>(row) >= out_rows)
            throw std::out_of_range("scatter_rows: row " + std::to_string(row));
        T* dst = out.data() + static_cast<size_t>(row) * c;
        const T* src = xv.data() + i * c;
        for (size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    auto px = x.node().get();
    return detail::make_result<T>(
        {out_rows, c}, std::move(out), {x}, [px, ids, c](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                const T* src = self.grad.data() + static_cast<size_t>(ids[i]) * c;
                T* dst = px->grad.data() + i * c;
                for (size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        });
}

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_lastdim: no inputs");
    const size_t r = parts[0].rows();
    size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_lastdim");
        if (p.rows() != r)
            throw DimensionError("concat_lastdim: row mismatch " + shape_str(p.shape()));
        total += p.cols();
    }
    std::vector<T> out(r * total);
    size_t off = 0;
    for (const auto& p : parts) {
        const auto pv = p.values();
        const size_t c = p.cols();
        for (size_t i = 0; i < r; ++i)
            std::copy_n(pv.data() + i * c, c, out.data() + i * total + off);
        off += c;
    }
    std::vector<TensorNode<T>*> pnodes;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        pnodes.push_back(p.node().get());
        widths.push_back(p.cols());
    }
    return detail::make_result<T>(
        {r, total}, std::move(out), parts,
        [pnodes = std::move(pnodes), widths = std::move(widths), r,
         total](TensorNode<T>& self) {
            size_t off = 0;
            for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                const size_t c = widths[pi];
                if (pnodes[pi]->requires_grad) {
                    pnodes[pi]->ensure_grad();
                    for (size_t i = 0; i < r; ++i) {
                        const T* src = self.grad.data() + i * total + off;
                        T* dst = pnodes[pi]->grad.data() + i * c;
                        for (size_t j = 0; j < c; ++j) dst[j] += src[j];
                    }
                }
                off += c;
            }
        });
}

// y[i, k] = x[i, idx[i][k]]
template <typename T>
Tensor<T> gather_cols(const Tensor<T>& x, const std::vector<std::vector<int>>& idx) {
    detail::require_rank2(x, "gather_cols");
    const size_t r = x.rows(), c = x.cols();
    if (idx.size() != r)
        throw DimensionError("gather_cols: index rows " + std::to_string(idx.size()) +
                             " vs tensor rows " + std::to_string(r));
    const size_t k = idx.empty() ? 0 : idx[0].size();
    std::vector<T> out(r * k);
    const auto xv = x.values();
    for (size_t i = 0; i < r; ++i) {
        if (idx[i].size() != k)
            throw DimensionError("gather_cols: ragged index rows");
        for (size_t j = 0; j < k; ++j) {
            const int col = idx[i][j];
            if (col < 0 || static_cast<size_t>(col) >= c)
                throw std::out_of_range("gather_cols: column " + std::to_string(col));
            out[i * k + j] = xv[i * c + static_cast<size_t>(col)];
        }
    }
    auto px = x.node().get();
    return detail::make_result<T>(
        {r, k}, std::move(out), {x}, [px, idx, r, c, k](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < k; ++j)
                    px->grad[i * c + static_cast<size_t>(idx[i][j])] += self.grad[i * k + j];
        });
}

// y[i, idx[i][k]] = x[i, k], zeros elsewhere; duplicate targets accumulate
template <typename T>
Tensor<T> scatter_cols(const Tensor<T>& x, const std::vector<std::vector<int>>& idx,
                       size_t out_cols) {
    detail::require_rank2(x, "scatter_cols");
    const size_t r = x.rows(), k = x.cols();
    if (idx.size() != r) throw DimensionError("scatter_cols: index rows mismatch");
    for (const auto& row : idx)
        if (row.size() != k)
            throw DimensionError("scatter_cols: index row width " +
                                 std::to_string(row.size()) + " != tensor width " +
                                 std::to_string(k));
    std::vector<T> out(r * out_cols, T(0));
    const auto xv = x.values();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < k; ++j) {
            const int col = idx[i][j];
            if (col < 0 || static_cast<size_t>(col) >= out_cols)
                throw std::out_of_range("scatter_cols: column " + std::to_string(col));
            out[i * out_cols + static_cast<size_t>(col)] += xv[i * k + j];
        }
    auto px = x.node().get();
    return detail::make_result<T>(
        {r, out_cols}, std::move(out), {x}, [px, idx, r, k, out_cols](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < k; ++j)
                    px->grad[i * k + j] +=
                        self.grad[i * out_cols + static_cast<size_t>(idx[i][j])];
        });
}

// y[i, :] = s[i] * x[i, :], s is [R] or [R x 1]
template <typename T>
Tensor<T> rowwise_scale(const Tensor<T>& x, const Tensor<T>& s) {
    detail::require_rank2(x, "rowwise_scale");
    const size_t r = x.rows(), c = x.cols();
    if (s.numel() != r)
        throw DimensionError("rowwise_scale: scale " + shape_str(s.shape()) +
                             " does not match rows of " + shape_str(x.shape()));
    std::vector<T> out(x.numel());
    const auto xv = x.values(), sv = s.values();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * sv[i];
    auto px = x.node().get();
    auto ps = s.node().get();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x, s}, [px, ps, r, c](TensorNode<T>& self) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < c; ++j)
                        px->grad[i * c + j] += self.grad[i * c + j] * ps->val[i];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                for (size_t i = 0; i < r; ++i) {
                    T acc = T(0);
                    for (size_t j = 0; j < c; ++j)
                        acc += self.grad[i * c + j] * px->val[i * c + j];
                    ps->grad[i] += acc;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// reductions / loss
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (const T v : x.values()) acc += v;
    auto px = x.node().get();
    return detail::make_result<T>(
        {1}, {acc}, {x}, [px](TensorNode<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            const T g = self.grad[0];
            for (auto& gv : px->grad) gv += g;
        });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// Mean next-token cross entropy in nats over rows of logits.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& targets) {
    detail::require_rank2(logits, "cross_entropy_mean");
    const size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n)
        throw DimensionError("cross_entropy_mean: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(n) + " rows");
    const auto lv = logits.values();
    double total = 0.0;
    std::vector<T> lse_row(n);
    for (size_t i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t < 0 || static_cast<size_t>(t) >= v)
            throw std::out_of_range("cross_entropy_mean: target " + std::to_string(t));
        const T* row = lv.data() + i * v;
        T mx = row[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        const double lse = static_cast<double>(mx) + std::log(sum);
        lse_row[i] = static_cast<T>(lse);
        total += lse - static_cast<double>(row[static_cast<size_t>(t)]);
    }
    auto pl = logits.node().get();
    return detail::make_result<T>(
        {1}, {static_cast<T>(total / static_cast<double>(n))}, {logits},
        [pl, targets, n, v, lse_row = std::move(lse_row)](TensorNode<T>& self) {
            if (!pl->requires_grad) return;
            pl->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(n);
            for (size_t i = 0; i < n; ++i) {
                const T* row = pl->val.data() + i * v;
                T* drow = pl->grad.data() + i * v;
                for (size_t j = 0; j < v; ++j) {
                    const T p = static_cast<T>(
                        std::exp(static_cast<double>(row[j] - lse_row[i])));
                    drow[j] += g * (p - (static_cast<size_t>(targets[i]) == j ? T(1) : T(0)));
                }
            }
        });
}

// Strictly causal additive mask: 0 on and below the diagonal, -inf above.
template <typename T>
Tensor<T> causal_mask(size_t len) {
    std::vector<T> m(len * len, T(0));
    for (size_t i = 0; i < len; ++i)
        for (size_t j = i + 1; j < len; ++j)
            m[i * len + j] = -std::numeric_limits<T>::infinity();
    return Tensor<T>::from_data({len, len}, std::move(m));
}

}  // namespace mom
