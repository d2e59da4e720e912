#pragma once

// Two-phase training: phase 1 trains a plain transformer, phase 2
// decomposes it into module pools, draws fresh routers, and keeps training
// with the same data and objective. Decoupled-weight-decay Adam, linear
// warmup with cosine decay to 10% of peak.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mom/corpus.hpp"
#include "mom/model.hpp"

namespace mom {

struct TrainConfig {
    double peak_lr = 1e-3;
    double warmup_ratio = 0.1;
    size_t total_steps = 1000;
    size_t batch_size = 4;
    size_t seq_len = 128;
    uint64_t seed = 0;
    double grad_clip = 1.0;  // global norm; 0 disables
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    size_t eval_interval = 100;
    size_t eval_batches = 8;
    size_t checkpoint_interval = 0;  // 0 = final checkpoint only
    // Ablation: after every update, overwrite each pool's modules with
    // their average so all modules stay identical.
    bool force_identical_modules = false;

    size_t warmup_steps() const {
        return static_cast<size_t>(
            std::llround(warmup_ratio * static_cast<double>(total_steps)));
    }
};

// Linear warmup to peak, cosine decay to 0.1 * peak at `total`.
inline double lr_at(size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps)
        throw std::invalid_argument("lr_at: step " + std::to_string(step) +
                                    " beyond total " + std::to_string(cfg.total_steps));
    const size_t warmup = cfg.warmup_steps();
    if (step < warmup)
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double floor = 0.1 * cfg.peak_lr;
    if (cfg.total_steps == warmup) return step == warmup ? cfg.peak_lr : floor;
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(cfg.total_steps - warmup);
    return floor + 0.5 * (cfg.peak_lr - floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Decoupled-weight-decay Adam with bias-corrected moments. One moment pair
// per parameter tensor, allocated at construction.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>*> params, const TrainConfig& cfg)
        : params_(std::move(params)),
          beta1_(cfg.beta1),
          beta2_(cfg.beta2),
          eps_(cfg.adam_eps),
          weight_decay_(cfg.weight_decay),
          grad_clip_(cfg.grad_clip) {
        for (auto* p : params_) {
            m_.emplace_back(p->numel(), T(0));
            v_.emplace_back(p->numel(), T(0));
        }
    }

    size_t steps_taken() const { return t_; }

    // Clips the global gradient norm in place, then applies the update.
    // Aborts with the offending parameter index on non-finite gradients.
    void step(double lr) {
        double norm_sq = 0.0;
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto* p = params_[pi];
            if (!p->requires_grad() || !p->has_grad()) continue;
            for (const T g : p->grad()) {
                const double gd = static_cast<double>(g);
                if (!std::isfinite(gd))
                    throw std::runtime_error("optimizer: non-finite gradient in parameter " +
                                             std::to_string(pi));
                norm_sq += gd * gd;
            }
        }
        const double norm = std::sqrt(norm_sq);
        double scale = 1.0;
        if (grad_clip_ > 0.0 && norm > grad_clip_) scale = grad_clip_ / norm;

        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto* p = params_[pi];
            if (!p->requires_grad() || !p->has_grad()) continue;
            auto& vals = p->raw_values();
            const auto grads = p->grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < vals.size(); ++i) {
                const double g = static_cast<double>(grads[i]) * scale;
                const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
                const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                double update = mhat / (std::sqrt(vhat) + eps_);
                update += weight_decay_ * static_cast<double>(vals[i]);
                vals[i] = static_cast<T>(static_cast<double>(vals[i]) - lr * update);
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

private:
    std::vector<Tensor<T>*> params_;
    std::vector<std::vector<T>> m_, v_;
    double beta1_, beta2_, eps_, weight_decay_, grad_clip_;
    size_t t_ = 0;
};

// Splits a pre-trained all-vanilla model into the given plan: fixed blocks
// copy verbatim, chunk-covered layers donate their modules in depth order,
// chunk norms come from the first covered layer, routers are drawn fresh
// from router_seed. Embeddings and the final norm copy bit-exactly.
template <typename T>
MomModel<T> decompose_vanilla(const MomModel<T>& vanilla, const ChunkPlan& plan,
                              const MomConfig& mom, uint64_t router_seed,
                              RouterBackend backend = RouterBackend::gru) {
    for (const auto& b : vanilla.plan.blocks)
        if (!b.is_vanilla)
            throw ConfigError("decompose: source model must be all-vanilla");
    if (plan.source_layers() != vanilla.blocks.size())
        throw ConfigError("decompose: plan covers " + std::to_string(plan.source_layers()) +
                          " layers but model has " + std::to_string(vanilla.blocks.size()));

    MomModel<T> out;
    out.cfg = vanilla.cfg;
    out.plan = plan;
    out.mom = mom;
    out.backend = backend;
    out.tok_emb = vanilla.tok_emb.clone();
    out.pos_emb = vanilla.pos_emb.clone();
    out.final_gain = vanilla.final_gain.clone();
    out.final_bias = vanilla.final_bias.clone();

    auto clone_attn = [](const MhaModule<T>& src) {
        MhaModule<T> m;
        m.wq = src.wq.clone(); m.bq = src.bq.clone();
        m.wk = src.wk.clone(); m.bk = src.bk.clone();
        m.wv = src.wv.clone(); m.bv = src.bv.clone();
        m.wo = src.wo.clone(); m.bo = src.bo.clone();
        return m;
    };
    auto clone_ffn = [](const FfnModule<T>& src) {
        FfnModule<T> m;
        m.w_up = src.w_up.clone(); m.b_up = src.b_up.clone();
        m.w_down = src.w_down.clone(); m.b_down = src.b_down.clone();
        return m;
    };

    Rng router_rng(router_seed);
    size_t layer = 0;
    for (const auto& pb : plan.blocks) {
        const auto& src_block = [&](size_t i) -> const VanillaBlock<T>& {
            return std::get<VanillaBlock<T>>(vanilla.blocks[i]);
        };
        if (pb.is_vanilla) {
            const auto& src = src_block(layer);
            VanillaBlock<T> b;
            b.ln1_gain = src.ln1_gain.clone();
            b.ln1_bias = src.ln1_bias.clone();
            b.ln2_gain = src.ln2_gain.clone();
            b.ln2_bias = src.ln2_bias.clone();
            b.attn = clone_attn(src.attn);
            b.ffn = clone_ffn(src.ffn);
            out.blocks.emplace_back(std::move(b));
            layer += 1;
        } else {
            Chunk<T> c;
            c.policy = AssemblyPolicy::make_mom(mom.k, mom.h);
            c.backend = backend;
            c.pool.include_skip = mom.skip;
            for (size_t k = 0; k < pb.pool; ++k) {
                c.pool.attention.push_back(clone_attn(src_block(layer + k).attn));
                c.pool.ffn.push_back(clone_ffn(src_block(layer + k).ffn));
            }
            const auto& first = src_block(layer);
            c.ln_attn_gain = first.ln1_gain.clone();
            c.ln_attn_bias = first.ln1_bias.clone();
            c.ln_ffn_gain = first.ln2_gain.clone();
            c.ln_ffn_bias = first.ln2_bias.clone();
            c.init_routers(out.cfg, router_rng);
            c.validate(out.cfg);
            out.blocks.emplace_back(std::move(c));
            layer += pb.pool;
        }
    }
    return out;
}

// After-step hook for the homogeneous-modules ablation: every chunk pool's
// modules are replaced by their mean, separately per type.
template <typename T>
void average_pool_modules(MomModel<T>& model) {
    auto average = [](std::vector<Tensor<T>*> tensors) {
        if (tensors.empty()) return;
        const size_t n = tensors[0]->numel();
        std::vector<double> acc(n, 0.0);
        for (auto* t : tensors)
            for (size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(t->values()[i]);
        for (auto* t : tensors) {
            auto& vals = t->raw_values();
            for (size_t i = 0; i < n; ++i)
                vals[i] = static_cast<T>(acc[i] / static_cast<double>(tensors.size()));
        }
    };
    for (auto& bv : model.blocks) {
        auto* chunk = std::get_if<Chunk<T>>(&bv);
        if (!chunk) continue;
        auto& pool = chunk->pool;
        if (pool.attention.size() > 1) {
            for (size_t field = 0; field < 8; ++field) {
                std::vector<Tensor<T>*> group;
                for (auto& m : pool.attention) group.push_back(m.params()[field]);
                average(group);
            }
        }
        if (pool.ffn.size() > 1) {
            for (size_t field = 0; field < 4; ++field) {
                std::vector<Tensor<T>*> group;
                for (auto& m : pool.ffn) group.push_back(m.params()[field]);
                average(group);
            }
        }
    }
}

struct StepMetrics {
    size_t step = 0;
    int phase = 1;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> val_loss;
};

template <typename T>
double validation_loss(const MomModel<T>& model, const std::vector<uint8_t>& valid,
                       size_t seq_len, size_t max_batches) {
    NoGradGuard ng;
    const size_t n_windows = (valid.size() - 1) / seq_len;
    const size_t use = std::min(max_batches, n_windows);
    if (use == 0) throw std::runtime_error("validation: split shorter than one window");
    double total = 0.0;
    std::vector<int> inputs(seq_len), targets(seq_len);
    for (size_t w = 0; w < use; ++w) {
        const size_t start = w * seq_len;
        for (size_t i = 0; i < seq_len; ++i) {
            inputs[i] = valid[start + i];
            targets[i] = valid[start + i + 1];
        }
        total += static_cast<double>(lm_loss(lm_forward(model, inputs), targets).item());
    }
    return total / static_cast<double>(use);
}

// One training phase over the split. Metrics are returned in step order;
// on_checkpoint fires at the configured cadence and after the last step.
template <typename T>
std::vector<StepMetrics> train_phase(
    MomModel<T>& model, const CorpusSplit& data, const TrainConfig& cfg, int phase,
    const std::function<void(size_t step)>& on_checkpoint = {}) {
    std::vector<StepMetrics> metrics;
    if (cfg.total_steps == 0) return metrics;
    if (cfg.seq_len > model.cfg.max_seq)
        throw ConfigError("train: seq_len exceeds model max_seq");

    auto params = model.params();
    AdamW<T> opt(params, cfg);
    WindowSampler sampler(data.train, cfg.seq_len, cfg.seed);

    std::vector<int> inputs, targets;
    for (size_t step = 0; step < cfg.total_steps; ++step) {
        opt.zero_grad();
        Tensor<T> batch_loss;
        for (size_t b = 0; b < cfg.batch_size; ++b) {
            sampler.next(inputs, targets);
            auto loss = scale(lm_loss(lm_forward(model, inputs), targets),
                              static_cast<T>(1.0 / static_cast<double>(cfg.batch_size)));
            batch_loss = b == 0 ? loss : add(batch_loss, loss);
        }
        batch_loss.backward();
        const double lr = lr_at(step + 1, cfg);
        opt.step(lr);
        if (cfg.force_identical_modules) average_pool_modules(model);

        StepMetrics m;
        m.step = step + 1;
        m.phase = phase;
        m.loss = static_cast<double>(batch_loss.item());
        m.lr = lr;
        const bool last = step + 1 == cfg.total_steps;
        if (last || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0))
            m.val_loss = validation_loss(model, data.valid, cfg.seq_len, cfg.eval_batches);
        metrics.push_back(m);

        if (on_checkpoint &&
            (last || (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0)))
            on_checkpoint(step + 1);
    }
    return metrics;
}

}  // namespace mom
