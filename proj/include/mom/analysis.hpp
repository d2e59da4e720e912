#pragma once

// Routing-trace analytics: empirical module transition probabilities
// between consecutive assembly steps, per-module load distribution, and
// skip rates, with CSV export. For K > 1 every selected index at step h
// pairs with every index at step h+1, weighted 1 / (K_h * K_{h+1}).

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mom/trace.hpp"

namespace mom {

struct TransitionMatrix {
    RouterKind kind = RouterKind::attention;
    size_t choices = 0;  // pool size + 1 when SKIP participates
    bool has_skip = false;
    std::vector<double> probs;       // row-major [choices x choices]
    std::vector<double> row_weight;  // observed outgoing mass per row
    std::vector<bool> supported;     // rows with any observations

    double at(size_t from, size_t to) const { return probs[from * choices + to]; }
};

struct LoadStats {
    struct PerKind {
        size_t choices = 0;
        bool has_skip = false;
        std::vector<double> freq;                    // selection share per module
        std::vector<std::vector<double>> step_freq;  // per assembly step
        double skip_rate = 0.0;
        size_t selections = 0;
    };
    PerKind attn;
    PerKind ffn;
    double overall_skip_rate = 0.0;
};

inline std::string choice_label(size_t index, size_t choices, bool has_skip) {
    if (has_skip && index + 1 == choices) return "S";
    return std::to_string(index);
}

inline TransitionMatrix transition_matrix(const AssemblyTrace& trace, RouterKind kind) {
    TransitionMatrix out;
    out.kind = kind;
    out.choices = kind == RouterKind::attention ? trace.attn_choices : trace.ffn_choices;
    out.has_skip = kind == RouterKind::attention ? trace.attn_has_skip : trace.ffn_has_skip;
    if (out.choices == 0)
        throw std::runtime_error("transition_matrix: trace holds no records of this kind");

    // Per-token step sequences within each (sequence, chunk).
    std::map<std::tuple<uint32_t, uint32_t, uint32_t>,
             std::map<uint32_t, const TraceRecord*>>
        paths;
    for (const auto& r : trace.records)
        if (r.kind == kind) paths[{r.sequence, r.chunk, r.token}][r.step] = &r;
    if (paths.empty())
        throw std::runtime_error("transition_matrix: trace holds no records of this kind");

    const size_t n = out.choices;
    std::vector<double> counts(n * n, 0.0);
    for (const auto& [key, steps] : paths) {
        const TraceRecord* prev = nullptr;
        for (const auto& [step, rec] : steps) {
            if (prev && prev->step + 1 == step) {
                const double w =
                    1.0 / (double(prev->indices.size()) * double(rec->indices.size()));
                for (const int from : prev->indices)
                    for (const int to : rec->indices) {
                        if (from < 0 || size_t(from) >= n || to < 0 || size_t(to) >= n)
                            throw std::runtime_error("transition_matrix: index outside pool");
                        counts[size_t(from) * n + size_t(to)] += w;
                    }
            }
            prev = rec;
        }
    }

    out.probs.assign(n * n, 0.0);
    out.row_weight.assign(n, 0.0);
    out.supported.assign(n, false);
    for (size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (size_t j = 0; j < n; ++j) row += counts[i * n + j];
        out.row_weight[i] = row;
        if (row > 0.0) {
            out.supported[i] = true;
            for (size_t j = 0; j < n; ++j) out.probs[i * n + j] = counts[i * n + j] / row;
        }
    }
    return out;
}

inline LoadStats load_stats(const AssemblyTrace& trace) {
    if (trace.records.empty()) throw std::runtime_error("load_stats: empty trace");
    LoadStats out;
    out.attn.choices = trace.attn_choices;
    out.attn.has_skip = trace.attn_has_skip;
    out.ffn.choices = trace.ffn_choices;
    out.ffn.has_skip = trace.ffn_has_skip;

    auto accumulate = [](LoadStats::PerKind& pk, const TraceRecord& r) {
        if (pk.freq.size() < pk.choices) pk.freq.assign(pk.choices, 0.0);
        if (pk.step_freq.size() <= r.step) pk.step_freq.resize(r.step + 1);
        auto& step_row = pk.step_freq[r.step];
        if (step_row.size() < pk.choices) step_row.assign(pk.choices, 0.0);
        for (const int idx : r.indices) {
            if (idx < 0 || size_t(idx) >= pk.choices)
                throw std::runtime_error("load_stats: index outside pool");
            pk.freq[size_t(idx)] += 1.0;
            step_row[size_t(idx)] += 1.0;
            ++pk.selections;
        }
    };
    for (const auto& r : trace.records)
        accumulate(r.kind == RouterKind::attention ? out.attn : out.ffn, r);

    auto finalize = [](LoadStats::PerKind& pk) {
        if (pk.selections == 0) return;
        const double total = double(pk.selections);
        if (pk.has_skip) pk.skip_rate = pk.freq.empty() ? 0.0 : pk.freq.back() / total;
        for (auto& f : pk.freq) f /= total;
        for (auto& row : pk.step_freq) {
            double s = 0.0;
            for (const double v : row) s += v;
            if (s > 0.0)
                for (auto& v : row) v /= s;
        }
    };
    finalize(out.attn);
    finalize(out.ffn);

    const size_t total = out.attn.selections + out.ffn.selections;
    double skip_count = 0.0;
    if (out.attn.has_skip && out.attn.selections)
        skip_count += out.attn.skip_rate * double(out.attn.selections);
    if (out.ffn.has_skip && out.ffn.selections)
        skip_count += out.ffn.skip_rate * double(out.ffn.selections);
    out.overall_skip_rate = total ? skip_count / double(total) : 0.0;
    return out;
}

// kind,from,to,prob rows for every supported-row entry of both matrices.
inline std::string transitions_csv(const TransitionMatrix& attn,
                                   const TransitionMatrix& ffn) {
    std::ostringstream os;
    os << "kind,from,to,prob\n";
    os << std::setprecision(17);
    auto emit = [&](const TransitionMatrix& m, const char* kind) {
        for (size_t i = 0; i < m.choices; ++i) {
            if (!m.supported[i]) continue;
            for (size_t j = 0; j < m.choices; ++j)
                os << kind << "," << choice_label(i, m.choices, m.has_skip) << ","
                   << choice_label(j, m.choices, m.has_skip) << "," << m.at(i, j) << "\n";
        }
    };
    emit(attn, "A");
    emit(ffn, "F");
    return os.str();
}

inline std::string loads_csv(const LoadStats& stats) {
    std::ostringstream os;
    os << "kind,module,freq\n";
    os << std::setprecision(17);
    auto emit = [&](const LoadStats::PerKind& pk, const char* kind) {
        for (size_t i = 0; i < pk.freq.size(); ++i)
            os << kind << "," << choice_label(i, pk.choices, pk.has_skip) << ","
               << pk.freq[i] << "\n";
    };
    emit(stats.attn, "A");
    emit(stats.ffn, "F");
    return os.str();
}

}  // namespace mom
