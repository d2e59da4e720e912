#pragma once

// Recorded routing decisions. One record per (sequence, token, chunk, step,
// kind); gates are kept at full precision so a replayed trace reproduces the
// original forward pass bit for bit.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "mom/router.hpp"

namespace mom {

struct TraceRecord {
    uint32_t sequence = 0;
    uint32_t token = 0;
    uint32_t chunk = 0;
    uint32_t step = 0;
    RouterKind kind = RouterKind::attention;
    std::vector<int> indices;
    std::vector<double> gates;
};

struct AssemblyTrace {
    // Choice counts (pool size + 1 when SKIP present) for matrix sizing.
    size_t attn_choices = 0;
    size_t ffn_choices = 0;
    // Whether the last choice index denotes SKIP, per kind.
    bool attn_has_skip = false;
    bool ffn_has_skip = false;
    std::vector<TraceRecord> records;

    bool empty() const { return records.empty(); }

    void append(uint32_t sequence, uint32_t chunk, const RoutingDecision& d) {
        for (size_t tok = 0; tok < d.indices.size(); ++tok) {
            TraceRecord r;
            r.sequence = sequence;
            r.token = static_cast<uint32_t>(tok);
            r.chunk = chunk;
            r.step = static_cast<uint32_t>(d.step);
            r.kind = d.kind;
            r.indices = d.indices[tok];
            r.gates = d.gates[tok];
            records.push_back(std::move(r));
        }
    }
};

// Lookup view over a trace for forced-decision replay.
class ReplayIndex {
public:
    explicit ReplayIndex(const AssemblyTrace& trace) {
        for (const auto& r : trace.records)
            by_key_[{r.sequence, r.chunk, r.step, r.kind == RouterKind::ffn}].push_back(&r);
    }

    // Reassembles the per-token decision for one sub-round.
    RoutingDecision decision(uint32_t sequence, uint32_t chunk, uint32_t step,
                             RouterKind kind, size_t tokens) const {
        auto it = by_key_.find({sequence, chunk, step, kind == RouterKind::ffn});
        if (it == by_key_.end())
            throw std::runtime_error("trace replay: no records for chunk " +
                                     std::to_string(chunk) + " step " +
                                     std::to_string(step));
        RoutingDecision d;
        d.step = step;
        d.kind = kind;
        d.indices.resize(tokens);
        d.gates.resize(tokens);
        for (const TraceRecord* r : it->second) {
            if (r->token >= tokens)
                throw std::runtime_error("trace replay: token index out of range");
            d.indices[r->token] = r->indices;
            d.gates[r->token] = r->gates;
        }
        for (size_t t = 0; t < tokens; ++t)
            if (d.indices[t].empty())
                throw std::runtime_error("trace replay: missing token " + std::to_string(t));
        return d;
    }

private:
    std::map<std::tuple<uint32_t, uint32_t, uint32_t, bool>,
             std::vector<const TraceRecord*>>
        by_key_;
};

}  // namespace mom
