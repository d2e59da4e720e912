#pragma once

// Trace CSV: one record per line with ';'-packed index and gate lists.
// Gates print with max_digits10 so a written trace replays bit-exactly.
// A '#'-prefixed header line carries the pool geometry.

#include <iomanip>
#include <sstream>
#include <string>

#include "mom/trace.hpp"
#include "mom/training.hpp"

namespace mom {

inline std::string trace_to_csv(const AssemblyTrace& trace) {
    std::ostringstream os;
    os << "# attn_choices=" << trace.attn_choices << " ffn_choices=" << trace.ffn_choices
       << " attn_skip=" << int(trace.attn_has_skip) << " ffn_skip=" << int(trace.ffn_has_skip)
       << "\n";
    os << "sequence,token,chunk,step,kind,indices,gates\n";
    os << std::setprecision(17);
    for (const auto& r : trace.records) {
        os << r.sequence << "," << r.token << "," << r.chunk << "," << r.step << ","
           << (r.kind == RouterKind::attention ? 'A' : 'F') << ",";
        for (size_t i = 0; i < r.indices.size(); ++i) os << (i ? ";" : "") << r.indices[i];
        os << ",";
        for (size_t i = 0; i < r.gates.size(); ++i) os << (i ? ";" : "") << r.gates[i];
        os << "\n";
    }
    return os.str();
}

inline AssemblyTrace trace_from_csv(std::istream& in) {
    AssemblyTrace trace;
    std::string line;
    size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("trace csv line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string kv;
            while (hs >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = kv.substr(0, eq);
                const std::string value = kv.substr(eq + 1);
                if (key == "attn_choices") trace.attn_choices = std::stoul(value);
                else if (key == "ffn_choices") trace.ffn_choices = std::stoul(value);
                else if (key == "attn_skip") trace.attn_has_skip = value == "1";
                else if (key == "ffn_skip") trace.ffn_has_skip = value == "1";
            }
            continue;
        }
        if (line.rfind("sequence,", 0) == 0) continue;  // column header
        std::istringstream ls(line);
        std::string field;
        TraceRecord r;
        auto next_field = [&]() {
            if (!std::getline(ls, field, ',')) fail("missing field");
            return field;
        };
        r.sequence = uint32_t(std::stoul(next_field()));
        r.token = uint32_t(std::stoul(next_field()));
        r.chunk = uint32_t(std::stoul(next_field()));
        r.step = uint32_t(std::stoul(next_field()));
        const std::string kind = next_field();
        if (kind == "A") r.kind = RouterKind::attention;
        else if (kind == "F") r.kind = RouterKind::ffn;
        else fail("bad kind '" + kind + "'");
        std::istringstream idx(next_field());
        std::string item;
        while (std::getline(idx, item, ';')) r.indices.push_back(std::stoi(item));
        std::istringstream gts(next_field());
        while (std::getline(gts, item, ';')) r.gates.push_back(std::stod(item));
        if (r.indices.empty() || r.indices.size() != r.gates.size())
            fail("index/gate arity mismatch");
        trace.records.push_back(std::move(r));
    }
    return trace;
}

// Append-only metrics log lines: step=<n> phase=<p> loss=<f> lr=<f>
// with val_loss appended on evaluation steps.
inline std::string format_metrics(const StepMetrics& m) {
    char buf[160];
    int n = std::snprintf(buf, sizeof(buf), "step=%zu phase=%d loss=%.6f lr=%.8g", m.step,
                          m.phase, m.loss, m.lr);
    std::string line(buf, size_t(n));
    if (m.val_loss) {
        n = std::snprintf(buf, sizeof(buf), " val_loss=%.6f", *m.val_loss);
        line.append(buf, size_t(n));
    }
    return line;
}

}  // namespace mom
